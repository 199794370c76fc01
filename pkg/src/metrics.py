"""
油耗、能量損失與延滯指標
由逐步軌跡紀錄計算每車指標，並產生兩種策略的比較報告
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["vehicle_id", "strategy", "completed", "fuel_g", "delay_s_per_m", "brake_kJ", "drag_kJ",
                  "rolling_kJ", "distance_m", "travel_time_s", "propulsive_kJ", "kinetic_kJ",
                  "balance_residual_kJ", "balance_residual_pct"]

DELAY_FLOOR = -1e-6


class ReportWindowError(ValueError):
    """比較視窗超出可用車輛數"""


class IncompleteRouteError(ValueError):
    """車輛未完成路線，不列入指標"""


@dataclass(frozen=True)
class LongitudinalParams:
    """縱向動力學參數：質量、風阻面積、空氣密度、滾動阻力係數、重力加速度、傳動效率"""
    mass: float = 1200.0
    drag_area: float = 0.6
    air_density: float = 1.225
    rolling_coefficient: float = 0.01
    gravity: float = 9.81
    driveline_efficiency: float = 0.9

    def __post_init__(self):
        for name in ("mass", "air_density", "gravity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} 必須 > 0")
        # 允許關閉風阻或滾阻 (動能驗證用)
        if self.drag_area < 0 or self.rolling_coefficient < 0:
            raise ValueError("風阻面積與滾動阻力係數必須 ≥ 0")
        if not 0.0 < self.driveline_efficiency <= 1.0:
            raise ValueError(f"傳動效率必須介於 (0, 1] (收到 {self.driveline_efficiency})")


@dataclass(frozen=True)
class FuelModel:
    """
    引擎油耗模型

    Willans 直線：rate = k₀ + k₁·P_eng (g/s，P 以 kW 計)；
    提供 (功率 kW, 油耗 g/s) 表格時改以線性內插
    """
    idle_rate: float = 0.15
    marginal_rate: float = 0.07
    table_power_kw: Optional[Tuple[float, ...]] = None
    table_rate_g_per_s: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if self.table_power_kw is None:
            if self.idle_rate <= 0 or self.marginal_rate < 0:
                raise ValueError("k₀ 必須 > 0 且 k₁ 必須 ≥ 0")
            return
        powers = np.asarray(self.table_power_kw, dtype=float)
        rates = np.asarray(self.table_rate_g_per_s, dtype=float)
        if powers.size < 2 or powers.size != rates.size:
            raise ValueError("油耗表至少需要兩筆等長的 (功率, 油耗) 資料")
        if np.any(np.diff(powers) <= 0):
            raise ValueError("油耗表功率必須嚴格遞增")
        if np.any(np.diff(rates) < 0):
            raise ValueError("油耗必須隨功率單調不減")
        if np.interp(0.0, powers, rates) <= 0:
            raise ValueError("油耗表在 0 kW 的油耗必須 > 0")

    @property
    def tabulated(self) -> bool:
        return self.table_power_kw is not None

    def rate(self, engine_power_kw):
        p = np.maximum(np.asarray(engine_power_kw, dtype=float), 0.0)
        if self.tabulated:
            return np.interp(p, self.table_power_kw, self.table_rate_g_per_s)
        return self.idle_rate + self.marginal_rate * p


def load_fuel_table(path: str, idle_rate: float = 0.15, marginal_rate: float = 0.07) -> FuelModel:
    """讀取 CSV 油耗表 (欄位 power_kw, fuel_rate_g_per_s)"""
    df = pd.read_csv(path)
    missing = {"power_kw", "fuel_rate_g_per_s"} - set(df.columns)
    if missing:
        raise ValueError(f"油耗表 {path} 缺少欄位: {sorted(missing)}")
    df = df.sort_values("power_kw")
    logger.info(f"載入油耗表 {path}: {len(df)} 筆")
    return FuelModel(idle_rate=idle_rate, marginal_rate=marginal_rate,
                     table_power_kw=tuple(df["power_kw"].astype(float)),
                     table_rate_g_per_s=tuple(df["fuel_rate_g_per_s"].astype(float)))


# ========== 力與功率 ==========

def _forces(v, a, params: LongitudinalParams):
    v = np.asarray(v, dtype=float)
    inertia = params.mass * np.asarray(a, dtype=float)
    drag = 0.5 * params.air_density * params.drag_area * v * v
    rolling = np.where(v > 0, params.rolling_coefficient * params.mass * params.gravity, 0.0)
    return inertia, drag, rolling


def wheel_power(v, a, params: LongitudinalParams):
    """輪端功率 (kW，帶號)：P = (m·a + ½ρC_dA_f·v² + C_rr·m·g)·v"""
    inertia, drag, rolling = _forces(v, a, params)
    power = (inertia + drag + rolling) * np.asarray(v, dtype=float) / 1000.0
    return float(power) if np.ndim(power) == 0 else power


def engine_fuel_rate(p_wheel_kw, efficiency: float, model: FuelModel):
    """P_eng = max(0, P_wheel)/η；煞車或怠速時只計 k₀"""
    p_engine = np.maximum(np.asarray(p_wheel_kw, dtype=float), 0.0) / efficiency
    rate = model.rate(p_engine)
    return float(rate) if np.ndim(rate) == 0 else rate


@dataclass
class EnergyBreakdown:
    """能量分解 (kJ)：正推進功 = 動能變化 + 煞車 + 風阻 + 滾阻"""
    brake: float
    drag: float
    rolling: float
    propulsive: float
    kinetic: float
    fuel: float = 0.0

    @property
    def balance_residual(self) -> float:
        return self.propulsive - (self.kinetic + self.brake + self.drag + self.rolling)

    @property
    def balance_residual_pct(self) -> float:
        scale = max(self.propulsive, 1e-9)
        return 100.0 * abs(self.balance_residual) / scale


def energy_losses(times: Sequence[float], speeds: Sequence[float], params: LongitudinalParams,
                  fuel_model: Optional[FuelModel] = None) -> EnergyBreakdown:
    """
    逐區間積分能量損失

    每個取樣區間以平均速度 v̄ 與等效加速度 Δv/Δt 計算推進力，
    動能變化因此與推進功精確平衡
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(speeds, dtype=float)
    if t.size < 2:
        return EnergyBreakdown(0.0, 0.0, 0.0, 0.0, 0.0)
    dt = np.diff(t)
    valid = dt > 0
    v_mean = 0.5 * (v[1:] + v[:-1])
    a_eff = np.where(valid, np.diff(v) / np.where(valid, dt, 1.0), 0.0)
    inertia, drag, rolling = _forces(v_mean, a_eff, params)
    propulsion = inertia + drag + rolling
    work = propulsion * v_mean * dt

    breakdown = EnergyBreakdown(
        brake=float(np.sum(np.maximum(-work, 0.0))) / 1000.0,
        drag=float(np.sum(drag * v_mean * dt)) / 1000.0,
        rolling=float(np.sum(rolling * v_mean * dt)) / 1000.0,
        propulsive=float(np.sum(np.maximum(work, 0.0))) / 1000.0,
        kinetic=0.5 * params.mass * (v[-1] ** 2 - v[0] ** 2) / 1000.0,
    )
    if fuel_model is not None:
        p_wheel = propulsion * v_mean / 1000.0
        breakdown.fuel = float(np.sum(engine_fuel_rate(p_wheel, params.driveline_efficiency, fuel_model) * dt))
    return breakdown


def delay_time(travel_time: Optional[float], distance: float, nominal_speed: float) -> float:
    """(行程時間 - 距離/vₙ)/距離，單位 s/m；數值誤差造成的負值下限為 -1e-6"""
    if travel_time is None or distance <= 0:
        raise IncompleteRouteError("車輛未完成路線")
    return max((travel_time - distance / nominal_speed) / distance, DELAY_FLOOR)


# ========== 每車指標 ==========

@dataclass
class VehicleMetrics:
    vehicle_id: int
    strategy: str
    completed: bool
    fuel_g: float = np.nan
    delay_s_per_m: float = np.nan
    brake_kJ: float = np.nan
    drag_kJ: float = np.nan
    rolling_kJ: float = np.nan
    distance_m: float = np.nan
    travel_time_s: float = np.nan
    propulsive_kJ: float = np.nan
    kinetic_kJ: float = np.nan
    balance_residual_kJ: float = np.nan
    balance_residual_pct: float = np.nan

    def as_row(self) -> List:
        return [getattr(self, c) for c in METRIC_COLUMNS]


def vehicle_metrics(vehicle, strategy: str, nominal_speed: float, params: LongitudinalParams,
                    fuel_model: FuelModel) -> VehicleMetrics:
    """由車輛的逐步紀錄計算指標；未完成路線的車輛只標記 completed=False"""
    if not vehicle.completed:
        return VehicleMetrics(vehicle_id=vehicle.id, strategy=strategy, completed=False)
    times = [row[1] for row in vehicle.log]
    speeds = [row[4] for row in vehicle.log]
    energy = energy_losses(times, speeds, params, fuel_model)
    travel_time = vehicle.exit_time - vehicle.request_time
    return VehicleMetrics(
        vehicle_id=vehicle.id, strategy=strategy, completed=True,
        fuel_g=energy.fuel,
        delay_s_per_m=delay_time(travel_time, vehicle.route_distance, nominal_speed),
        brake_kJ=energy.brake, drag_kJ=energy.drag, rolling_kJ=energy.rolling,
        distance_m=vehicle.route_distance, travel_time_s=travel_time,
        propulsive_kJ=energy.propulsive, kinetic_kJ=energy.kinetic,
        balance_residual_kJ=energy.balance_residual, balance_residual_pct=energy.balance_residual_pct,
    )


def metrics_frame(vehicles: Iterable, strategy: str, nominal_speed: float, params: LongitudinalParams,
                  fuel_model: FuelModel, n_arrivals: Optional[int] = None) -> pd.DataFrame:
    """
    每車指標表

    n_arrivals 給定時，尚未進入路網的到達也列為未完成，使表格涵蓋完整到達流
    """
    rows = {}
    for vehicle in vehicles:
        rows[vehicle.id] = vehicle_metrics(vehicle, strategy, nominal_speed, params, fuel_model).as_row()
    if n_arrivals is not None:
        for vid in range(n_arrivals):
            if vid not in rows:
                rows[vid] = VehicleMetrics(vehicle_id=vid, strategy=strategy, completed=False).as_row()
    df = pd.DataFrame([rows[k] for k in sorted(rows)], columns=METRIC_COLUMNS)
    return df


def energy_balance_audit(metrics: pd.DataFrame, tolerance_pct: float = 1.0) -> List[int]:
    """能量平衡殘差超過 tolerance_pct 的車輛"""
    done = metrics[metrics["completed"].astype(bool)]
    bad = done[done["balance_residual_pct"] > tolerance_pct]
    if not bad.empty:
        logger.error(f"能量平衡未閉合: {len(bad)} 輛 (門檻 {tolerance_pct}%)")
    return [int(v) for v in bad["vehicle_id"]]


# ========== 比較報告 ==========

@dataclass
class ComparisonReport:
    """候選策略相對參考策略的比較 (視窗內兩者皆完成的車輛)"""
    candidate: str
    reference: str
    window: Tuple[int, int]
    vehicles: int
    means: Dict[str, Dict[str, float]]
    std: Dict[str, Dict[str, float]]
    reductions_pct: Dict[str, float]
    losses_kJ: Dict[str, Dict[str, float]]
    point_cloud: pd.DataFrame = field(repr=False, default_factory=pd.DataFrame)

    @property
    def largest_loss_reduction(self) -> str:
        deltas = {k: self.losses_kJ[self.reference][k] - self.losses_kJ[self.candidate][k]
                  for k in ("brake_kJ", "drag_kJ", "rolling_kJ")}
        return max(deltas, key=deltas.get)

    def loss_frame(self) -> pd.DataFrame:
        rows = []
        for component in ("brake_kJ", "drag_kJ", "rolling_kJ"):
            ref = self.losses_kJ[self.reference][component]
            cand = self.losses_kJ[self.candidate][component]
            rows.append((component, ref, cand, ref - cand, _reduction(ref, cand)))
        return pd.DataFrame(rows, columns=["component", f"{self.reference}_kJ", f"{self.candidate}_kJ",
                                           "reduction_kJ", "reduction_pct"])

    def to_dict(self) -> Dict:
        return {
            "candidate": self.candidate,
            "reference": self.reference,
            "window": list(self.window),
            "vehicles": self.vehicles,
            "means": self.means,
            "std": self.std,
            "reductions_pct": self.reductions_pct,
            "losses_kJ": self.losses_kJ,
            "largest_loss_reduction": self.largest_loss_reduction,
        }


def _reduction(reference: float, candidate: float) -> float:
    if reference == 0:
        return 0.0
    return 100.0 * (reference - candidate) / reference


def aggregate_report(candidate: pd.DataFrame, reference: pd.DataFrame,
                     window: Tuple[int, int] = (100, 600),
                     candidate_name: Optional[str] = None,
                     reference_name: Optional[str] = None) -> ComparisonReport:
    """
    比較兩次執行

    window 以 1 起算的車輛序號 (含端點)；只比較兩次執行中都完成的車輛
    """
    start, end = window
    if start < 1 or end < start:
        raise ReportWindowError(f"無效的車輛視窗 {window}")
    for name, df in (("candidate", candidate), ("reference", reference)):
        if len(df) < end:
            raise ReportWindowError(f"{name} 只有 {len(df)} 筆到達，少於視窗終點 {end}")
    done = (set(candidate.loc[candidate["completed"].astype(bool), "vehicle_id"])
            & set(reference.loc[reference["completed"].astype(bool), "vehicle_id"]))
    if len(done) < end:
        raise ReportWindowError(f"兩次執行都完成的車輛只有 {len(done)} 輛，少於視窗終點 {end}")

    cand_name = candidate_name or str(candidate["strategy"].iloc[0])
    ref_name = reference_name or str(reference["strategy"].iloc[0])
    if cand_name == ref_name:
        ref_name = f"{ref_name}_reference"

    ids = range(start - 1, end)
    cand = candidate[candidate["vehicle_id"].isin(ids) & candidate["completed"].astype(bool)].set_index("vehicle_id")
    ref = reference[reference["vehicle_id"].isin(ids) & reference["completed"].astype(bool)].set_index("vehicle_id")
    common = cand.index.intersection(ref.index).sort_values()
    if len(common) == 0:
        raise ReportWindowError(f"視窗 {window} 內沒有兩次執行都完成的車輛")
    cand = cand.loc[common]
    ref = ref.loc[common]

    keys = ("fuel_g", "delay_s_per_m")
    means = {cand_name: {k: float(cand[k].mean()) for k in keys},
             ref_name: {k: float(ref[k].mean()) for k in keys}}
    std = {cand_name: {k: float(cand[k].std(ddof=0)) for k in keys},
           ref_name: {k: float(ref[k].std(ddof=0)) for k in keys}}
    reductions = {k: _reduction(means[ref_name][k], means[cand_name][k]) for k in keys}
    losses = {name: {k: float(df[k].sum()) for k in ("brake_kJ", "drag_kJ", "rolling_kJ")}
              for name, df in ((cand_name, cand), (ref_name, ref))}
    for k in ("brake_kJ", "drag_kJ", "rolling_kJ"):
        reductions[k] = _reduction(losses[ref_name][k], losses[cand_name][k])

    cloud = pd.DataFrame({
        "vehicle_id": common.astype(int),
        f"{cand_name}_fuel_g": cand["fuel_g"].to_numpy(),
        f"{cand_name}_delay_s_per_m": cand["delay_s_per_m"].to_numpy(),
        f"{ref_name}_fuel_g": ref["fuel_g"].to_numpy(),
        f"{ref_name}_delay_s_per_m": ref["delay_s_per_m"].to_numpy(),
    })

    report = ComparisonReport(candidate=cand_name, reference=ref_name, window=(start, end), vehicles=len(common),
                              means=means, std=std, reductions_pct=reductions, losses_kJ=losses,
                              point_cloud=cloud)
    logger.info(f"比較 {cand_name} vs {ref_name}: {len(common)} 輛, 油耗降低 {reductions['fuel_g']:.1f}%, "
                f"延滯降低 {reductions['delay_s_per_m']:.1f}%")
    return report
