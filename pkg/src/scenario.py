"""
情境設定

一個 JSON 檔 = 一個情境；欄位名稱帶單位。缺少的欄位使用內建預設值，
所有檢查錯誤以「區段.欄位: 訊息」收集後一次回報。
"""
import copy
import hashlib
import json
import math
import os
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from src.arrivals import ArrivalProcess
from src.baseline import GippsParams, TrafficLight, build_signals
from src.engine import EngineOptions
from src.kuramoto import KuramotoParams
from src.metrics import FuelModel, LongitudinalParams, load_fuel_table
from src.network import NetworkConfig, build_grid_network
from src.planner import PlannerBounds

logger = logging.getLogger(__name__)

ENV_OUTPUT_ROOT = "KTS_OUTPUT_ROOT"
ENV_LOG_DIR = "KTS_LOG_DIR"
ENV_SEED = "KTS_SEED"

DEFAULT_SCENARIO: Dict[str, Dict[str, Any]] = {
    "network": {
        "rows": 3,
        "cols": 3,
        "segment_length_m": 90.0,
        "box_length_m": 10.0,
        "entry_length_m": 190.0,
        "wavelength_m": 20.0,
        "nominal_speed_mps": 10.0,
        "offset_horizontal_rad": 0.0,
        "offset_vertical_rad": math.pi,
        "direction_pattern": "uniform",
    },
    "kuramoto": {
        "coupling_gain_rad_per_s": 2.0,
        "reset_margin_rad": 1e-3,
        "time_step_s": 0.1,
    },
    "planner": {
        "v_min_mps": 0.0,
        "v_max_mps": 15.0,
        "a_min_mps2": -4.0,
        "a_max_mps2": 3.0,
        "min_gap_m": 7.0,
        "qp_step_s": 0.1,
        "sample_step_s": 0.1,
        "integration": "exact",
    },
    "arrivals": {
        "rate_veh_per_h": 750.0,
        "turn_probability": 0.2,
        "seed": 1,
        "duration_s": 600.0,
        "drain_time_s": 120.0,
    },
    "baseline": {
        "desired_speed_mps": 10.0,
        "max_accel_mps2": 1.7,
        "comfortable_decel_mps2": -3.4,
        "leader_decel_estimate_mps2": -3.0,
        "reaction_time_s": 0.8,
        "effective_length_m": 6.5,
        "stop_margin_m": 0.4,
        "cycle_s": 60.0,
        "green_s": 25.0,
        "clearing_s": 5.0,
        "offset_step_s": 10.0,
    },
    "metrics": {
        "window_start": 100,
        "window_end": 600,
        "mass_kg": 1200.0,
        "drag_area_m2": 0.6,
        "air_density_kg_per_m3": 1.225,
        "rolling_coefficient": 0.01,
        "gravity_mps2": 9.81,
        "driveline_efficiency": 0.9,
        "idle_fuel_rate_g_per_s": 0.15,
        "marginal_fuel_rate_g_per_kj": 0.07,
        "fuel_table_csv": None,
    },
    "audit": {
        "clearance_s": None,
        "gap_tolerance_m": 0.1,
        "energy_balance_tolerance_pct": 1.0,
    },
    "output": {
        "directory": "runs",
        "log_every_n_ticks": 1,
    },
}


class ScenarioConfigError(ValueError):
    """情境設定錯誤 (列出所有欄位路徑)"""

    def __init__(self, errors: List[str]):
        self.errors = list(errors)
        super().__init__("情境設定錯誤:\n  " + "\n  ".join(self.errors))


def _merge(defaults: Dict, overrides: Dict, path: str, unknown: List[str]) -> Dict:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            unknown.append(where)
            continue
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                unknown.append(f"{where} (應為物件)")
                continue
            merged[key] = _merge(defaults[key], value, where, unknown)
        else:
            merged[key] = value
    return merged


@dataclass
class ScenarioConfig:
    """已驗證的情境設定；由各區段建立對應模組的參數物件"""
    data: Dict[str, Dict[str, Any]]
    source: Optional[str] = None

    def section(self, name: str) -> Dict[str, Any]:
        return self.data[name]

    @property
    def seed(self) -> int:
        return int(self.data["arrivals"]["seed"])

    @property
    def duration(self) -> float:
        return float(self.data["arrivals"]["duration_s"])

    @property
    def drain_time(self) -> float:
        return float(self.data["arrivals"]["drain_time_s"])

    @property
    def window(self):
        m = self.data["metrics"]
        return int(m["window_start"]), int(m["window_end"])

    def with_overrides(self, seed: Optional[int] = None, duration: Optional[float] = None,
                       output_dir: Optional[str] = None, log_every: Optional[int] = None) -> "ScenarioConfig":
        data = copy.deepcopy(self.data)
        if seed is not None:
            data["arrivals"]["seed"] = int(seed)
        if duration is not None:
            data["arrivals"]["duration_s"] = float(duration)
        if output_dir is not None:
            data["output"]["directory"] = output_dir
        if log_every is not None:
            data["output"]["log_every_n_ticks"] = int(log_every)
        errors = validate_scenario(data)
        if errors:
            raise ScenarioConfigError(errors)
        return ScenarioConfig(data=data, source=self.source)

    # ========== 參數物件 ==========

    def build_network(self, strict: bool = True) -> NetworkConfig:
        n = self.data["network"]
        return build_grid_network(
            rows=int(n["rows"]), cols=int(n["cols"]), segment_length=float(n["segment_length_m"]),
            box_length=float(n["box_length_m"]), entry_length=float(n["entry_length_m"]),
            wavelength=float(n["wavelength_m"]), nominal_speed=float(n["nominal_speed_mps"]),
            offset_horizontal=float(n["offset_horizontal_rad"]), offset_vertical=float(n["offset_vertical_rad"]),
            direction_pattern=n["direction_pattern"], strict=strict,
        )

    def kuramoto_params(self) -> KuramotoParams:
        k = self.data["kuramoto"]
        n = self.data["network"]
        return KuramotoParams(
            coupling_gain=float(k["coupling_gain_rad_per_s"]),
            natural_frequency=2.0 * math.pi * float(n["nominal_speed_mps"]) / float(n["wavelength_m"]),
            reset_margin=float(k["reset_margin_rad"]), time_step=float(k["time_step_s"]),
        )

    def planner_bounds(self) -> PlannerBounds:
        p = self.data["planner"]
        return PlannerBounds(
            v_min=float(p["v_min_mps"]), v_max=float(p["v_max_mps"]), a_min=float(p["a_min_mps2"]),
            a_max=float(p["a_max_mps2"]), min_gap=float(p["min_gap_m"]), qp_step=float(p["qp_step_s"]),
            sample_step=float(p["sample_step_s"]),
        )

    def arrival_process(self) -> ArrivalProcess:
        a = self.data["arrivals"]
        return ArrivalProcess(rate_veh_per_h=float(a["rate_veh_per_h"]),
                              turn_probability=float(a["turn_probability"]), seed=int(a["seed"]))

    def engine_options(self, strategy: str) -> EngineOptions:
        audit = self.data["audit"]
        gap = float(self.data["baseline"]["effective_length_m"]) if strategy == "baseline" else None
        return EngineOptions(integration=self.data["planner"]["integration"],
                             clearance_s=None if audit["clearance_s"] is None else float(audit["clearance_s"]),
                             gap_tolerance_m=float(audit["gap_tolerance_m"]), audit_min_gap_m=gap)

    def gipps_params(self) -> GippsParams:
        b = self.data["baseline"]
        return GippsParams(
            desired_speed=float(b["desired_speed_mps"]), max_accel=float(b["max_accel_mps2"]),
            comfortable_decel=float(b["comfortable_decel_mps2"]),
            leader_decel_estimate=float(b["leader_decel_estimate_mps2"]),
            reaction_time=float(b["reaction_time_s"]), effective_length=float(b["effective_length_m"]),
            stop_margin=float(b["stop_margin_m"]),
        )

    def signals(self, network: NetworkConfig) -> Dict[str, TrafficLight]:
        b = self.data["baseline"]
        return build_signals(network, cycle=float(b["cycle_s"]), green=float(b["green_s"]),
                             clearing=float(b["clearing_s"]), offset_step=float(b["offset_step_s"]))

    def longitudinal_params(self) -> LongitudinalParams:
        m = self.data["metrics"]
        return LongitudinalParams(
            mass=float(m["mass_kg"]), drag_area=float(m["drag_area_m2"]),
            air_density=float(m["air_density_kg_per_m3"]), rolling_coefficient=float(m["rolling_coefficient"]),
            gravity=float(m["gravity_mps2"]), driveline_efficiency=float(m["driveline_efficiency"]),
        )

    def fuel_model(self) -> FuelModel:
        m = self.data["metrics"]
        idle = float(m["idle_fuel_rate_g_per_s"])
        marginal = float(m["marginal_fuel_rate_g_per_kj"])
        table = m.get("fuel_table_csv")
        if table:
            path = table
            if self.source and not os.path.isabs(path):
                path = os.path.join(os.path.dirname(os.path.abspath(self.source)), path)
            return load_fuel_table(path, idle_rate=idle, marginal_rate=marginal)
        return FuelModel(idle_rate=idle, marginal_rate=marginal)


# ========== 驗證 ==========

def _check(errors: List[str], condition: bool, path: str, message: str):
    if not condition:
        errors.append(f"{path}: {message}")


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def validate_scenario(data: Dict[str, Dict[str, Any]]) -> List[str]:
    """檢查所有欄位，回傳錯誤清單 (空清單表示通過)"""
    errors: List[str] = []
    for section, fields in data.items():
        for key, value in fields.items():
            default = DEFAULT_SCENARIO[section][key]
            if _is_number(default) and not _is_number(value):
                errors.append(f"{section}.{key}: 應為數值 (收到 {value!r})")
    if errors:
        return errors

    n, k, p, a, b, m, au, o = (data[s] for s in ("network", "kuramoto", "planner", "arrivals", "baseline",
                                                   "metrics", "audit", "output"))
    _check(errors, int(n["rows"]) >= 1 and n["rows"] == int(n["rows"]), "network.rows", "必須為 ≥ 1 的整數")
    _check(errors, int(n["cols"]) >= 1 and n["cols"] == int(n["cols"]), "network.cols", "必須為 ≥ 1 的整數")
    for key in ("segment_length_m", "box_length_m", "entry_length_m", "wavelength_m", "nominal_speed_mps"):
        _check(errors, n[key] > 0, f"network.{key}", "必須 > 0")
    _check(errors, n["direction_pattern"] in ("uniform", "alternating"), "network.direction_pattern",
           "必須為 uniform 或 alternating")

    _check(errors, k["coupling_gain_rad_per_s"] >= 0, "kuramoto.coupling_gain_rad_per_s", "必須 ≥ 0")
    _check(errors, k["reset_margin_rad"] > 0, "kuramoto.reset_margin_rad", "必須 > 0")
    _check(errors, k["time_step_s"] > 0, "kuramoto.time_step_s", "必須 > 0")

    _check(errors, p["v_min_mps"] <= p["v_max_mps"], "planner.v_min_mps", "不可大於 v_max_mps")
    _check(errors, p["a_min_mps2"] <= p["a_max_mps2"], "planner.a_min_mps2", "不可大於 a_max_mps2")
    _check(errors, p["min_gap_m"] > 0, "planner.min_gap_m", "必須 > 0")
    _check(errors, p["qp_step_s"] > 0, "planner.qp_step_s", "必須 > 0")
    _check(errors, p["sample_step_s"] > 0, "planner.sample_step_s", "必須 > 0")
    _check(errors, p["integration"] in ("exact", "euler"), "planner.integration", "必須為 exact 或 euler")
    if _is_number(n["nominal_speed_mps"]):
        _check(errors, p["v_min_mps"] <= n["nominal_speed_mps"] <= p["v_max_mps"], "network.nominal_speed_mps",
               "必須介於 planner.v_min_mps 與 planner.v_max_mps")

    _check(errors, a["rate_veh_per_h"] >= 0, "arrivals.rate_veh_per_h", "必須 ≥ 0")
    _check(errors, 0.0 <= a["turn_probability"] <= 1.0, "arrivals.turn_probability", "必須介於 [0, 1]")
    _check(errors, isinstance(a["seed"], int) and not isinstance(a["seed"], bool) and a["seed"] >= 0,
           "arrivals.seed", "必須為 ≥ 0 的整數")
    _check(errors, a["duration_s"] >= 0, "arrivals.duration_s", "必須 ≥ 0")
    _check(errors, a["drain_time_s"] >= 0, "arrivals.drain_time_s", "必須 ≥ 0")

    _check(errors, b["desired_speed_mps"] > 0, "baseline.desired_speed_mps", "必須 > 0")
    _check(errors, b["max_accel_mps2"] > 0, "baseline.max_accel_mps2", "必須 > 0")
    _check(errors, b["comfortable_decel_mps2"] < 0, "baseline.comfortable_decel_mps2", "必須 < 0")
    _check(errors, b["leader_decel_estimate_mps2"] < 0, "baseline.leader_decel_estimate_mps2", "必須 < 0")
    _check(errors, b["reaction_time_s"] > 0, "baseline.reaction_time_s", "必須 > 0")
    _check(errors, b["effective_length_m"] > 0, "baseline.effective_length_m", "必須 > 0")
    _check(errors, b["stop_margin_m"] >= 0, "baseline.stop_margin_m", "必須 ≥ 0")
    _check(errors, abs(2 * b["green_s"] + 2 * b["clearing_s"] - b["cycle_s"]) <= 1e-9, "baseline.cycle_s",
           "必須等於 2·green_s + 2·clearing_s")

    _check(errors, 1 <= m["window_start"] <= m["window_end"], "metrics.window_start",
           "必須滿足 1 ≤ window_start ≤ window_end")
    for key in ("mass_kg", "air_density_kg_per_m3", "gravity_mps2", "idle_fuel_rate_g_per_s"):
        _check(errors, m[key] > 0, f"metrics.{key}", "必須 > 0")
    for key in ("drag_area_m2", "rolling_coefficient", "marginal_fuel_rate_g_per_kj"):
        _check(errors, m[key] >= 0, f"metrics.{key}", "必須 ≥ 0")
    _check(errors, 0 < m["driveline_efficiency"] <= 1, "metrics.driveline_efficiency", "必須介於 (0, 1]")
    _check(errors, m["fuel_table_csv"] is None or isinstance(m["fuel_table_csv"], str), "metrics.fuel_table_csv",
           "必須為檔案路徑或 null")

    _check(errors, au["clearance_s"] is None or (_is_number(au["clearance_s"]) and au["clearance_s"] > 0),
           "audit.clearance_s", "必須 > 0 或 null (null 時取 路口長度 / 名目速度)")
    _check(errors, au["gap_tolerance_m"] >= 0, "audit.gap_tolerance_m", "必須 ≥ 0")
    _check(errors, au["energy_balance_tolerance_pct"] > 0, "audit.energy_balance_tolerance_pct", "必須 > 0")
    _check(errors, isinstance(o["directory"], str) and o["directory"] != "", "output.directory", "必須為非空字串")
    _check(errors, isinstance(o["log_every_n_ticks"], int) and o["log_every_n_ticks"] >= 1,
           "output.log_every_n_ticks", "必須為 ≥ 1 的整數")
    return errors


def scenario_from_dict(raw: Dict[str, Any], source: Optional[str] = None, apply_env: bool = True) -> ScenarioConfig:
    """合併預設值、套用環境變數並驗證"""
    if not isinstance(raw, dict):
        raise ScenarioConfigError(["<root>: 設定檔最外層必須為物件"])
    unknown: List[str] = []
    data = _merge(DEFAULT_SCENARIO, raw, "", unknown)
    errors = [f"{path}: 未知的欄位" for path in unknown]

    if apply_env:
        env_seed = os.getenv(ENV_SEED)
        if env_seed:
            try:
                data["arrivals"]["seed"] = int(env_seed)
            except ValueError:
                errors.append(f"{ENV_SEED}: 必須為整數 (收到 {env_seed!r})")
        env_root = os.getenv(ENV_OUTPUT_ROOT)
        if env_root:
            data["output"]["directory"] = env_root

    errors.extend(validate_scenario(data))
    if errors:
        raise ScenarioConfigError(errors)
    return ScenarioConfig(data=data, source=source)


def load_scenario(path: str, apply_env: bool = True) -> ScenarioConfig:
    """
    讀取情境檔

    JSON 語法錯誤以行/欄回報；環境變數 (.env) 覆寫檔案內容
    """
    load_dotenv()
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioConfigError([f"{path}:{e.lineno}:{e.colno}: JSON 語法錯誤 ({e.msg})"]) from e
    except OSError as e:
        raise ScenarioConfigError([f"{path}: 無法讀取 ({e})"]) from e
    config = scenario_from_dict(raw, source=path, apply_env=apply_env)
    logger.info(f"載入情境 {path} (種子 {config.seed}, 模擬 {config.duration:.0f} s)")
    return config


def default_scenario() -> ScenarioConfig:
    return ScenarioConfig(data=copy.deepcopy(DEFAULT_SCENARIO))


def config_hash(config: ScenarioConfig) -> str:
    """設定內容的 sha256 (鍵排序後的標準 JSON)"""
    canonical = json.dumps(config.data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
