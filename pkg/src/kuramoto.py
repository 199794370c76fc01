"""
Kuramoto 同步層
序參量、平均相位投影、間距重置、相位動態與到達時間預測
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

# r 低於此值時平均相位無定義
DEGENERATE_COHERENCE = 1e-9
# 投影剛好落在 ±π 邊界時取較小的 k (以圈數計的容差)
PROJECTION_TIE_TOL = 1e-9


@dataclass
class PhaseState:
    """單一車輛的相位狀態 (θ 與信標 Ψᵢ 皆為未包裹值)"""
    theta: float
    omega_n: float
    beacon: float = 0.0
    crossing_phase: float = 0.0


@dataclass(frozen=True)
class OrderParameter:
    """序參量 r·e^{iΨ}；r 為同調度，Ψ ∈ (-π, π]"""
    r: float
    psi: float

    @property
    def degenerate(self) -> bool:
        return self.r < DEGENERATE_COHERENCE


@dataclass(frozen=True)
class KuramotoParams:
    """耦合增益 K、自然頻率 ωₙ、重置餘量 ε 與積分步長 Δt"""
    coupling_gain: float = 2.0
    natural_frequency: float = math.pi
    reset_margin: float = 1e-3
    time_step: float = 0.1

    def __post_init__(self):
        if self.coupling_gain < 0:
            raise ValueError(f"耦合增益 K 必須 ≥ 0 (收到 {self.coupling_gain})")
        if self.reset_margin <= 0:
            raise ValueError(f"重置餘量 ε 必須 > 0 (收到 {self.reset_margin})")
        if self.time_step <= 0:
            raise ValueError(f"積分步長 Δt 必須 > 0 (收到 {self.time_step})")


def _wrap(x: float) -> float:
    return math.pi - (math.pi - x) % TWO_PI


def order_parameter(phases: Iterable[float]) -> OrderParameter:
    """
    計算序參量

    r·e^{iΨ} = (1/N)·Σ e^{iθⱼ}；r < 1e-9 時 Ψ 定義為 0
    """
    theta = np.asarray(list(phases) if not isinstance(phases, np.ndarray) else phases, dtype=float)
    if theta.size == 0:
        raise ValueError("序參量需要至少一個相位")
    # 固定順序求和，結果可重現
    re = float(np.mean(np.cos(theta)))
    im = float(np.mean(np.sin(theta)))
    r = math.hypot(re, im)
    if r < DEGENERATE_COHERENCE:
        return OrderParameter(r=r, psi=0.0)
    psi = math.atan2(im, re)
    if psi <= -math.pi:
        psi += TWO_PI
    return OrderParameter(r=r, psi=psi)


def project_mean_phase(psi: float, theta: float) -> float:
    """回傳最接近 θ 的 Ψ + 2kπ (|結果 - θ| ≤ π，邊界取較小的 k)"""
    k = math.ceil((theta - math.pi - psi) / TWO_PI - PROJECTION_TIE_TOL)
    return psi + TWO_PI * k


def spacing_reset(theta: float, leaders: Sequence[Tuple[float, float]],
                  margin: float = 1e-3) -> float:
    """
    間距重置：θᵢ′ = min({θᵢ} ∪ {Ψⱼ - π - ε})

    leaders 為同一路段上位於前方車輛的 (θⱼ, Ψⱼ)；重置後 Ψᵢ 不會與任何前車相同
    """
    bound = theta
    for _, beacon in leaders:
        bound = min(bound, beacon - math.pi - margin)
    return bound


def reset_to_free_slot(theta: float, psi: float, leader_beacons: Sequence[float], margin: float = 1e-3,
                       min_separation: float = 0.0) -> Tuple[float, float]:
    """
    對已換算到本車座標的前車信標做間距重置並投影

    前車來自其他路段時信標不在本車的 Ψ + 2kπ 格點上，投影後可能只落後 ε；
    此時每次再退一個週期，直到與所有前車信標相距 ≥ min_separation。回傳 (θ, Ψᵢ)
    """
    theta = spacing_reset(theta, [(math.nan, b) for b in leader_beacons], margin)
    beacon = project_mean_phase(psi, theta)
    while any(b - beacon < min_separation for b in leader_beacons):
        theta -= TWO_PI
        beacon -= TWO_PI
    return theta, beacon


def instantaneous_frequency(state: PhaseState, order: OrderParameter, params: KuramotoParams) -> float:
    return state.omega_n + order.r * params.coupling_gain * math.sin(state.beacon - state.theta)


def kuramoto_step(state: PhaseState, order: OrderParameter, params: KuramotoParams) -> float:
    """顯式 Euler：θ ← θ + Δt·(ωₙ + r·K·sin(Ψᵢ - θ))"""
    return state.theta + params.time_step * instantaneous_frequency(state, order, params)


def arrival_time(state: PhaseState) -> float:
    """預期到達時間 Tᵢ = (φ - Ψᵢ)/ωₙ (未包裹值)"""
    return (state.crossing_phase - state.beacon) / state.omega_n


class MeanPhaseTracker:
    """
    追蹤未包裹的網路平均相位

    逐步累加包裹後的 Ψ 增量；序參量退化或族群為空時，以 Ψ + ωₙΔt 外推
    """

    def __init__(self, omega_n: float, time_step: float):
        self.omega_n = omega_n
        self.time_step = time_step
        self.unwrapped: Optional[float] = None
        self.wrapped: float = 0.0

    def update(self, order: Optional[OrderParameter]) -> float:
        """輸入本步序參量 (族群為空時為 None)，回傳本步使用的包裹 Ψ"""
        if order is None or order.degenerate:
            if self.unwrapped is None:
                if order is None:
                    return self.wrapped
                psi = 0.0
            else:
                psi = _wrap(self.unwrapped + self.omega_n * self.time_step)
        else:
            psi = order.psi

        if self.unwrapped is None:
            self.unwrapped = psi
        else:
            self.unwrapped += _wrap(psi - self.wrapped)
        self.wrapped = psi
        return psi


@dataclass
class PopulationHistory:
    """孤立振盪器族群的積分紀錄"""
    times: np.ndarray
    phases: np.ndarray
    coherence: np.ndarray
    mean_phase: np.ndarray
    frequencies: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def converged_at(self, threshold: float = 0.999) -> Optional[float]:
        """r 首次達到門檻並維持到結束的時間"""
        above = self.coherence >= threshold
        if not above[-1]:
            return None
        below = np.flatnonzero(~above)
        idx = 0 if below.size == 0 else below[-1] + 1
        return float(self.times[idx])


def simulate_population(initial_phases: Sequence[float], params: KuramotoParams,
                        duration: float) -> PopulationHistory:
    """
    平均場 Kuramoto 族群積分 (相同自然頻率、全連接、不重置)

    回傳每步的相位、同調度 r、未包裹平均相位與瞬時頻率
    """
    theta = np.array(initial_phases, dtype=float)
    if theta.size == 0:
        raise ValueError("族群至少需要一個振盪器")
    n_steps = int(round(duration / params.time_step))
    dt = params.time_step
    tracker = MeanPhaseTracker(params.natural_frequency, dt)

    times = np.arange(n_steps + 1) * dt
    phases = np.empty((n_steps + 1, theta.size))
    coherence = np.empty(n_steps + 1)
    mean_phase = np.empty(n_steps + 1)
    frequencies = np.empty((n_steps + 1, theta.size))

    for k in range(n_steps + 1):
        order = order_parameter(theta)
        psi = tracker.update(order)
        freq = params.natural_frequency + order.r * params.coupling_gain * np.sin(psi - theta)
        phases[k] = theta
        coherence[k] = order.r
        mean_phase[k] = tracker.unwrapped
        frequencies[k] = freq
        if k < n_steps:
            theta = theta + dt * freq

    logger.debug(f"族群積分完成: N={theta.size}, 步數={n_steps}, 最終 r={coherence[-1]:.6f}")
    return PopulationHistory(times=times, phases=phases, coherence=coherence,
                             mean_phase=mean_phase, frequencies=frequencies)


def beacon_projections(psi: float, thetas: Sequence[float]) -> List[float]:
    return [project_mean_phase(psi, th) for th in thetas]
