"""
追蹤層：最小急動度 (jerk) 軌跡規劃

每個模擬步重新規劃一次 (模型預測控制)：
1. 以 6×6 線性系統求五次多項式解析解
2. 取樣檢查速度、加速度與前車間距約束
3. 違反時改以離散化凸 QP 求解；QP 不可行則交由呼叫端緊急煞車
"""
import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.qp_solver import QPSettings, solve_qp

logger = logging.getLogger(__name__)

DEGENERATE_HORIZON = 1e-6
SAMPLE_TOL = 1e-9

ArrayLike = Union[float, np.ndarray]


class DegenerateHorizonError(ValueError):
    """規劃時域低於數值下限"""


class PlanInfeasibleError(RuntimeError):
    """QP 無可行解 (例如來不及以 a_min 煞停)"""

    def __init__(self, status: str, message: str = ""):
        self.status = status
        super().__init__(message or f"QP 求解失敗: {status}")


class PlanKind(str, Enum):
    ANALYTIC = "analytic"
    DISCRETIZED = "discretized"


class PlanMode(str, Enum):
    ANALYTIC = "analytic"
    QP = "qp"
    EMERGENCY = "emergency"
    FROZEN = "frozen"


@dataclass(frozen=True)
class PlannerBounds:
    """速度/加速度上下限、最小間距 S、QP 離散步長與約束取樣步長"""
    v_min: float = 0.0
    v_max: float = 15.0
    a_min: float = -4.0
    a_max: float = 3.0
    min_gap: float = 7.0
    qp_step: float = 0.1
    sample_step: float = 0.1

    def __post_init__(self):
        if self.v_min > self.v_max:
            raise ValueError(f"v_min ({self.v_min}) 大於 v_max ({self.v_max})")
        if self.a_min > self.a_max:
            raise ValueError(f"a_min ({self.a_min}) 大於 a_max ({self.a_max})")
        if self.qp_step <= 0 or self.sample_step <= 0:
            raise ValueError("離散步長必須 > 0")


def propagate_exact(s: ArrayLike, v: ArrayLike, a: ArrayLike, u: ArrayLike, dt: ArrayLike):
    """常數急動度下三階積分器的精確解"""
    return (s + v * dt + a * dt ** 2 / 2.0 + u * dt ** 3 / 6.0,
            v + a * dt + u * dt ** 2 / 2.0,
            a + u * dt)


def propagate_euler(s: float, v: float, a: float, u: float, dt: float):
    """前向 Euler (可由設定選用)"""
    return s + v * dt, v + a * dt, a + u * dt


@dataclass
class TrajectoryPlan:
    """
    已承諾的軌跡

    解析解保存 c₁..c₆；離散解保存節點狀態 (s, v, a) 與區間急動度 u。
    τ 為相對 start_time 的時間；超過時域後以終端速度等速外推
    """
    kind: PlanKind
    horizon: float
    v_target: float
    coefficients: Optional[np.ndarray] = None
    knot_times: Optional[np.ndarray] = None
    knot_states: Optional[np.ndarray] = None
    knot_inputs: Optional[np.ndarray] = None
    start_time: float = 0.0

    def __post_init__(self):
        s_T, v_T, a_T = self._raw_state(np.array([self.horizon]))
        self._terminal = (float(s_T[0]), float(v_T[0]), float(a_T[0]))

    @property
    def first_input(self) -> float:
        return float(self.input_at(0.0))

    @property
    def terminal_state(self) -> Tuple[float, float, float]:
        return self._terminal

    def _raw_state(self, tau: np.ndarray):
        if self.kind == PlanKind.ANALYTIC:
            c1, c2, c3, c4, c5, c6 = self.coefficients
            s = -c1 * tau ** 5 / 120.0 + c2 * tau ** 4 / 24.0 - c3 * tau ** 3 / 6.0 + c4 * tau ** 2 / 2.0 + c5 * tau + c6
            v = -c1 * tau ** 4 / 24.0 + c2 * tau ** 3 / 6.0 - c3 * tau ** 2 / 2.0 + c4 * tau + c5
            a = -c1 * tau ** 3 / 6.0 + c2 * tau ** 2 / 2.0 - c3 * tau + c4
            return s, v, a
        idx = np.clip(np.searchsorted(self.knot_times, tau, side="right") - 1, 0, len(self.knot_inputs) - 1)
        delta = tau - self.knot_times[idx]
        x = self.knot_states[idx]
        return propagate_exact(x[:, 0], x[:, 1], x[:, 2], self.knot_inputs[idx], delta)

    def state_at(self, tau: ArrayLike):
        """回傳 (s, v, a)；τ 可為純量或陣列"""
        scalar = np.ndim(tau) == 0
        t = np.clip(np.atleast_1d(np.asarray(tau, dtype=float)), 0.0, None)
        inside = np.minimum(t, self.horizon)
        s, v, a = self._raw_state(inside)
        beyond = t > self.horizon
        if np.any(beyond):
            s_T, v_T, _ = self._terminal
            s = np.where(beyond, s_T + v_T * (t - self.horizon), s)
            v = np.where(beyond, v_T, v)
            a = np.where(beyond, 0.0, a)
        if scalar:
            return float(s[0]), float(v[0]), float(a[0])
        return s, v, a

    def input_at(self, tau: ArrayLike) -> ArrayLike:
        scalar = np.ndim(tau) == 0
        t = np.clip(np.atleast_1d(np.asarray(tau, dtype=float)), 0.0, None)
        if self.kind == PlanKind.ANALYTIC:
            c1, c2, c3 = self.coefficients[:3]
            u = -0.5 * c1 * t ** 2 + c2 * t - c3
        else:
            idx = np.clip(np.searchsorted(self.knot_times, t, side="right") - 1, 0, len(self.knot_inputs) - 1)
            u = self.knot_inputs[idx]
        u = np.where(t >= self.horizon, 0.0, u)
        return float(u[0]) if scalar else u

    def position_at_time(self, t: ArrayLike) -> ArrayLike:
        """以絕對模擬時間取位置 (供後車間距約束)"""
        result = self.state_at(np.asarray(t, dtype=float) - self.start_time)
        return result[0]


@dataclass(frozen=True)
class LeaderTrack:
    """前車軌跡：本車 τ 時的前車位置 = plan 在 (time_offset + τ) 的位置 + position_offset"""
    plan: TrajectoryPlan
    time_offset: float = 0.0
    position_offset: float = 0.0

    def positions(self, tau: np.ndarray) -> np.ndarray:
        s, _, _ = self.plan.state_at(np.asarray(tau, dtype=float) + self.time_offset)
        return np.asarray(s) + self.position_offset


@dataclass
class PlanningProblem:
    """
    規劃問題：初始狀態、時域 T、終端速度 v^d，以及可選的前車軌跡

    前車位置以 leader_plan 在 (leader_time_offset + τ) 的值取得，
    leader_time_offset 為本車規劃起點相對前車計畫起點的時間差。
    其他路段匯入的前車放在 leaders，間距約束取所有前車位置的下包絡
    """
    s0: float
    v0: float
    a0: float
    horizon: float
    v_target: float
    bounds: PlannerBounds = field(default_factory=PlannerBounds)
    leader_plan: Optional[TrajectoryPlan] = None
    leader_time_offset: float = 0.0
    leader_position_offset: float = 0.0
    leaders: Tuple[LeaderTrack, ...] = ()

    def __post_init__(self):
        if not self.horizon > 0:
            raise DegenerateHorizonError(f"時域 T 必須 > 0 (收到 {self.horizon})")
        b = self.bounds
        if not (b.v_min - SAMPLE_TOL <= self.v_target <= b.v_max + SAMPLE_TOL):
            raise ValueError(f"目標速度 {self.v_target} 不在 [{b.v_min}, {b.v_max}] 內")

    def leader_tracks(self) -> List[LeaderTrack]:
        tracks = list(self.leaders)
        if self.leader_plan is not None:
            tracks.insert(0, LeaderTrack(self.leader_plan, self.leader_time_offset, self.leader_position_offset))
        return tracks

    def leader_positions(self, tau: np.ndarray) -> Optional[np.ndarray]:
        tracks = self.leader_tracks()
        if not tracks:
            return None
        return np.min(np.vstack([np.atleast_1d(t.positions(tau)) for t in tracks]), axis=0)


@dataclass(frozen=True)
class Violation:
    kind: str
    tau: float
    value: float
    bound: float
    samples: int = 1


@dataclass
class ConstraintReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def kinds(self) -> List[str]:
        return [v.kind for v in self.violations]


def _boundary_matrix(T: float) -> np.ndarray:
    return np.array([
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [-T ** 5 / 120.0, T ** 4 / 24.0, -T ** 3 / 6.0, T ** 2 / 2.0, T, 1.0],
        [-T ** 4 / 24.0, T ** 3 / 6.0, -T ** 2 / 2.0, T, 1.0, 0.0],
        [-T ** 3 / 6.0, T ** 2 / 2.0, -T, 1.0, 0.0, 0.0],
    ])


def solve_unconstrained(problem: PlanningProblem) -> TrajectoryPlan:
    """
    五次多項式解析解

    u*(τ) = -½c₁τ² + c₂τ - c₃，係數由 τ=0 與 τ=T 的六個邊界條件決定
    """
    T = problem.horizon
    if T < DEGENERATE_HORIZON:
        raise DegenerateHorizonError(f"時域 {T:.3e} s 低於數值下限 {DEGENERATE_HORIZON}")
    rhs = np.array([problem.s0, problem.v0, problem.a0, 0.0, problem.v_target, 0.0])
    coefficients = np.linalg.solve(_boundary_matrix(T), rhs)
    return TrajectoryPlan(kind=PlanKind.ANALYTIC, horizon=T, v_target=problem.v_target,
                          coefficients=coefficients)


def _sample_times(horizon: float, step: float) -> np.ndarray:
    taus = np.arange(0.0, horizon, step)
    if taus.size == 0 or horizon - taus[-1] > 1e-12:
        taus = np.append(taus, horizon)
    return taus


def check_constraints(plan: TrajectoryPlan, problem: PlanningProblem,
                      sample_step: Optional[float] = None) -> ConstraintReport:
    """以 Δτ 取樣檢查速度、加速度與前車間距；每類違反回報最嚴重的取樣點"""
    b = problem.bounds
    taus = _sample_times(plan.horizon, sample_step or b.sample_step)
    s, v, a = plan.state_at(taus)
    report = ConstraintReport()

    def record(kind: str, excess: np.ndarray, values: np.ndarray, bound):
        mask = excess > SAMPLE_TOL
        if np.any(mask):
            i = int(np.argmax(excess))
            bound_value = float(bound[i]) if np.ndim(bound) else float(bound)
            report.violations.append(Violation(kind=kind, tau=float(taus[i]), value=float(values[i]),
                                               bound=bound_value, samples=int(mask.sum())))

    record("v_min", b.v_min - v, v, b.v_min)
    record("v_max", v - b.v_max, v, b.v_max)
    record("a_min", b.a_min - a, a, b.a_min)
    record("a_max", a - b.a_max, a, b.a_max)

    leader = problem.leader_positions(taus)
    if leader is not None:
        gap = leader - s
        record("gap", b.min_gap - gap, gap, b.min_gap)
    return report


def _transcription(n: int, h: float, x0: np.ndarray):
    """零階保持下的狀態傳遞：x_k = const_k + sens_k @ u"""
    Phi = np.array([[1.0, h, h * h / 2.0], [0.0, 1.0, h], [0.0, 0.0, 1.0]])
    Gamma = np.array([h ** 3 / 6.0, h * h / 2.0, h])
    const = np.zeros((n + 1, 3))
    sens = np.zeros((n + 1, 3, n))
    const[0] = x0
    for k in range(n):
        const[k + 1] = Phi @ const[k]
        sens[k + 1] = Phi @ sens[k]
        sens[k + 1][:, k] += Gamma
    return const, sens


def solve_constrained_qp(problem: PlanningProblem, warm_start: Optional[TrajectoryPlan] = None,
                         step: Optional[float] = None,
                         settings: Optional[QPSettings] = None) -> TrajectoryPlan:
    """
    離散化 QP

    n = ceil(T/Δτ) 個區間，決策變數為各區間急動度；成本 Σ½uₖ²h，
    終端等式 (0, v^d, 0)，節點上的速度/加速度界限與前車間距
    """
    b = problem.bounds
    T = problem.horizon
    if T < DEGENERATE_HORIZON:
        raise DegenerateHorizonError(f"時域 {T:.3e} s 低於數值下限 {DEGENERATE_HORIZON}")
    dtau = step or b.qp_step
    n = max(1, math.ceil(T / dtau - 1e-9))
    h = T / n
    x0 = np.array([problem.s0, problem.v0, problem.a0])
    const, sens = _transcription(n, h, x0)
    knot_times = np.arange(n + 1) * h

    rows, lower, upper = [], [], []
    # 終端條件
    for j, target in enumerate((0.0, problem.v_target, 0.0)):
        rows.append(sens[n][j])
        lower.append(target - const[n][j])
        upper.append(target - const[n][j])
    # 內部節點的速度與加速度界限
    for k in range(1, n):
        rows.append(sens[k][1])
        lower.append(b.v_min - const[k][1])
        upper.append(b.v_max - const[k][1])
        rows.append(sens[k][2])
        lower.append(b.a_min - const[k][2])
        upper.append(b.a_max - const[k][2])
    leader = problem.leader_positions(knot_times)
    if leader is not None:
        for k in range(1, n + 1):
            rows.append(sens[k][0])
            lower.append(-np.inf)
            upper.append(leader[k] - b.min_gap - const[k][0])

    A = np.vstack(rows)
    P = h * np.eye(n)
    q = np.zeros(n)
    if warm_start is not None:
        u0 = np.asarray(warm_start.input_at(knot_times[:-1] + h / 2.0), dtype=float)
    else:
        u0 = np.zeros(n)

    result = solve_qp(P, q, A, np.array(lower), np.array(upper), x0=u0, settings=settings)
    if not result.solved:
        raise PlanInfeasibleError(result.status)

    u = result.x
    states = const + np.einsum("kjn,n->kj", sens, u)
    logger.debug(f"QP 完成: n={n}, iter={result.iterations}, polished={result.polished}")
    return TrajectoryPlan(kind=PlanKind.DISCRETIZED, horizon=T, v_target=problem.v_target,
                          knot_times=knot_times, knot_states=states, knot_inputs=u)


def braking_plan(s0: float, v0: float, a0: float, bounds: PlannerBounds, dt: float,
                 start_time: float = 0.0) -> TrajectoryPlan:
    """
    緊急煞車軌跡

    第一步 u = (a_min - a)/Δt，之後維持 a_min 直到接近停止，再把加速度歸零
    """
    states = [(s0, v0, a0)]
    inputs = []
    s, v, a = s0, v0, a0
    max_steps = int(math.ceil((max(v0, 0.0) / max(-bounds.a_min, 1e-9) + 3.0) / dt)) + 2
    for _ in range(max_steps):
        if v <= 1e-9 and abs(a) <= 1e-9:
            break
        stopping = v <= -bounds.a_min * dt
        u = -a / dt if stopping else (bounds.a_min - a) / dt
        s, v, a = propagate_exact(s, v, a, u, dt)
        # 最後一步加速度歸零後視為停止
        if v <= 0.0 or stopping:
            v, a = 0.0, 0.0
        inputs.append(u)
        states.append((s, v, a))
    if not inputs:
        inputs.append(0.0)
        states.append((s0, 0.0, 0.0))
    knot_states = np.array(states)
    knot_states[-1, 2] = 0.0
    knot_times = np.arange(len(states)) * dt
    return TrajectoryPlan(kind=PlanKind.DISCRETIZED, horizon=float(knot_times[-1]), v_target=0.0,
                          knot_times=knot_times, knot_states=knot_states,
                          knot_inputs=np.array(inputs), start_time=start_time)


def constant_speed_plan(s0: float, v0: float, horizon: float, start_time: float = 0.0) -> TrajectoryPlan:
    """等速軌跡 (剛進入路網或穿越路口時承諾給後車)"""
    knot_times = np.array([0.0, max(horizon, DEGENERATE_HORIZON)])
    states = np.array([[s0, v0, 0.0], [s0 + v0 * knot_times[1], v0, 0.0]])
    return TrajectoryPlan(kind=PlanKind.DISCRETIZED, horizon=float(knot_times[1]), v_target=v0,
                          knot_times=knot_times, knot_states=states, knot_inputs=np.zeros(1),
                          start_time=start_time)


def mean_square_jerk(plan: TrajectoryPlan) -> float:
    """∫₀ᵀ ½u² dτ"""
    if plan.kind == PlanKind.ANALYTIC:
        c1, c2, c3 = plan.coefficients[:3]
        u_poly = np.polynomial.Polynomial([-c3, c2, -0.5 * c1])
        integral = (0.5 * u_poly ** 2).integ()
        return float(integral(plan.horizon) - integral(0.0))
    widths = np.diff(plan.knot_times)
    return float(np.sum(0.5 * plan.knot_inputs ** 2 * widths))


@dataclass
class PlanResult:
    u0: float
    plan: TrajectoryPlan
    mode: PlanMode
    report: ConstraintReport = field(default_factory=ConstraintReport)


def plan_step(s: float, v: float, a: float, horizon: float, v_target: float,
              bounds: PlannerBounds, dt: float, leader_plan: Optional[TrajectoryPlan] = None,
              leader_time_offset: float = 0.0, leader_position_offset: float = 0.0,
              start_time: float = 0.0, settings: Optional[QPSettings] = None,
              leaders: Sequence[LeaderTrack] = ()) -> PlanResult:
    """
    單步模型預測控制

    解析解 → 約束檢查 → 必要時 QP → QP 不可行時緊急煞車；回傳本步的第一個輸入
    """
    problem = PlanningProblem(s0=s, v0=v, a0=a, horizon=horizon, v_target=v_target, bounds=bounds,
                              leader_plan=leader_plan, leader_time_offset=leader_time_offset,
                              leader_position_offset=leader_position_offset, leaders=tuple(leaders))
    analytic = solve_unconstrained(problem)
    report = check_constraints(analytic, problem)
    if report.feasible:
        analytic.start_time = start_time
        return PlanResult(u0=analytic.first_input, plan=analytic, mode=PlanMode.ANALYTIC, report=report)

    try:
        plan = solve_constrained_qp(problem, warm_start=analytic, settings=settings)
        plan.start_time = start_time
        return PlanResult(u0=plan.first_input, plan=plan, mode=PlanMode.QP, report=report)
    except PlanInfeasibleError as e:
        logger.warning(f"QP 不可行 ({e.status})，改用緊急煞車: s={s:.2f}, v={v:.2f}, T={horizon:.2f}, "
                       f"違反={report.kinds()}")
        plan = braking_plan(s, v, a, bounds, dt, start_time=start_time)
        return PlanResult(u0=plan.first_input, plan=plan, mode=PlanMode.EMERGENCY, report=report)
