"""
離散時間模擬引擎

每一步依序執行：到達生成 → 序參量 → 逐車 (間距重置、到達時間、規劃、相位更新) →
運動積分 → 路段轉移 → 安全稽核。同一 (設定, 種子) 產生逐位元相同的紀錄。
"""
import math
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.arrivals import ArrivalRecord, arrivals_by_tick
from src.kuramoto import (
    TWO_PI, KuramotoParams, MeanPhaseTracker, OrderParameter, PhaseState, arrival_time,
    kuramoto_step, order_parameter, reset_to_free_slot,
)
from src.network import Movement, NetworkConfig, position_to_phase, wrap_angle
from src.planner import (
    LeaderTrack, PlanMode, PlannerBounds, TrajectoryPlan, constant_speed_plan, plan_step,
    propagate_euler, propagate_exact,
)
from src.qp_solver import QPSettings

logger = logging.getLogger(__name__)

KURAMOTO = "kuramoto"
BASELINE = "baseline"

LOG_COLUMNS = ["t_s", "vehicle_id", "segment_id", "s_m", "v_mps", "a_mps2", "u_mps3", "theta_rad", "psi_i_rad"]
CROSSING_COLUMNS = ["vehicle_id", "intersection_id", "segment_id", "orientation", "movement",
                    "entry_time_s", "conflict_time_s", "speed_mps", "mapping_jump_rad"]

# 已承諾軌跡在路段轉移後等速外推的長度
COMMIT_HORIZON = 30.0
# 錯過信標時仍以目前速度趕上、不退週期的最大延遲
LATE_CROSSING_S = 0.2
# 規劃時納入間距約束的最近前車數
LEADER_TRACKS = 2


@dataclass
class EngineOptions:
    """
    積分方式、稽核門檻與入口放行所需空間

    clearance_s 為 None 時每個路口取 路口長度 / 名目速度；
    timing_tolerance_s 吸收以步長內插通過時間的取樣誤差
    """
    integration: str = "exact"
    clearance_s: Optional[float] = None
    timing_tolerance_s: float = 0.05
    gap_tolerance_m: float = 0.1
    audit_min_gap_m: Optional[float] = None
    spawn_gap_m: Optional[float] = None

    def __post_init__(self):
        if self.integration not in ("exact", "euler"):
            raise ValueError(f"未知的積分方式: {self.integration}")
        if self.clearance_s is not None and self.clearance_s <= 0:
            raise ValueError(f"clearance_s 必須 > 0 (收到 {self.clearance_s})")


@dataclass
class CrossingEvent:
    vehicle_id: int
    intersection_id: str
    segment_id: str
    orientation: str
    movement: str
    entry_time: float
    conflict_time: float
    speed: float
    mapping_jump: float = 0.0


@dataclass(frozen=True)
class ConflictFlag:
    intersection_id: str
    first_vehicle: int
    second_vehicle: int
    first_segment: str
    second_segment: str
    separation_s: float


@dataclass(frozen=True)
class GapFlag:
    time: float
    segment_id: str
    leader_id: int
    follower_id: int
    gap_m: float


@dataclass
class AuditReport:
    """衝突點與同車道間距稽核結果"""
    conflict_flags: List[ConflictFlag]
    gap_flags: List[GapFlag]
    crossings: int
    clearance_s: float

    @property
    def passed(self) -> bool:
        return not self.conflict_flags and not self.gap_flags

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "crossings": self.crossings,
            "clearance_s": self.clearance_s,
            "conflict_violations": len(self.conflict_flags),
            "gap_violations": len(self.gap_flags),
            "conflict_flags": [vars_of(f) for f in self.conflict_flags],
            "gap_flags": [vars_of(f) for f in self.gap_flags],
        }


def vars_of(obj) -> Dict:
    return {k: getattr(obj, k) for k in obj.__dataclass_fields__}


@dataclass
class Vehicle:
    """車輛：運動狀態、相位狀態、已承諾軌跡與逐步紀錄"""
    id: int
    route: Tuple[Movement, ...]
    segment_id: str
    s: float
    v: float
    a: float
    phase: PhaseState
    request_time: float
    spawn_time: float
    plan: Optional[TrajectoryPlan] = None
    route_index: int = 0
    u: float = 0.0
    route_distance: float = 0.0
    exit_time: Optional[float] = None
    mode: str = PlanMode.ANALYTIC.value
    previous_segment: Optional[str] = None
    # 號誌基準使用
    held_accel: float = 0.0
    signal_commit: Optional[str] = None
    log: List[tuple] = field(default_factory=list)

    @property
    def completed(self) -> bool:
        return self.exit_time is not None

    def next_movement(self, network: NetworkConfig) -> Movement:
        """本路口的轉向；無右轉出口時退化為直行"""
        movement = self.route[self.route_index] if self.route_index < len(self.route) else Movement.STRAIGHT
        if movement == Movement.RIGHT and network.successor(self.segment_id, Movement.RIGHT) is None:
            return Movement.STRAIGHT
        return movement


class SimulationState:
    """模擬狀態 (時鐘、車隊、路網、參數與稽核紀錄)"""

    def __init__(self, network: NetworkConfig, kuramoto: KuramotoParams, bounds: PlannerBounds,
                 arrivals: List[ArrivalRecord], strategy: str = KURAMOTO,
                 options: Optional[EngineOptions] = None, qp_settings: Optional[QPSettings] = None):
        if strategy not in (KURAMOTO, BASELINE):
            raise ValueError(f"未知的策略: {strategy}")
        self.network = network
        self.kuramoto = kuramoto
        self.bounds = bounds
        self.strategy = strategy
        self.options = options or EngineOptions()
        self.qp_settings = qp_settings
        self.dt = kuramoto.time_step
        self.tick = 0
        self.clock = 0.0

        self.arrivals = list(arrivals)
        self._pending = arrivals_by_tick(self.arrivals)
        self.queues: Dict[str, Deque[ArrivalRecord]] = {s.id: deque() for s in network.entry_segments()}

        self.vehicles: Dict[int, Vehicle] = {}
        self.completed: Dict[int, Vehicle] = {}
        self.tracker = MeanPhaseTracker(network.natural_frequency, self.dt)
        self.mean_phase_history: List[Tuple[int, float, float, float]] = []
        self.crossings: List[CrossingEvent] = []
        self.gap_flags: List[GapFlag] = []
        self.mode_counts: Counter = Counter()
        self.resets = 0

    @property
    def spawn_gap(self) -> float:
        return self.options.spawn_gap_m if self.options.spawn_gap_m is not None else self.bounds.min_gap

    @property
    def audit_gap(self) -> float:
        return self.options.audit_min_gap_m if self.options.audit_min_gap_m is not None else self.bounds.min_gap

    def clearance(self, intersection_id: str) -> float:
        if self.options.clearance_s is not None:
            return self.options.clearance_s
        return self.network.clearance_time(intersection_id)

    def all_vehicles(self) -> List[Vehicle]:
        merged = list(self.completed.values()) + list(self.vehicles.values())
        return sorted(merged, key=lambda v: v.id)

    def by_segment(self) -> Dict[str, List[Vehicle]]:
        """各路段車輛，依位置由前到後排序"""
        groups: Dict[str, List[Vehicle]] = {}
        for veh in self.vehicles.values():
            groups.setdefault(veh.segment_id, []).append(veh)
        for seg_id in groups:
            groups[seg_id].sort(key=lambda v: (-v.s, v.id))
        return dict(sorted(groups.items()))

    def queued(self) -> int:
        return sum(len(q) for q in self.queues.values())


# ========== 延伸車道 ==========

@dataclass(frozen=True)
class LaneEntry:
    """延伸車道中的一筆：feeder 為仍在上游路段、越過路口後才會進入本路段的車輛"""
    vehicle: Vehicle
    position: float
    position_shift: float = 0.0
    phase_shift: float = 0.0
    feeder: bool = False


@dataclass(frozen=True)
class LeaderView:
    """前車換算到本車座標：位置 = 前車 s + position_offset，信標 = 前車 Ψ + phase_offset"""
    vehicle: Vehicle
    position_offset: float = 0.0
    phase_offset: float = 0.0
    feeder: bool = False

    @property
    def position(self) -> float:
        return self.vehicle.s + self.position_offset

    @property
    def beacon(self) -> float:
        return self.vehicle.phase.beacon + self.phase_offset


def build_lanes(state: SimulationState) -> Dict[str, List[LaneEntry]]:
    """
    各路段的延伸車道

    包含路段上的車輛，以及下一個路口將轉入此路段的上游車輛 (換算到此路段座標)，
    依車道位置由前到後排序
    """
    network = state.network
    lanes: Dict[str, List[LaneEntry]] = {}
    for vehicle in state.vehicles.values():
        lanes.setdefault(vehicle.segment_id, []).append(LaneEntry(vehicle, vehicle.s))
        if network.segment(vehicle.segment_id).is_exit:
            continue
        next_id, start, shift = network.mapped_transition(vehicle.segment_id, vehicle.next_movement(network))
        lanes.setdefault(next_id, []).append(LaneEntry(vehicle, vehicle.s + start, start, shift, feeder=True))
    for entries in lanes.values():
        entries.sort(key=lambda e: (-e.position, e.vehicle.id))
    return dict(sorted(lanes.items()))


def _is_ahead(entry: LaneEntry, position: float, vehicle_id: int) -> bool:
    if entry.vehicle.id == vehicle_id:
        return False
    return entry.position > position or (entry.position == position and entry.vehicle.id < vehicle_id)


def lane_leaders(state: SimulationState, lanes: Dict[str, List[LaneEntry]], vehicle: Vehicle) -> List[LeaderView]:
    """
    車輛必須保持在其後方的所有前車，由近到遠

    本路段延伸車道中位置較前者，加上下一路段延伸車道中位於本車換算位置之前者
    (已在下一路段的車輛與從其他路段匯入的車輛)
    """
    views: Dict[int, LeaderView] = {}
    for entry in lanes.get(vehicle.segment_id, []):
        if _is_ahead(entry, vehicle.s, vehicle.id):
            views.setdefault(entry.vehicle.id, LeaderView(entry.vehicle, entry.position_shift, entry.phase_shift,
                                                          feeder=entry.feeder))
    seg = state.network.segment(vehicle.segment_id)
    if not seg.is_exit:
        next_id, start, shift = state.network.mapped_transition(seg.id, vehicle.next_movement(state.network))
        mapped = vehicle.s + start
        for entry in lanes.get(next_id, []):
            if _is_ahead(entry, mapped, vehicle.id):
                views.setdefault(entry.vehicle.id, LeaderView(
                    entry.vehicle, entry.position_shift - start, entry.phase_shift - shift,
                    feeder=entry.feeder and entry.vehicle.segment_id != vehicle.segment_id,
                ))
    return sorted(views.values(), key=lambda view: (view.position - vehicle.s, view.vehicle.id))


# ========== 相位初始化 ==========

def _reset_phase(state: SimulationState, vehicle: Vehicle, theta: float, psi: float, leaders: List[LeaderView]):
    """對換算後的前車信標做間距重置，並讓信標與前車至少相隔最小間距對應的相位"""
    seg = state.network.segment(vehicle.segment_id)
    min_separation = TWO_PI * state.bounds.min_gap / seg.wavelength
    reset, beacon = reset_to_free_slot(theta, psi, [view.beacon for view in leaders],
                                       state.kuramoto.reset_margin, min_separation)
    if reset != theta:
        state.resets += 1
    vehicle.phase.theta = reset
    vehicle.phase.beacon = beacon


def _initialize_phase(state: SimulationState, vehicle: Vehicle, leaders: List[LeaderView]):
    """依位置選擇初始相位，再對延伸車道上的前車做間距重置"""
    seg = state.network.segment(vehicle.segment_id)
    theta = position_to_phase(seg, vehicle.s)
    vehicle.phase.crossing_phase = seg.offset
    if state.strategy != KURAMOTO:
        vehicle.phase.theta = theta
        vehicle.phase.beacon = math.nan
        return
    _reset_phase(state, vehicle, theta, state.tracker.wrapped, leaders)


def record_state(vehicle: Vehicle, tick: int, t: float):
    vehicle.log.append((tick, t, vehicle.segment_id, vehicle.s, vehicle.v, vehicle.a, vehicle.u,
                        vehicle.phase.theta, vehicle.phase.beacon))


# ========== 到達 ==========

def spawn_arrivals(state: SimulationState, dt: Optional[float] = None) -> List[Vehicle]:
    """
    放行本步到達

    新到達進入各入口的 FIFO 佇列；入口上游端有 ≥ S 公尺空間時每步放行一輛，
    以 s = -L、v = vₙ、a = 0 生成
    """
    dt = dt or state.dt
    for record in state._pending.pop(state.tick, []):
        state.queues[record.entry_segment].append(record)

    spawned = []
    groups = state.by_segment()
    for entry_id, queue in state.queues.items():
        if not queue:
            continue
        seg = state.network.segment(entry_id)
        on_entry = groups.get(entry_id, [])
        if on_entry and on_entry[-1].s - (-seg.length) < state.spawn_gap:
            continue
        record = queue.popleft()
        vehicle = Vehicle(
            id=record.vehicle_id, route=record.route, segment_id=entry_id,
            s=-seg.length, v=seg.nominal_speed, a=0.0,
            phase=PhaseState(theta=0.0, omega_n=state.network.natural_frequency),
            request_time=record.request_time, spawn_time=state.clock,
            route_distance=seg.length,
        )
        _initialize_phase(state, vehicle, lane_leaders(state, build_lanes(state), vehicle))
        vehicle.plan = constant_speed_plan(vehicle.s, vehicle.v, COMMIT_HORIZON, start_time=state.clock)
        state.vehicles[vehicle.id] = vehicle
        spawned.append(vehicle)
        logger.debug(f"t={state.clock:.1f} 車輛 {vehicle.id} 進入 {entry_id} (等待 {state.clock - record.request_time:.1f} s)")
    return spawned


# ========== 同步策略單步 ==========

def reachable_speed(vehicle: Vehicle, bounds: PlannerBounds) -> float:
    """以一半的最大加速度可在路口入口達到的速度"""
    return math.sqrt(max(vehicle.v, 0.0) ** 2 + bounds.a_max * max(-vehicle.s, 0.0))


def _commits_crossing(state: SimulationState, vehicle: Vehicle) -> bool:
    """已承諾軌跡在本步內越過路口入口"""
    return vehicle.plan is not None and vehicle.plan.position_at_time(state.clock + state.dt) >= 0.0


def _reslot(state: SimulationState, vehicle: Vehicle, v_target: float) -> float:
    """
    錯過信標且本步到不了路口：相位每次退一個週期，直到到達時間不短於
    以平均速度 (v + v^d)/2 駛完剩餘距離所需的時間；回傳新的到達時間
    """
    phase = vehicle.phase
    needed = max(state.dt, 2.0 * -vehicle.s / max(vehicle.v + v_target, 1e-9))
    slots = 0
    while arrival_time(phase) < needed:
        phase.theta -= TWO_PI
        phase.beacon -= TWO_PI
        slots += 1
    state.resets += 1
    logger.debug(f"t={state.clock:.1f} 車輛 {vehicle.id} 錯過信標，退後 {slots} 個週期 "
                 f"(s={vehicle.s:.2f}, v={vehicle.v:.2f})")
    return arrival_time(phase)


def _plan_vehicle(state: SimulationState, vehicle: Vehicle, leaders: List[LeaderView],
                  order: OrderParameter, psi: float) -> float:
    """對單一車輛執行間距重置、到達時間、規劃與相位更新；回傳新的 θ"""
    phase = vehicle.phase
    seg = state.network.segment(vehicle.segment_id)
    _reset_phase(state, vehicle, phase.theta, psi, leaders)

    v_target = min(seg.nominal_speed, reachable_speed(vehicle, state.bounds))
    horizon = arrival_time(phase)
    if horizon < state.dt:
        if _commits_crossing(state, vehicle):
            # 即將通過：沿用已承諾軌跡
            vehicle.u = float(vehicle.plan.input_at(state.clock - vehicle.plan.start_time))
            vehicle.mode = PlanMode.FROZEN.value
            state.mode_counts[vehicle.mode] += 1
            return kuramoto_step(phase, order, state.kuramoto)
        if -vehicle.s <= vehicle.v * (state.dt + LATE_CROSSING_S):
            horizon = max(-vehicle.s / vehicle.v, state.dt)
        else:
            horizon = _reslot(state, vehicle, v_target)

    tracks = [LeaderTrack(view.vehicle.plan, state.clock - view.vehicle.plan.start_time, view.position_offset)
              for view in leaders[:LEADER_TRACKS] if view.vehicle.plan is not None]
    result = plan_step(vehicle.s, vehicle.v, vehicle.a, horizon, v_target, state.bounds, state.dt,
                       start_time=state.clock, settings=state.qp_settings, leaders=tracks)
    vehicle.plan = result.plan
    vehicle.u = result.u0
    vehicle.mode = result.mode.value
    state.mode_counts[vehicle.mode] += 1
    return kuramoto_step(phase, order, state.kuramoto)


def step(state: SimulationState) -> SimulationState:
    """同步策略推進一步 Δt"""
    spawn_arrivals(state)
    groups = state.by_segment()

    if state.vehicles:
        order = order_parameter([v.phase.theta for v in sorted(state.vehicles.values(), key=lambda v: v.id)])
        psi = state.tracker.update(order)
    else:
        order = OrderParameter(r=0.0, psi=0.0)
        psi = state.tracker.update(None)
    state.mean_phase_history.append((state.tick, order.r, psi,
                                     state.tracker.unwrapped if state.tracker.unwrapped is not None else psi))

    new_theta: Dict[int, float] = {}
    lanes = build_lanes(state)
    for platoon in groups.values():
        for vehicle in platoon:
            leaders = lane_leaders(state, lanes, vehicle)
            new_theta[vehicle.id] = _plan_vehicle(state, vehicle, leaders, order, psi)
            record_state(vehicle, state.tick, state.clock)

    for vid, theta in new_theta.items():
        state.vehicles[vid].phase.theta = theta

    advance_fleet(state)
    return state


# ========== 運動積分與轉移 ==========

def advance_fleet(state: SimulationState):
    """以各車的 u 積分一步、處理越過路口入口的轉移，並稽核同車道間距"""
    b = state.bounds
    dt = state.dt
    integrate = propagate_exact if state.options.integration == "exact" else propagate_euler
    crossing: List[Tuple[Vehicle, float]] = []

    for vehicle in sorted(state.vehicles.values(), key=lambda v: v.id):
        s_prev = vehicle.s
        s, v, a = integrate(vehicle.s, vehicle.v, vehicle.a, vehicle.u, dt)
        v = min(max(v, b.v_min), b.v_max)
        a = min(max(a, b.a_min), b.a_max)
        if v <= b.v_min + 1e-12 and a < 0.0:
            a = 0.0
        vehicle.s, vehicle.v, vehicle.a = float(s), float(v), float(a)
        if vehicle.s >= 0.0:
            crossing.append((vehicle, s_prev))

    for vehicle, s_prev in crossing:
        frac = -s_prev / (vehicle.s - s_prev) if vehicle.s > s_prev else 1.0
        segment_transition(state, vehicle, state.clock + frac * dt)

    state.clock = (state.tick + 1) * dt
    state.tick += 1
    _audit_gaps(state)


def segment_transition(state: SimulationState, vehicle: Vehicle, entry_time: Optional[float] = None) -> Optional[Vehicle]:
    """
    車輛越過路口入口 (s ≥ 0) 後的處理

    出口路段：記錄離開時間並移出族群。
    其他路段：依路線移到後繼路段，s 設為 -(L_next + 穿越長度) + 超出量，重新初始化相位
    """
    network = state.network
    entry_time = state.clock + state.dt if entry_time is None else entry_time
    seg = network.segment(vehicle.segment_id)

    if seg.is_exit:
        vehicle.exit_time = entry_time
        vehicle.u = 0.0
        record_state(vehicle, state.tick + 1, state.clock + state.dt)
        del state.vehicles[vehicle.id]
        state.completed[vehicle.id] = vehicle
        logger.debug(f"車輛 {vehicle.id} 離開路網 t={entry_time:.2f} 行程 {vehicle.route_distance:.1f} m")
        return None

    movement = vehicle.next_movement(network)
    box = network.intersection(seg.downstream_intersection)
    speed = max(vehicle.v, 1e-3)
    conflict_time = entry_time + box.conflict_distances.get(seg.id, box.box_length / 2.0) / speed

    overshoot = vehicle.s
    mapped_before = position_to_phase(seg, overshoot)
    next_id, start = network.transition(seg.id, movement)
    nxt = network.segment(next_id)
    vehicle.previous_segment = seg.id
    vehicle.segment_id = next_id
    vehicle.s = start + overshoot
    vehicle.route_index += 1
    vehicle.route_distance += -start
    mapped_after = position_to_phase(nxt, vehicle.s)

    state.crossings.append(CrossingEvent(
        vehicle_id=vehicle.id, intersection_id=box.id, segment_id=seg.id, orientation=seg.orientation,
        movement=movement.value, entry_time=entry_time, conflict_time=conflict_time, speed=vehicle.v,
        mapping_jump=abs(wrap_angle(mapped_after - mapped_before)),
    ))

    _initialize_phase(state, vehicle, lane_leaders(state, build_lanes(state), vehicle))
    vehicle.plan = constant_speed_plan(vehicle.s, vehicle.v, COMMIT_HORIZON, start_time=state.clock + state.dt)
    vehicle.signal_commit = None
    return vehicle


def _shares_path(state: SimulationState, lane_id: str, tail: LaneEntry, feeder: LaneEntry) -> bool:
    """路段上的車與上游匯入車在同一條實體路徑上：來自同一路段，或前者已駛出路口"""
    if tail.vehicle.previous_segment == feeder.vehicle.segment_id:
        return True
    return tail.position >= -state.network.segment(lane_id).length


def _audit_gaps(state: SimulationState):
    """
    延伸車道間距稽核

    路段上的相鄰車輛，以及即將匯入的上游車輛與路段上最後一輛車 (同一實體路徑時，以路段座標計距離)
    """
    limit = state.audit_gap - state.options.gap_tolerance_m
    for lane_id, entries in build_lanes(state).items():
        tail: Optional[LaneEntry] = None
        for entry in entries:
            if tail is not None and (not entry.feeder or _shares_path(state, lane_id, tail, entry)):
                gap = tail.position - entry.position
                if gap < limit:
                    flag = GapFlag(time=state.clock, segment_id=lane_id, leader_id=tail.vehicle.id,
                                   follower_id=entry.vehicle.id, gap_m=gap)
                    state.gap_flags.append(flag)
                    logger.error(f"間距違規: {lane_id} 車輛 {tail.vehicle.id}/{entry.vehicle.id} "
                                 f"間距 {gap:.2f} m (t={state.clock:.1f})")
            if not entry.feeder:
                tail = entry


# ========== 稽核與匯出 ==========

def conflict_audit(state: SimulationState) -> AuditReport:
    """
    衝突點稽核

    同一路口來自不同路段的通過，衝突點時間差小於該路口的淨空時間 (扣除取樣容差) 即標記
    """
    clearances = {iid: state.clearance(iid) for iid in sorted(state.network.intersections)}
    tolerance = state.options.timing_tolerance_s
    by_intersection: Dict[str, List[CrossingEvent]] = {}
    for event in state.crossings:
        by_intersection.setdefault(event.intersection_id, []).append(event)

    flags: List[ConflictFlag] = []
    for iid in sorted(by_intersection):
        threshold = clearances[iid] - tolerance
        events = sorted(by_intersection[iid], key=lambda e: (e.conflict_time, e.vehicle_id))
        for i, first in enumerate(events):
            for second in events[i + 1:]:
                separation = second.conflict_time - first.conflict_time
                if separation >= threshold:
                    break
                if second.segment_id != first.segment_id:
                    flags.append(ConflictFlag(
                        intersection_id=iid, first_vehicle=first.vehicle_id, second_vehicle=second.vehicle_id,
                        first_segment=first.segment_id, second_segment=second.segment_id,
                        separation_s=separation,
                    ))
    for flag in flags:
        logger.error(f"衝突點違規: {flag.intersection_id} 車輛 {flag.first_vehicle}/{flag.second_vehicle} "
                     f"相隔 {flag.separation_s:.3f} s")
    return AuditReport(conflict_flags=flags, gap_flags=list(state.gap_flags),
                       crossings=len(state.crossings), clearance_s=max(clearances.values(), default=0.0))


def trajectory_frame(state: SimulationState, every: int = 1) -> pd.DataFrame:
    """逐步軌跡紀錄 (依時間、車輛編號排序；every > 1 時降採樣)"""
    rows = []
    for vehicle in state.all_vehicles():
        for tick, t, seg, s, v, a, u, theta, beacon in vehicle.log:
            if every > 1 and tick % every != 0:
                continue
            rows.append((tick, t, vehicle.id, seg, s, v, a, u, theta, beacon))
    df = pd.DataFrame(rows, columns=["tick"] + LOG_COLUMNS)
    df = df.sort_values(["tick", "vehicle_id"], kind="mergesort").drop(columns="tick").reset_index(drop=True)
    return df


def crossings_frame(state: SimulationState) -> pd.DataFrame:
    rows = [(e.vehicle_id, e.intersection_id, e.segment_id, e.orientation, e.movement, e.entry_time,
             e.conflict_time, e.speed, e.mapping_jump) for e in state.crossings]
    return pd.DataFrame(rows, columns=CROSSING_COLUMNS)


def approach_trajectories(state: SimulationState, intersection_id: str) -> pd.DataFrame:
    """
    某路口所有來車的距離時間序列

    垂直路段回傳帶號位置 s (≤ 0)，水平路段取 -s，使兩個方向分列路口兩側
    """
    incoming = {s.id: s for s in state.network.incoming(intersection_id)}
    rows = []
    for vehicle in state.all_vehicles():
        for _, t, seg_id, s, v, *_ in vehicle.log:
            seg = incoming.get(seg_id)
            if seg is None or s > 0:
                continue
            distance = -s if seg.orientation == "horizontal" else s
            rows.append((t, vehicle.id, seg_id, seg.orientation, distance, v))
    return pd.DataFrame(rows, columns=["t_s", "vehicle_id", "segment_id", "orientation", "distance_m", "v_mps"])


def vehicle_trace(state: SimulationState, vehicle_id: int) -> pd.DataFrame:
    """單一車輛的完整軌跡，附網路平均相位、同調度與瞬時頻率"""
    vehicle = state.completed.get(vehicle_id) or state.vehicles.get(vehicle_id)
    if vehicle is None:
        raise KeyError(f"找不到車輛 {vehicle_id}")
    history = {tick: (r, psi_u) for tick, r, _, psi_u in state.mean_phase_history}
    rows = []
    for tick, t, seg, s, v, a, u, theta, beacon in vehicle.log:
        r, psi_u = history.get(tick, (np.nan, np.nan))
        freq = state.network.natural_frequency + r * state.kuramoto.coupling_gain * math.sin(beacon - theta) \
            if not (np.isnan(r) or np.isnan(beacon)) else np.nan
        rows.append((t, seg, s, v, a, u, theta, beacon, psi_u, r, freq))
    return pd.DataFrame(rows, columns=["t_s", "segment_id", "s_m", "v_mps", "a_mps2", "u_mps3", "theta_rad",
                                       "psi_i_rad", "mean_phase_rad", "coherence", "frequency_rad_per_s"])


def run_simulation(state: SimulationState, step_fn: Callable[[SimulationState], SimulationState],
                   duration: float, drain_time: float = 0.0, show_progress: bool = True) -> SimulationState:
    """
    執行完整模擬

    duration 內依到達流生成車輛，之後再跑 drain_time 讓路網內車輛駛離 (不再有新到達)
    """
    n_ticks = int(round((duration + drain_time) / state.dt))
    logger.info(f"開始模擬 ({state.strategy}): {len(state.arrivals)} 筆到達, {n_ticks} 步")
    for _ in tqdm(range(n_ticks), desc=f"模擬 {state.strategy}", disable=not show_progress, unit="步"):
        step_fn(state)
        if state.tick * state.dt >= duration and not state.vehicles and not state._pending and state.queued() == 0:
            break
    logger.info(
        f"模擬結束 ({state.strategy}): t={state.clock:.1f} s, 完成 {len(state.completed)} 輛, "
        f"路網內 {len(state.vehicles)} 輛, 佇列 {state.queued()} 輛, 模式 {dict(state.mode_counts)}"
    )
    return state
