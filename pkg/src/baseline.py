"""
人類駕駛基準：Gipps 跟車模型 + 定時號誌 (綠波時差)

與同步策略共用同一到達流、路段轉移與稽核，只替換每步的控制律
"""
import math
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

from src.engine import (
    LeaderView, SimulationState, Vehicle, advance_fleet, build_lanes, lane_leaders, record_state, spawn_arrivals,
)
from src.network import NetworkConfig

logger = logging.getLogger(__name__)

# 紅燈時每步結束位置與停止線的最小距離
STOP_LINE_EPS = 1e-3


@dataclass(frozen=True)
class GippsParams:
    """
    期望速度 V、最大加速度 A、舒適減速度 B (<0)、前車減速度估計 B̂、反應時間 τ_r、有效車長 s_eff，
    以及紅燈時停在停止線前的靜止餘量
    """
    desired_speed: float = 10.0
    max_accel: float = 1.7
    comfortable_decel: float = -3.4
    leader_decel_estimate: float = -3.0
    reaction_time: float = 0.8
    effective_length: float = 6.5
    stop_margin: float = 0.4

    def __post_init__(self):
        if self.max_accel <= 0:
            raise ValueError(f"A 必須 > 0 (收到 {self.max_accel})")
        if self.comfortable_decel >= 0:
            raise ValueError(f"B 必須 < 0 (收到 {self.comfortable_decel})")
        if self.leader_decel_estimate >= 0:
            raise ValueError(f"B̂ 必須 < 0 (收到 {self.leader_decel_estimate})")
        if self.reaction_time <= 0:
            raise ValueError(f"τ_r 必須 > 0 (收到 {self.reaction_time})")
        if self.stop_margin < 0:
            raise ValueError(f"停止線餘量必須 ≥ 0 (收到 {self.stop_margin})")


class LightPhase(str, Enum):
    GREEN_HORIZONTAL = "green-horizontal"
    GREEN_VERTICAL = "green-vertical"
    CLEARING = "clearing"


@dataclass(frozen=True)
class TrafficLight:
    """定時號誌：水平綠 → 清道 → 垂直綠 → 清道，整體平移 offset"""
    intersection_id: str
    cycle: float = 60.0
    green: float = 25.0
    clearing: float = 5.0
    offset: float = 0.0

    def __post_init__(self):
        if abs(2 * self.green + 2 * self.clearing - self.cycle) > 1e-9:
            raise ValueError(
                f"{self.intersection_id}: 2·綠燈 + 2·清道 ({2 * self.green + 2 * self.clearing}) ≠ 週期 {self.cycle}"
            )


def _cycle_position(light: TrafficLight, t: float) -> float:
    return (t - light.offset) % light.cycle


def light_phase(light: TrafficLight, t: float) -> LightPhase:
    tau = _cycle_position(light, t)
    if tau < light.green:
        return LightPhase.GREEN_HORIZONTAL
    if tau < light.green + light.clearing:
        return LightPhase.CLEARING
    if tau < 2 * light.green + light.clearing:
        return LightPhase.GREEN_VERTICAL
    return LightPhase.CLEARING


def last_green(light: TrafficLight, t: float) -> str:
    """清道期間剛結束綠燈的方向 (horizontal | vertical)"""
    tau = _cycle_position(light, t)
    return "horizontal" if tau < 2 * light.green + light.clearing else "vertical"


def build_signals(network: NetworkConfig, cycle: float = 60.0, green: float = 25.0, clearing: float = 5.0,
                  offset_step: float = 10.0) -> Dict[str, TrafficLight]:
    """每個路口一組號誌，時差 (r + c)·offset_step 形成沿行進方向的綠波"""
    signals = {}
    for iid, inter in sorted(network.intersections.items()):
        r, c = inter.grid_position
        signals[iid] = TrafficLight(intersection_id=iid, cycle=cycle, green=green, clearing=clearing,
                                    offset=((r + c) * offset_step) % cycle)
    return signals


def gipps_speed(v: float, v_leader: float, gap: float, params: GippsParams) -> float:
    """
    Gipps 速度更新：v(t+τ_r) = min(v_acc, v_safe)

    gap 為可用距離 (車輛前車需先扣除 s_eff；紅燈虛擬前車為 -s 扣除停止線餘量)；判別式為負時 v_safe = 0
    """
    V = params.desired_speed
    A = params.max_accel
    B = params.comfortable_decel
    tau = params.reaction_time
    ratio = max(v, 0.0) / V
    v_acc = v + 2.5 * A * tau * (1.0 - ratio) * math.sqrt(0.025 + ratio)

    if math.isinf(gap):
        return max(v_acc, 0.0)
    disc = B * B * tau * tau - B * (2.0 * gap - v * tau - v_leader * v_leader / params.leader_decel_estimate)
    v_safe = B * tau + math.sqrt(disc) if disc >= 0 else 0.0
    return max(min(v_acc, v_safe), 0.0)


class GippsBaseline:
    """
    號誌基準控制器

    每 τ_r 決策一次 (全車同步)，兩次決策之間維持固定加速度
    """

    def __init__(self, params: GippsParams, signals: Optional[Dict[str, TrafficLight]] = None):
        self.params = params
        self.signals = signals or {}

    def __call__(self, state: SimulationState) -> SimulationState:
        return baseline_step(state, self)

    def decision_ticks(self, dt: float) -> int:
        return max(1, int(round(self.params.reaction_time / dt)))

    def must_stop(self, vehicle: Vehicle, orientation: str, intersection_id: str, t: float) -> bool:
        light = self.signals.get(intersection_id)
        if light is None or vehicle.signal_commit == intersection_id:
            return False
        phase = light_phase(light, t)
        if phase == LightPhase.GREEN_HORIZONTAL:
            return orientation != "horizontal"
        if phase == LightPhase.GREEN_VERTICAL:
            return orientation != "vertical"
        if last_green(light, t) != orientation:
            return True
        # 黃燈：能以 B 舒適停下就停，否則承諾通過
        stopping = vehicle.v * vehicle.v / (2.0 * abs(self.params.comfortable_decel))
        if stopping <= -vehicle.s:
            return True
        vehicle.signal_commit = intersection_id
        return False

    def _may_proceed(self, vehicle: Vehicle, state: SimulationState) -> bool:
        """匯入車輛目前可以通過其路口 (綠燈或已承諾通過)，不改變承諾狀態"""
        seg = state.network.segment(vehicle.segment_id)
        light = self.signals.get(seg.downstream_intersection)
        if light is None or vehicle.signal_commit == seg.downstream_intersection:
            return True
        phase = light_phase(light, state.clock)
        if phase == LightPhase.CLEARING:
            return last_green(light, state.clock) == seg.orientation
        return (phase == LightPhase.GREEN_HORIZONTAL) == (seg.orientation == "horizontal")

    def _leader_speed(self, state: SimulationState, vehicle: Vehicle, leaders: List[LeaderView]) -> float:
        """
        對所有前車取 Gipps 速度的最小值

        前車包含同路段前車、下一路段上的車輛，以及從其他路段匯入且可通行的車輛；
        等紅燈的匯入車輛不算前車
        """
        v_next = math.inf
        for view in leaders:
            if view.feeder and not self._may_proceed(view.vehicle, state):
                continue
            gap = view.position - vehicle.s - self.params.effective_length
            v_next = min(v_next, gipps_speed(vehicle.v, view.vehicle.v, gap, self.params))
        if math.isinf(v_next):
            v_next = gipps_speed(vehicle.v, 0.0, math.inf, self.params)
        return v_next

    def stop_line_speed(self, vehicle: Vehicle) -> float:
        """紅燈：停止線前 stop_margin 處視為靜止前車，餘量內直接要求停車"""
        gap = -vehicle.s - self.params.stop_margin
        if gap <= 0.0:
            return 0.0
        return gipps_speed(vehicle.v, 0.0, gap, self.params)

    def decide(self, state: SimulationState):
        lanes = build_lanes(state)
        tau = self.params.reaction_time
        for seg_id, platoon in state.by_segment().items():
            seg = state.network.segment(seg_id)
            for vehicle in platoon:
                v_next = self._leader_speed(state, vehicle, lane_leaders(state, lanes, vehicle))
                if not seg.is_exit and self.must_stop(vehicle, seg.orientation, seg.downstream_intersection,
                                                       state.clock):
                    v_next = min(v_next, self.stop_line_speed(vehicle))
                v_next = min(v_next, self.params.desired_speed)
                accel = (v_next - vehicle.v) / tau
                vehicle.held_accel = min(max(accel, state.bounds.a_min), self.params.max_accel)


def baseline_step(state: SimulationState, controller: GippsBaseline) -> SimulationState:
    """基準策略推進一步 Δt"""
    spawn_arrivals(state)
    if state.tick % controller.decision_ticks(state.dt) == 0:
        controller.decide(state)

    dt = state.dt
    for seg_id, platoon in state.by_segment().items():
        seg = state.network.segment(seg_id)
        for vehicle in platoon:
            target = vehicle.held_accel
            if vehicle.v <= 1e-9 and target < 0.0:
                target = 0.0
            # 不讓速度在本步內跌破 0
            if vehicle.v + target * dt < 0.0:
                target = -vehicle.v / dt
            # 紅燈時本步結束的位置不得越過停止線 (常數急動度下的位移)
            if not seg.is_exit and controller.must_stop(vehicle, seg.orientation, seg.downstream_intersection,
                                                         state.clock):
                limit = 6.0 * (-vehicle.s - STOP_LINE_EPS - vehicle.v * dt) / dt ** 2 - 2.0 * vehicle.a
                if target > limit:
                    target = limit
                    vehicle.held_accel = min(vehicle.held_accel, 0.0)
            vehicle.u = (target - vehicle.a) / dt
            vehicle.phase.theta = vehicle.phase.crossing_phase + vehicle.s * vehicle.phase.omega_n / \
                seg.nominal_speed
            vehicle.mode = "gipps"
            state.mode_counts[vehicle.mode] += 1
            record_state(vehicle, state.tick, state.clock)

    state.mean_phase_history.append((state.tick, math.nan, math.nan, math.nan))
    advance_fleet(state)
    return state
