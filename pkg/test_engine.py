"""
模擬引擎測試
閉迴路行為：等速通過、衝突車流錯開半個週期、稽核與可重現性
"""
import math
import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose

from src.arrivals import ArrivalProcess, ArrivalRecord, generate_arrivals
from src.engine import (
    KURAMOTO, EngineOptions, SimulationState, approach_trajectories, conflict_audit, crossings_frame, run_simulation,
    step, trajectory_frame, vehicle_trace,
)
from src.kuramoto import KuramotoParams, arrival_time
from src.network import Movement, build_grid_network
from src.planner import PlanMode, PlannerBounds


def _network(rows=1, cols=1, offset_vertical=math.pi, strict=True):
    return build_grid_network(rows=rows, cols=cols, segment_length=90.0, box_length=10.0, entry_length=190.0,
                              wavelength=20.0, nominal_speed=10.0, offset_horizontal=0.0,
                              offset_vertical=offset_vertical, strict=strict)


def _state(arrivals, network=None, strategy=KURAMOTO):
    network = network or _network()
    params = KuramotoParams(natural_frequency=network.natural_frequency)
    return SimulationState(network, params, PlannerBounds(), arrivals, strategy=strategy)


def _arrival(vid, entry, tick=0, route=(Movement.STRAIGHT,)):
    return ArrivalRecord(vehicle_id=vid, tick=tick, request_time=tick * 0.1, entry_segment=entry, route=route)


def test_empty_network_only_advances_clock():
    state = _state([])
    for _ in range(10):
        step(state)
    assert state.tick == 10
    assert_allclose(state.clock, 1.0)
    assert not state.vehicles and not state.completed
    assert len(state.mean_phase_history) == 10


def test_synchronized_vehicle_cruises_through_three_intersections():
    straight = (Movement.STRAIGHT,) * 3
    state = _state([_arrival(0, "H0-0", route=straight)], network=_network(rows=1, cols=3))
    run_simulation(state, step, duration=1.0, drain_time=80.0, show_progress=False)

    vehicle = state.completed[0]
    speeds = np.array([row[4] for row in vehicle.log])
    assert np.all(np.abs(speeds - 10.0) <= 0.5)

    events = [e for e in state.crossings if e.vehicle_id == 0]
    assert len(events) == 3
    assert_allclose(events[0].entry_time, 19.0, atol=0.1)
    for event in events:
        assert event.mapping_jump <= 1e-6

    # 190 + 3×100 m，以名目速度行駛
    assert_allclose(vehicle.route_distance, 490.0)
    assert_allclose(vehicle.exit_time - vehicle.request_time, 49.0, atol=0.2)


def test_exit_removes_vehicle_from_population():
    state = _state([_arrival(0, "H0-0")])
    run_simulation(state, step, duration=1.0, drain_time=60.0, show_progress=False)
    assert 0 in state.completed
    assert not state.vehicles
    assert state.completed[0].completed


def test_conflicting_vehicles_cross_half_period_apart():
    state = _state([_arrival(0, "H0-0"), _arrival(1, "V0-0")])
    run_simulation(state, step, duration=1.0, drain_time=60.0, show_progress=False)

    times = {e.vehicle_id: e.conflict_time for e in state.crossings if e.intersection_id == "I0-0"}
    assert set(times) == {0, 1}
    half_period = math.pi / state.network.natural_frequency
    assert_allclose(abs(times[0] - times[1]), half_period, atol=0.2)
    assert conflict_audit(state).passed


def test_zeroed_offsets_raise_conflict_flags():
    network = _network(offset_vertical=0.0, strict=False)
    state = _state([_arrival(0, "H0-0"), _arrival(1, "V0-0")], network=network)
    run_simulation(state, step, duration=1.0, drain_time=60.0, show_progress=False)
    report = conflict_audit(state)
    assert not report.passed
    assert report.conflict_flags[0].intersection_id == "I0-0"


def test_queued_arrival_waits_for_space():
    state = _state([_arrival(0, "H0-0"), _arrival(1, "H0-0")])
    for _ in range(3):
        step(state)
    assert 1 not in state.vehicles
    assert state.queued() == 1

    run_simulation(state, step, duration=1.0, drain_time=60.0, show_progress=False)
    first, second = state.completed[0], state.completed[1]
    assert second.spawn_time >= 0.6
    assert second.request_time == 0.0
    assert not conflict_audit(state).gap_flags
    assert first.exit_time < second.exit_time


def test_random_stream_is_safe_and_deterministic():
    def run_once():
        network = _network(rows=3, cols=3)
        params = KuramotoParams(natural_frequency=network.natural_frequency)
        arrivals = generate_arrivals(network, ArrivalProcess(rate_veh_per_h=750.0, seed=4), 30.0, 0.1)
        state = SimulationState(network, params, PlannerBounds(), arrivals)
        run_simulation(state, step, duration=30.0, drain_time=10.0, show_progress=False)
        return state

    first = run_once()
    second = run_once()
    pd.testing.assert_frame_equal(trajectory_frame(first), trajectory_frame(second))
    pd.testing.assert_frame_equal(crossings_frame(first), crossings_frame(second))
    assert not conflict_audit(first).conflict_flags


def test_trajectory_downsampling():
    state = _state([_arrival(0, "H0-0")])
    run_simulation(state, step, duration=1.0, drain_time=5.0, show_progress=False)
    full = trajectory_frame(state)
    sparse = trajectory_frame(state, every=10)
    assert len(sparse) < len(full)
    assert list(full.columns)[:3] == ["t_s", "vehicle_id", "segment_id"]


def test_exports_for_single_intersection():
    state = _state([_arrival(0, "H0-0"), _arrival(1, "V0-0")])
    run_simulation(state, step, duration=1.0, drain_time=60.0, show_progress=False)

    approach = approach_trajectories(state, "I0-0")
    horizontal = approach[approach["orientation"] == "horizontal"]
    vertical = approach[approach["orientation"] == "vertical"]
    assert (horizontal["distance_m"] >= 0).all()
    assert (vertical["distance_m"] <= 0).all()

    trace = vehicle_trace(state, 0)
    assert len(trace) == len(state.completed[0].log)
    assert "coherence" in trace.columns


def test_grid_arrivals_draw_one_turn_per_intersection():
    network = _network(rows=3, cols=3)
    process = ArrivalProcess(rate_veh_per_h=750.0, turn_probability=0.2, seed=1)
    first = generate_arrivals(network, process, 60.0, 0.1)
    second = generate_arrivals(network, process, 60.0, 0.1)
    assert first
    assert first == second
    assert all(len(r.route) == 9 for r in first)
    assert {r.entry_segment for r in first} <= {seg.id for seg in network.entry_segments()}


def test_default_clearance_follows_box_length():
    state = _state([_arrival(0, "H0-0")])
    assert_allclose(state.clearance("I0-0"), 1.0)
    run_simulation(state, step, duration=1.0, drain_time=40.0, show_progress=False)
    assert_allclose(conflict_audit(state).clearance_s, 1.0)

    override = SimulationState(state.network, state.kuramoto, PlannerBounds(), [],
                               options=EngineOptions(clearance_s=0.8))
    assert_allclose(override.clearance("I0-0"), 0.8)
    try:
        EngineOptions(clearance_s=0.0)
        assert False, "clearance_s = 0 應被拒絕"
    except ValueError:
        pass


def test_right_turn_merge_keeps_gaps_and_completes():
    # I1-0：V0-0 直行車與 H1-0 右轉車匯入同一出口路段
    network = _network(rows=2, cols=1)
    arrivals = []
    for k in range(6):
        arrivals.append(ArrivalRecord(vehicle_id=2 * k, tick=20 * k, request_time=2.0 * k, entry_segment="V0-0",
                                      route=(Movement.STRAIGHT, Movement.STRAIGHT)))
        arrivals.append(ArrivalRecord(vehicle_id=2 * k + 1, tick=20 * k, request_time=2.0 * k,
                                      entry_segment="H1-0", route=(Movement.RIGHT,)))
    state = _state(arrivals, network=network)
    run_simulation(state, step, duration=12.0, drain_time=120.0, show_progress=False)

    assert len(state.completed) == 12
    assert not state.vehicles
    report = conflict_audit(state)
    assert not report.gap_flags
    assert not report.conflict_flags
    merged = [e for e in state.crossings if e.intersection_id == "I1-0"]
    assert {e.movement for e in merged} == {"straight", "right"}


def test_stopped_vehicle_takes_a_later_beacon():
    state = _state([_arrival(0, "H0-0")])
    step(state)
    vehicle = state.vehicles[0]
    # 急煞後停在入口前 5 m，相位已幾乎走到通過相位
    vehicle.s, vehicle.v, vehicle.a = -5.0, 0.0, 0.0
    vehicle.plan = None
    vehicle.phase.theta = vehicle.phase.crossing_phase - 0.05 * vehicle.phase.omega_n
    resets = state.resets

    step(state)
    assert vehicle.mode != PlanMode.FROZEN.value
    assert arrival_time(vehicle.phase) >= 1.0
    assert state.resets > resets

    run_simulation(state, step, duration=0.0, drain_time=30.0, show_progress=False)
    assert 0 in state.completed
    assert state.completed[0].exit_time is not None


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_") and callable(v)]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"  [PASS] {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"  [FAIL] {test.__name__}: {e}")
    print(f"\n{len(tests) - failed}/{len(tests)} 通過")
    sys.exit(1 if failed else 0)
