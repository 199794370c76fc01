"""
路網模組測試
相位映射、設計期約束與網格建構
"""
import math
import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
from numpy.testing import assert_allclose

from src.network import (
    IntersectionGeometry, InvalidGeometryError, Movement, NetworkConfig, NetworkConstructionError,
    RoadSegment, beacon_capacity_veh_per_h, build_grid_network, natural_frequency, phase_to_position,
    position_to_phase, validate_continuity, validate_network, validate_servicing,
)


def _grid(**overrides):
    kwargs = dict(rows=3, cols=3, segment_length=90.0, box_length=10.0, entry_length=190.0,
                  wavelength=20.0, nominal_speed=10.0, offset_horizontal=0.0, offset_vertical=math.pi)
    kwargs.update(overrides)
    return build_grid_network(**kwargs)


def _segment(sid="A", length=90.0, wavelength=20.0, offset=0.0):
    return RoadSegment(id=sid, length=length, wavelength=wavelength, offset=offset, nominal_speed=10.0)


# ========== 相位映射 ==========

def test_phase_to_position():
    seg = _segment()
    assert phase_to_position(seg, 0.0) == 0.0
    assert_allclose(phase_to_position(seg, 2 * math.pi), 20.0)
    assert_allclose(phase_to_position(_segment(offset=math.pi), 0.0), -10.0)


def test_position_to_phase():
    assert position_to_phase(_segment(), 0.0) == 0.0
    assert_allclose(position_to_phase(_segment(offset=math.pi), -100.0), math.pi - 10 * math.pi)
    assert_allclose(position_to_phase(_segment(), -190.0), -19 * math.pi)


def test_mapping_round_trip():
    seg = _segment(offset=1.234)
    for s in np.linspace(-190.0, 0.0, 37):
        assert abs(phase_to_position(seg, position_to_phase(seg, s)) - s) <= 1e-9


def test_natural_frequency():
    assert_allclose(natural_frequency(10.0, 20.0), math.pi)
    assert_allclose(natural_frequency(20.0, 40.0), math.pi)
    assert_allclose(natural_frequency(15.0, 20.0), 1.5 * math.pi)
    assert_allclose(beacon_capacity_veh_per_h(10.0, 20.0), 1800.0)


def test_invalid_wavelength():
    try:
        _segment(wavelength=0.0)
    except InvalidGeometryError:
        return
    raise AssertionError("λ = 0 應拋出 InvalidGeometryError")


# ========== 設計期約束 ==========

def test_servicing_constraint():
    box = IntersectionGeometry(id="I", box_length=10.0, conflict_distances={"A": 5.0, "B": 5.0})
    ok = validate_servicing(box, (_segment("A"), _segment("B", offset=math.pi)))
    assert ok.passed
    assert abs(ok.residual) <= 1e-9

    bad = validate_servicing(box, (_segment("A"), _segment("B", offset=0.0)))
    assert not bad.passed
    assert_allclose(abs(bad.residual), math.pi)


def test_continuity_constraint():
    box = IntersectionGeometry(id="I", box_length=10.0)
    ok = validate_continuity(_segment("A"), _segment("B"), box)
    assert ok.passed

    bad = validate_continuity(_segment("A"), _segment("B", offset=math.pi / 2), box)
    assert not bad.passed
    assert_allclose(bad.residual, math.pi / 2)


# ========== 網格建構 ==========

def test_default_grid():
    network = _grid()
    assert len(network.segments) == 24
    assert len(network.intersections) == 9
    assert len(network.entry_segments()) == 6
    assert validate_network(network, min_gap=7.0).all_passed


def test_smallest_grid():
    network = _grid(rows=1, cols=1)
    assert len(network.segments) == 4
    assert len(network.intersections) == 1


def test_wavelength_not_dividing_block_rejected():
    try:
        _grid(wavelength=30.0)
    except NetworkConstructionError as e:
        assert any("30" in f for f in e.failures)
        return
    raise AssertionError("λ = 30 應拋出 NetworkConstructionError")


def test_non_strict_grid_reports_continuity_failure():
    network = _grid(wavelength=30.0, strict=False)
    report = validate_network(network)
    assert not report.all_passed
    assert any(f.name.startswith("continuity") for f in report.failures)


def test_transition_and_approach_length():
    network = _grid()
    next_id, start = network.transition("H0-0", Movement.STRAIGHT)
    assert next_id == "H0-1"
    assert_allclose(start, -100.0)
    assert_allclose(network.approach_length("H0-0", Movement.STRAIGHT), 100.0)
    assert_allclose(network.approach_length("H0-0"), 190.0)

    # uniform: 向東道路右轉進入向南道路
    right_id, right_start = network.transition("H0-0", Movement.RIGHT)
    assert right_id == "V0-1"
    assert_allclose(right_start, -(90.0 + math.pi * 10.0 / 4.0))

    # 向南道路的右側是向西，uniform 網格中不存在
    assert network.successor("V0-0", Movement.RIGHT) is None


def test_mapped_transition_and_clearance():
    network = _grid()
    next_id, start, shift = network.mapped_transition("H0-0", Movement.STRAIGHT)
    assert (next_id, start) == network.transition("H0-0", Movement.STRAIGHT)
    assert_allclose(math.remainder(shift, 2 * math.pi), 0.0, atol=1e-9)

    # 右轉弧長 π·10/4 使信標偏離下一路段格點 π²/4 rad
    right_id, right_start, right_shift = network.mapped_transition("H0-0", Movement.RIGHT)
    assert right_id == "V0-1"
    assert_allclose(math.remainder(right_shift, 2 * math.pi), -math.pi ** 2 / 4.0, atol=1e-9)

    assert_allclose(network.clearance_time("I1-1"), 1.0)
    slow = _grid(nominal_speed=5.0, strict=False)
    assert_allclose(slow.clearance_time("I0-0"), 2.0)


def test_alternating_directions():
    network = _grid(direction_pattern="alternating")
    headings = {s.heading for s in network.segments.values()}
    assert headings == {"E", "W", "S", "N"}
    assert validate_network(network).all_passed


def test_network_dict_round_trip():
    network = _grid()
    rebuilt = NetworkConfig.from_dict(network.to_dict())
    assert sorted(rebuilt.segments) == sorted(network.segments)
    assert rebuilt.segment("H1-2").successors == network.segment("H1-2").successors
    assert_allclose(rebuilt.natural_frequency, network.natural_frequency)


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
