"""
指標模組測試
輪端功率、油耗、能量分解、延滯與比較報告
"""
import sys
import tempfile
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pandas as pd
from numpy.testing import assert_allclose

from src.metrics import (
    METRIC_COLUMNS, FuelModel, IncompleteRouteError, LongitudinalParams, ReportWindowError, VehicleMetrics,
    aggregate_report, delay_time, energy_balance_audit, energy_losses, engine_fuel_rate, load_fuel_table,
    wheel_power,
)

PARAMS = LongitudinalParams()
FUEL = FuelModel()


def _frame(strategy, fuel, delay, brake=None, completed=None):
    n = len(fuel)
    brake = brake if brake is not None else [1.0] * n
    completed = completed if completed is not None else [True] * n
    rows = [VehicleMetrics(vehicle_id=k, strategy=strategy, completed=completed[k], fuel_g=fuel[k],
                           delay_s_per_m=delay[k], brake_kJ=brake[k], drag_kJ=2.0, rolling_kJ=3.0).as_row()
            for k in range(n)]
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


# ========== 功率與油耗 ==========

def test_wheel_power_cruise():
    # (½·1.225·0.6·10² + 0.01·1200·9.81)·10 W
    assert_allclose(wheel_power(10.0, 0.0, PARAMS), 1.5447, atol=1e-4)


def test_wheel_power_negative_when_braking():
    assert wheel_power(10.0, -2.0, PARAMS) < 0.0
    assert_allclose(wheel_power(np.array([0.0, 10.0]), np.array([0.0, 0.0]), PARAMS), [0.0, 1.5447], atol=1e-4)


def test_fuel_rate():
    assert_allclose(engine_fuel_rate(1.5447, 0.9, FUEL), 0.15 + 0.07 * 1.5447 / 0.9, atol=1e-9)
    assert_allclose(engine_fuel_rate(1.5447, 0.9, FUEL), 0.2701, atol=1e-4)
    # 煞車時只計怠速
    assert_allclose(engine_fuel_rate(-20.0, 0.9, FUEL), FUEL.idle_rate)


def test_tabulated_fuel_model():
    model = FuelModel(table_power_kw=(0.0, 10.0, 20.0), table_rate_g_per_s=(0.2, 0.8, 1.6))
    assert model.tabulated
    assert_allclose(model.rate(5.0), 0.5)
    assert_allclose(model.rate(-5.0), 0.2)


def test_fuel_table_from_csv():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "fuel.csv")
        pd.DataFrame({"power_kw": [20.0, 0.0, 10.0], "fuel_rate_g_per_s": [1.6, 0.2, 0.8]}).to_csv(path, index=False)
        model = load_fuel_table(path)
    assert model.table_power_kw == (0.0, 10.0, 20.0)
    assert_allclose(model.rate(15.0), 1.2)


def test_fuel_model_validation():
    try:
        FuelModel(table_power_kw=(0.0, 10.0), table_rate_g_per_s=(0.5, 0.2))
    except ValueError:
        return
    raise AssertionError("油耗隨功率遞減應拋出 ValueError")


# ========== 能量分解 ==========

def test_brake_energy_equals_kinetic_energy_without_losses():
    lossless = LongitudinalParams(drag_area=0.0, rolling_coefficient=0.0)
    times = np.linspace(0.0, 5.0, 51)
    speeds = 10.0 - 2.0 * times
    energy = energy_losses(times, speeds, lossless)
    assert_allclose(energy.brake, 60.0, atol=1e-9)
    assert_allclose(energy.kinetic, -60.0, atol=1e-9)
    assert energy.propulsive == 0.0


def test_cruise_has_no_brake_loss():
    times = np.linspace(0.0, 10.0, 101)
    energy = energy_losses(times, np.full_like(times, 10.0), PARAMS, FUEL)
    assert energy.brake == 0.0
    assert_allclose(energy.drag, 36.75 * 100.0 / 1000.0)
    assert_allclose(energy.rolling, 117.72 * 100.0 / 1000.0)
    assert_allclose(energy.fuel, 10.0 * engine_fuel_rate(1.5447, 0.9, FUEL), rtol=1e-4)


def test_energy_balance_closes():
    times = np.linspace(0.0, 20.0, 201)
    speeds = 10.0 + 3.0 * np.sin(times / 2.0)
    energy = energy_losses(times, speeds, PARAMS, FUEL)
    assert energy.brake > 0.0
    assert energy.balance_residual_pct <= 1e-6


def test_short_log_is_empty():
    energy = energy_losses([0.0], [10.0], PARAMS)
    assert energy.propulsive == 0.0 and energy.brake == 0.0


def test_more_braking_burns_more_fuel():
    times = np.linspace(0.0, 20.0, 201)
    smooth = energy_losses(times, np.full_like(times, 10.0), PARAMS, FUEL)
    stop_and_go = energy_losses(times, 10.0 + 5.0 * np.sin(times), PARAMS, FUEL)
    assert stop_and_go.fuel > smooth.fuel
    assert stop_and_go.brake > smooth.brake


# ========== 延滯 ==========

def test_delay_time():
    assert_allclose(delay_time(12.5, 100.0, 10.0), 0.025)
    assert_allclose(delay_time(15.0, 100.0, 10.0), 0.05)
    assert delay_time(10.0, 100.0, 10.0) == 0.0
    # 數值誤差的負值有下限
    assert delay_time(9.0, 100.0, 10.0) == -1e-6


def test_delay_requires_completed_route():
    try:
        delay_time(None, 100.0, 10.0)
    except IncompleteRouteError:
        return
    raise AssertionError("未完成路線應拋出 IncompleteRouteError")


def test_energy_balance_audit():
    df = _frame("kuramoto", [1.0, 1.0], [0.0, 0.0])
    df["balance_residual_pct"] = [0.1, 5.0]
    assert energy_balance_audit(df, tolerance_pct=1.0) == [1]


# ========== 比較報告 ==========

def test_self_comparison_has_zero_reduction():
    df = _frame("kuramoto", [10.0, 12.0, 14.0], [0.01, 0.02, 0.03])
    report = aggregate_report(df, df.copy(), window=(1, 3))
    assert report.vehicles == 3
    for value in report.reductions_pct.values():
        assert_allclose(value, 0.0)
    assert report.reference == "kuramoto_reference"


def test_reductions_and_largest_loss():
    cand = _frame("kuramoto", [5.0, 5.0], [0.01, 0.01], brake=[0.0, 0.0])
    ref = _frame("baseline", [10.0, 10.0], [0.04, 0.04], brake=[20.0, 20.0])
    report = aggregate_report(cand, ref, window=(1, 2))
    assert_allclose(report.reductions_pct["fuel_g"], 50.0)
    assert_allclose(report.reductions_pct["delay_s_per_m"], 75.0)
    assert_allclose(report.reductions_pct["brake_kJ"], 100.0)
    assert report.largest_loss_reduction == "brake_kJ"
    assert list(report.point_cloud.columns)[0] == "vehicle_id"
    assert len(report.loss_frame()) == 3
    assert report.to_dict()["largest_loss_reduction"] == "brake_kJ"


def test_window_uses_vehicles_completed_in_both_runs():
    cand = _frame("kuramoto", [1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5, completed=[True, True, False, True, True])
    ref = _frame("baseline", [1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5, completed=[True, False, True, True, True])
    report = aggregate_report(cand, ref, window=(1, 3))
    assert list(report.point_cloud["vehicle_id"]) == [0]

    # 1 起算：視窗 (2, 3) 只含序號 1、2
    try:
        aggregate_report(cand, ref, window=(2, 3))
    except ReportWindowError:
        pass
    else:
        raise AssertionError("視窗內沒有共同完成車輛應拋出 ReportWindowError")


def test_window_beyond_completed_vehicles():
    # 到達數足夠，但兩次執行都完成的只有 0、3、4 三輛
    cand = _frame("kuramoto", [1.0] * 5, [0.0] * 5, completed=[True, True, False, True, True])
    ref = _frame("baseline", [1.0] * 5, [0.0] * 5, completed=[True, False, True, True, True])
    aggregate_report(cand, ref, window=(1, 3))
    try:
        aggregate_report(cand, ref, window=(1, 4))
    except ReportWindowError as e:
        assert "3" in str(e)
    else:
        raise AssertionError("視窗超出共同完成車輛數應拋出 ReportWindowError")


def test_window_beyond_arrivals():
    df = _frame("kuramoto", [1.0, 2.0], [0.0, 0.0])
    try:
        aggregate_report(df, df, window=(100, 600))
    except ReportWindowError:
        return
    raise AssertionError("視窗超出到達數應拋出 ReportWindowError")


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
