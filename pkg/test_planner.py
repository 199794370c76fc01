"""
軌跡規劃與 QP 求解器測試
"""
import math
import sys
import os
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
from numpy.testing import assert_allclose

from src.planner import (
    DegenerateHorizonError, LeaderTrack, PlanInfeasibleError, PlanMode, PlannerBounds, PlanningProblem,
    braking_plan, check_constraints, constant_speed_plan, mean_square_jerk, plan_step,
    solve_constrained_qp, solve_unconstrained,
)
from src.qp_solver import PRIMAL_INFEASIBLE, SOLVED, kkt_residuals, solve_qp

BOUNDS = PlannerBounds()


def _integrate_input(plan, h=1e-4):
    """
    以細步長對 u*(τ) 積分到恰好 T (每小段取中點輸入，最後一段長度為 T - (n-1)h)

    分段常數急動度下逐段精確傳遞，以累加和向量化
    """
    n = int(math.ceil(plan.horizon / h - 1e-9))
    widths = np.full(n, h)
    widths[-1] = plan.horizon - (n - 1) * h
    starts = np.concatenate(([0.0], np.cumsum(widths)[:-1]))
    u = plan.input_at(starts + widths / 2.0)
    s0, v0, a0 = plan.state_at(0.0)

    a = a0 + np.concatenate(([0.0], np.cumsum(u * widths)))
    dv = a[:-1] * widths + u * widths ** 2 / 2.0
    v = v0 + np.concatenate(([0.0], np.cumsum(dv)))
    ds = v[:-1] * widths + a[:-1] * widths ** 2 / 2.0 + u * widths ** 3 / 6.0
    return s0 + float(np.sum(ds)), float(v[-1]), float(a[-1])


def _peak_acceleration(plan):
    """由五次式係數求 a(τ) 在 [0, T] 的最大值 (u = 0 的根與兩端點)"""
    c1, c2, c3 = plan.coefficients[:3]
    roots = np.roots([-c1 / 2.0, c2, -c3]) if abs(c1) + abs(c2) > 0 else np.array([])
    candidates = [0.0, plan.horizon] + [float(r.real) for r in roots
                                        if abs(r.imag) < 1e-12 and 0.0 <= r.real <= plan.horizon]
    values = [plan.state_at(t)[2] for t in candidates]
    best = int(np.argmax(values))
    return values[best], candidates[best]


# ========== QP 求解器 ==========

def test_qp_box_constrained():
    P = np.eye(2)
    q = np.array([-1.0, -1.0])
    A = np.eye(2)
    result = solve_qp(P, q, A, np.array([-np.inf, -np.inf]), np.array([0.5, 2.0]))
    assert result.status == SOLVED
    assert_allclose(result.x, [0.5, 1.0], atol=1e-6)
    primal, dual = kkt_residuals(P, q, A, np.array([-np.inf, -np.inf]), np.array([0.5, 2.0]), result.x, result.y)
    assert primal <= 1e-6 and dual <= 1e-6


def test_qp_equality_constrained():
    # min ½‖x‖² s.t. x₁ + x₂ = 1
    result = solve_qp(np.eye(2), np.zeros(2), np.array([[1.0, 1.0]]), np.array([1.0]), np.array([1.0]))
    assert result.solved
    assert_allclose(result.x, [0.5, 0.5], atol=1e-6)


def test_qp_detects_infeasibility():
    A = np.array([[1.0], [1.0]])
    result = solve_qp(np.eye(1), np.zeros(1), A, np.array([1.0, -np.inf]), np.array([np.inf, 0.0]))
    assert not result.solved
    assert result.status == PRIMAL_INFEASIBLE


# ========== 解析解 ==========

def test_uniform_motion_has_zero_jerk():
    plan = solve_unconstrained(PlanningProblem(s0=-100.0, v0=10.0, a0=0.0, horizon=10.0, v_target=10.0))
    assert_allclose(plan.coefficients, [0, 0, 0, 0, 10.0, -100.0], atol=1e-9)
    assert_allclose(plan.input_at(np.linspace(0, 10, 11)), 0.0, atol=1e-9)
    assert abs(mean_square_jerk(plan)) <= 1e-12


def test_analytic_terminal_conditions():
    plan = solve_unconstrained(PlanningProblem(s0=-100.0, v0=8.0, a0=0.0, horizon=10.0, v_target=10.0))
    assert_allclose(_integrate_input(plan), (0.0, 10.0, 0.0), atol=1e-5)
    assert_allclose(plan.terminal_state, (0.0, 10.0, 0.0), atol=1e-9)


def test_analytic_random_boundary_conditions():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        problem = PlanningProblem(s0=-rng.uniform(80, 150), v0=rng.uniform(5, 15), a0=rng.uniform(-1, 1),
                                  horizon=rng.uniform(8, 15), v_target=rng.uniform(5, 15))
        plan = solve_unconstrained(problem)
        assert_allclose(_integrate_input(plan, h=1e-3), (0.0, problem.v_target, 0.0), atol=1e-4)
        # u* 為 τ 的二次式
        taus = np.linspace(0, problem.horizon, 9)
        cubic = np.polyfit(taus, plan.input_at(taus), 3)[0]
        assert abs(cubic) <= 1e-8 * max(1.0, abs(plan.coefficients[0]))


def test_analytic_is_optimal_against_piecewise_constant():
    problem = PlanningProblem(s0=-95.0, v0=10.0, a0=0.0, horizon=10.0, v_target=10.0)
    analytic = solve_unconstrained(problem)
    discrete = solve_constrained_qp(problem, warm_start=analytic, step=0.05)
    assert mean_square_jerk(analytic) > 0.0
    assert mean_square_jerk(discrete) >= mean_square_jerk(analytic) * (1.0 - 1e-6)


def test_replanning_from_plan_state_is_consistent():
    plan = solve_unconstrained(PlanningProblem(s0=-100.0, v0=8.0, a0=0.0, horizon=10.0, v_target=10.0))
    s, v, a = plan.state_at(2.0)
    tail = solve_unconstrained(PlanningProblem(s0=s, v0=v, a0=a, horizon=8.0, v_target=10.0))
    taus = np.linspace(0.0, 8.0, 17)
    assert_allclose(tail.state_at(taus)[0], plan.state_at(taus + 2.0)[0], atol=1e-8)


def test_degenerate_horizon():
    try:
        PlanningProblem(s0=-1.0, v0=10.0, a0=0.0, horizon=0.0, v_target=10.0)
    except DegenerateHorizonError:
        return
    raise AssertionError("T = 0 應拋出 DegenerateHorizonError")


# ========== 約束檢查 ==========

def test_uniform_plan_has_no_violations():
    problem = PlanningProblem(s0=-100.0, v0=10.0, a0=0.0, horizon=10.0, v_target=10.0)
    assert check_constraints(solve_unconstrained(problem), problem).feasible


def test_acceleration_violation_at_peak():
    # 0 → 10 m/s 於 4 s、位移 20 m：s + 20 = 0.625τ³ - 0.078125τ⁴，a 於 τ = 2 達峰值 3.75
    problem = PlanningProblem(s0=-20.0, v0=0.0, a0=0.0, horizon=4.0, v_target=10.0)
    plan = solve_unconstrained(problem)
    peak, at = _peak_acceleration(plan)
    assert_allclose((peak, at), (3.75, 2.0), atol=1e-8)

    report = check_constraints(plan, problem)
    violation = next(v for v in report.violations if v.kind == "a_max")
    assert_allclose(violation.value, peak, atol=1e-6)
    assert_allclose(violation.tau, at, atol=0.11)


def test_gap_violation_flagged():
    leader = constant_speed_plan(-94.0, 10.0, horizon=30.0)
    problem = PlanningProblem(s0=-100.0, v0=10.0, a0=0.0, horizon=10.0, v_target=10.0, leader_plan=leader)
    report = check_constraints(solve_unconstrained(problem), problem)
    assert "gap" in report.kinds()
    gap = next(v for v in report.violations if v.kind == "gap")
    assert_allclose(gap.value, 6.0, atol=1e-6)


# ========== 離散化 QP ==========

def test_qp_matches_analytic_when_inactive():
    problem = PlanningProblem(s0=-100.0, v0=9.6, a0=0.0, horizon=10.0, v_target=10.0)
    analytic = solve_unconstrained(problem)
    qp = solve_constrained_qp(problem, warm_start=analytic, step=0.05)
    s, v, a = analytic.state_at(qp.knot_times)
    assert_allclose(qp.knot_states[:, 0], s, atol=1e-3)
    assert_allclose(qp.knot_states[:, 1], v, atol=1e-3)
    assert_allclose(qp.knot_states[:, 2], a, atol=1e-3)


def test_qp_respects_active_gap():
    # 後車較快，解析解中段會逼近前車
    leader = constant_speed_plan(-91.0, 10.0, horizon=30.0)
    problem = PlanningProblem(s0=-100.0, v0=12.0, a0=0.0, horizon=10.0, v_target=10.0, leader_plan=leader)
    analytic = solve_unconstrained(problem)
    assert "gap" in check_constraints(analytic, problem).kinds()

    qp = solve_constrained_qp(problem, warm_start=analytic)
    gaps = problem.leader_positions(qp.knot_times[1:]) - qp.knot_states[1:, 0]
    assert np.all(gaps >= BOUNDS.min_gap - 1e-4)
    assert_allclose(qp.knot_states[-1], (0.0, 10.0, 0.0), atol=1e-4)


def test_qp_infeasible_without_acceleration():
    bounds = PlannerBounds(a_max=0.0)
    problem = PlanningProblem(s0=-100.0, v0=8.0, a0=0.0, horizon=10.0, v_target=10.0, bounds=bounds)
    try:
        solve_constrained_qp(problem)
    except PlanInfeasibleError as e:
        assert e.status != SOLVED
        return
    raise AssertionError("a_max = 0 應拋出 PlanInfeasibleError")


# ========== 單步規劃 ==========

def test_plan_step_cruising():
    result = plan_step(-100.0, 10.0, 0.0, 10.0, 10.0, BOUNDS, dt=0.1)
    assert result.mode == PlanMode.ANALYTIC
    assert abs(result.u0) <= 1e-9


def test_plan_step_speeds_up_slow_vehicle():
    result = plan_step(-100.0, 8.0, 0.0, 10.0, 10.0, BOUNDS, dt=0.1)
    assert result.mode == PlanMode.ANALYTIC
    assert result.u0 > 0.0


def test_plan_step_uses_qp_when_blocked():
    leader = constant_speed_plan(-91.0, 10.0, horizon=30.0)
    result = plan_step(-100.0, 12.0, 0.0, 10.0, 10.0, BOUNDS, dt=0.1, leader_plan=leader)
    assert result.mode == PlanMode.QP
    assert result.u0 < 0.0


def test_leader_envelope_takes_nearest_track():
    near = LeaderTrack(constant_speed_plan(-70.0, 10.0, horizon=30.0), position_offset=-21.0)
    far = LeaderTrack(constant_speed_plan(-85.0, 8.0, horizon=30.0), time_offset=1.0)
    problem = PlanningProblem(s0=-100.0, v0=10.0, a0=0.0, horizon=10.0, v_target=10.0, leaders=(near, far))
    taus = np.linspace(0.0, 10.0, 11)
    assert_allclose(problem.leader_positions(taus), np.minimum(-91.0 + 10.0 * taus, -77.0 + 8.0 * taus))
    assert PlanningProblem(s0=-100.0, v0=10.0, a0=0.0, horizon=10.0, v_target=10.0).leader_positions(taus) is None


def test_plan_step_with_offset_leader_matches_same_segment_leader():
    # 下一路段上的前車換算回本路段座標後，應與同路段前車得到相同的規劃
    same = plan_step(-100.0, 12.0, 0.0, 10.0, 10.0, BOUNDS, dt=0.1,
                     leader_plan=constant_speed_plan(-91.0, 10.0, horizon=30.0))
    mapped = plan_step(-100.0, 12.0, 0.0, 10.0, 10.0, BOUNDS, dt=0.1,
                       leaders=[LeaderTrack(constant_speed_plan(-70.0, 10.0, horizon=30.0), position_offset=-21.0)])
    assert mapped.mode == PlanMode.QP
    assert_allclose(mapped.u0, same.u0, atol=1e-6)


def test_plan_step_falls_back_to_braking():
    bounds = PlannerBounds(a_max=0.0)
    result = plan_step(-100.0, 8.0, 0.0, 10.0, 10.0, bounds, dt=0.1)
    assert result.mode == PlanMode.EMERGENCY
    assert_allclose(result.u0, bounds.a_min / 0.1)


def test_braking_plan_stops():
    plan = braking_plan(-50.0, 10.0, 0.0, BOUNDS, dt=0.1)
    s, v, a = plan.knot_states.T
    assert np.all(np.diff(v) <= 1e-12)
    assert np.all(a >= BOUNDS.a_min - 1e-9)
    assert v[-1] == 0.0 and a[-1] == 0.0
    # 以 a_min 停止距離約 v²/(2|a_min|)
    assert_allclose(s[-1] - s[0], 100.0 / 8.0, atol=1.5)


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
