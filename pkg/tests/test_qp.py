"""Active-set QP solver checks against the enumeration reference."""

from __future__ import annotations

import numpy as np
import pytest

from nmpcm.qp import (
    DenseQpSolver,
    QpProblem,
    QpStatus,
    kkt_error,
    load_problem,
    save_problem,
    warm_solve_iterations,
)
from nmpcm.qp_brute import generate_problem, solve_by_enumeration


def spd(rng, n):
    m = rng.normal(size=(n, n))
    return m.T @ m + np.eye(n)


def test_unconstrained_matches_linear_solve(backend_name, rng):
    n = 6
    h = spd(rng, n)
    g = rng.normal(size=n)
    prob = QpProblem(h, g, np.full(n, -np.inf), np.full(n, np.inf))
    sol = DenseQpSolver(n, backend_name=backend_name).solve(prob)
    assert sol.status is QpStatus.SOLVED
    assert sol.iterations == 0
    assert np.allclose(sol.x_opt, np.linalg.solve(h, -g), rtol=1e-10, atol=1e-12)


def test_active_box_bounds(backend_name):
    # minimizer of 0.5|x|^2 + g'x is (-1, 3); the box pins both coordinates
    prob = QpProblem(np.eye(2), np.array([1.0, -3.0]),
                     np.array([-0.5, -2.0]), np.array([2.0, 1.0]))
    sol = DenseQpSolver(2, backend_name=backend_name).solve(prob)
    assert sol.status is QpStatus.SOLVED
    assert np.allclose(sol.x_opt, [-0.5, 1.0], atol=1e-12)
    assert sol.var_status[0] == -1 and sol.var_status[1] == 1
    err = kkt_error(prob, sol)
    assert max(err.values()) < 1e-10


def test_general_row_activates(backend_name):
    # min 0.5 x^2 - 3x subject to x <= 1 via a general row
    prob = QpProblem(np.array([[1.0]]), np.array([-3.0]),
                     np.array([-np.inf]), np.array([np.inf]),
                     c=np.array([[1.0]]), cl=np.array([-np.inf]),
                     cu=np.array([1.0]))
    sol = DenseQpSolver(1, 1, backend_name=backend_name).solve(prob)
    assert sol.status is QpStatus.SOLVED
    assert sol.x_opt[0] == pytest.approx(1.0, abs=1e-12)
    assert sol.gen_status[0] == 1
    # stationarity: x - 3 + lam = 0 at x = 1
    assert sol.lam[0] == pytest.approx(2.0, abs=1e-10)


def test_warm_restart_costs_zero_iterations(backend_name, rng):
    prob = generate_problem(rng, 8, 5)
    solver = DenseQpSolver(8, 5, backend_name=backend_name)
    first = solver.solve(prob)
    assert first.status is QpStatus.SOLVED
    again = solver.solve(prob, warm=True)
    assert again.status is QpStatus.SOLVED
    assert again.iterations == 0
    assert np.allclose(again.x_opt, first.x_opt, atol=1e-12)
    # explicit active-set hand-off into a fresh instance still solves (the
    # primal point is not part of the hand-off, so iterations may be > 0)
    third = DenseQpSolver(8, 5, backend_name=backend_name).solve(
        prob, warm=first.active_set)
    assert third.status is QpStatus.SOLVED
    assert np.allclose(third.x_opt, first.x_opt, atol=1e-10)


def test_tiny_perturbation_keeps_active_set(backend_name, rng):
    prob = generate_problem(rng, 8, 5)
    solver = DenseQpSolver(8, 5, backend_name=backend_name)
    first = solver.solve(prob)
    nudged = QpProblem(prob.h, prob.g + 1e-12, prob.lb, prob.ub,
                       prob.c, prob.cl, prob.cu)
    second = solver.solve(nudged, warm=True)
    assert second.iterations == 0
    assert np.array_equal(second.var_status, first.var_status)
    assert np.array_equal(second.gen_status, first.gen_status)


def test_random_battery_matches_enumeration(backend_name, rng):
    solver = DenseQpSolver(6, 4, backend_name=backend_name)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(0, 5))
        prob = generate_problem(rng, n, m)
        x_ref, _ = solve_by_enumeration(prob)
        sol = solver.solve(prob)
        assert sol.status is QpStatus.SOLVED
        assert np.abs(sol.x_opt - x_ref).max() < 1e-7
        err = kkt_error(prob, sol)
        scale = 1.0 + np.abs(prob.g).max()
        assert err["stationarity"] / scale < 1e-8
        assert err["feasibility"] < 1e-8
        assert err["sign_violation"] < 1e-8


def test_solution_beats_random_feasible_points(backend_name, rng):
    prob = generate_problem(rng, 6, 3)
    sol = DenseQpSolver(6, 3, backend_name=backend_name).solve(prob)
    f_opt = prob.objective(sol.x_opt)
    tried = 0
    while tried < 100:
        x = rng.uniform(prob.lb, prob.ub)
        r = prob.c @ x
        if np.any(r < prob.cl - 1e-12) or np.any(r > prob.cu + 1e-12):
            continue
        tried += 1
        assert f_opt <= prob.objective(x) + 1e-10


def test_infeasible_rows_detected(backend_name):
    # x >= 1 and x <= -1 cannot both hold
    prob = QpProblem(np.array([[1.0]]), np.array([0.0]),
                     np.array([-10.0]), np.array([10.0]),
                     c=np.array([[1.0], [1.0]]),
                     cl=np.array([1.0, -np.inf]),
                     cu=np.array([np.inf, -1.0]))
    sol = DenseQpSolver(1, 2, backend_name=backend_name).solve(prob)
    assert sol.status is QpStatus.INFEASIBLE


def test_capacity_reuse_across_sizes(backend_name, rng):
    solver = DenseQpSolver(8, 6, backend_name=backend_name)
    for n, m in ((3, 2), (8, 6), (1, 0), (5, 4), (2, 1)):
        prob = generate_problem(rng, n, m)
        x_ref, _ = solve_by_enumeration(prob)
        sol = solver.solve(prob)
        assert sol.status is QpStatus.SOLVED
        assert np.abs(sol.x_opt - x_ref).max() < 1e-7


def test_warm_stream_never_slower_in_total(backend_name, rng):
    # slowly drifting problem family, the RTI usage pattern
    base = generate_problem(rng, 8, 5)
    problems = []
    for k in range(20):
        problems.append(QpProblem(
            base.h, base.g + 0.01 * k, base.lb, base.ub,
            base.c, base.cl, base.cu))
    cold, warmed = warm_solve_iterations(problems, 8, 5,
                                         backend_name=backend_name)
    assert warmed.sum() <= cold.sum()
    # after the first solve the drifted problems mostly keep their set
    assert warmed[1:].mean() <= cold[1:].mean()


def test_text_round_trip(tmp_path, rng):
    prob = generate_problem(rng, 5, 3)
    path = tmp_path / "prob.txt"
    save_problem(path, prob)
    back = load_problem(path)
    assert np.array_equal(back.h, prob.h)
    assert np.array_equal(back.g, prob.g)
    assert np.array_equal(back.lb, prob.lb)
    assert np.array_equal(back.ub, prob.ub)
    assert np.array_equal(back.c, prob.c)
    assert np.array_equal(back.cl, prob.cl)
    assert np.array_equal(back.cu, prob.cu)


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(3), np.zeros(3), np.ones(3))
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(2), np.ones(2), np.zeros(2))
    with pytest.raises(ValueError):
        QpProblem(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2),
                  np.zeros(2), np.ones(2))
