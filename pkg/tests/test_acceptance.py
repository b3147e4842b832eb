"""Acceptance gate: the contract checks for the whole engine, one test each.

Each test states its budget inline (tolerances, time limits, byte caps) and
fails loudly when the engine drifts out of the envelope. Heavier scenario
runs are shared through module-scoped fixtures so the gate stays fast.
"""

from __future__ import annotations

import dataclasses
import gc
import time
import tracemalloc

import numpy as np
import pytest

from conftest import bundled_config, random_controls, random_flight_states

from nmpcm import backend, cli, qp_brute
from nmpcm.config import load_config
from nmpcm.metrics import compute
from nmpcm.quad import NU, NX, QuadParams, rk4_step, rk4_step_with_sensitivities
from nmpcm.rti import OcpConfig, RtiSolver
from nmpcm.sim import ocp_with, run_scenario

P = QuadParams()

HAS_COMPILED = "compiled" in backend.available_backends()
needs_compiled = pytest.mark.skipif(not HAS_COMPILED,
                                    reason="compiled backend not built")


# -- shared scenario runs -------------------------------------------------


@pytest.fixture(scope="module")
def step_run():
    cfg = load_config(bundled_config("step"))
    trace = run_scenario(cfg)
    return cfg, trace, compute(trace, cfg.target_position)


@pytest.fixture(scope="module")
def pid_run(step_run):
    cfg, _, _ = step_run
    cfg_pid = dataclasses.replace(cfg, controller="pid")
    trace = run_scenario(cfg_pid)
    return cfg_pid, trace, compute(trace, cfg_pid.target_position)


# -- 1: QP core against exhaustive enumeration ----------------------------


def test_qp_core_matches_enumeration_oracle():
    res = qp_brute.run_suite(500, 12, 8, 20240817)
    assert res["count"] == 500
    assert res["failures"] == [], res["failures"][:3]
    assert res["passed"] == 500
    assert res["max_dx"] <= 1e-7
    assert res["max_kkt_rel"] <= 1e-8
    assert res["elapsed_s"] < 30.0


# -- 2: discrete-map Jacobians against central differences ----------------


def test_discrete_jacobians_match_central_differences():
    rng = np.random.default_rng(777)
    xs = random_flight_states(rng, 1000)
    us = random_controls(rng, 1000)
    dt, sub = 0.1, 2
    t0 = time.perf_counter()
    for x, u in zip(xs, us):
        _, jac = rk4_step_with_sensitivities(x, u, P, dt, sub)
        for i in range(NX):
            h = 1e-6 * (1.0 + abs(x[i]))
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            col = (rk4_step(xp, u, P, dt, sub) - rk4_step(xm, u, P, dt, sub)) / (2 * h)
            assert np.all(np.abs(col - jac.a[:, i]) <= 1e-7 + 1e-4 * np.abs(jac.a[:, i]))
        for i in range(NU):
            h = 1e-6 * (1.0 + abs(u[i]))
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            col = (rk4_step(x, up, P, dt, sub) - rk4_step(x, um, P, dt, sub)) / (2 * h)
            assert np.all(np.abs(col - jac.b[:, i]) <= 1e-7 + 1e-4 * np.abs(jac.b[:, i]))
    assert time.perf_counter() - t0 < 10.0


# -- 3: one RTI iteration against a batch least-squares solve -------------


def _lstsq_first_control(cfg, states, controls, x_ref, u_ref, x_meas):
    """First control of the tick's linearized OCP, solved as stacked
    weighted least squares over all control corrections at once."""
    n = cfg.n_horizon
    base = np.empty((n + 1, NX))
    base[0] = x_meas
    sens = np.zeros((n + 1, n, NX, NU))
    for k in range(n):
        xn, jac = rk4_step_with_sensitivities(states[k], controls[k], P,
                                              cfg.dt_shoot, cfg.substeps)
        base[k + 1] = xn + jac.a @ (base[k] - states[k])
        for j in range(k):
            sens[k + 1, j] = jac.a @ sens[k, j]
        sens[k + 1, k] = jac.b
    rows, rhs = [], []
    for k in range(1, n + 1):
        w = cfg.w_state + (cfg.w_terminal if k == n else 0.0)
        sw = np.sqrt(w)
        rows.append(sw[:, None] * np.concatenate(list(sens[k]), axis=1))
        rhs.append(-sw * (base[k] - x_ref[k]))
    sr = np.sqrt(cfg.w_control)
    for k in range(n):
        block = np.zeros((NU, n * NU))
        block[:, k * NU:(k + 1) * NU] = np.diag(sr)
        rows.append(block)
        rhs.append(-sr * (controls[k] - u_ref[k]))
    du, *_ = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)
    return du[:NU]


def test_rti_equals_batch_least_squares_when_unconstrained():
    # A vertical-only setup with inactive bounds: the tracking QP reduces to
    # a strictly convex least-squares problem, so the RTI feedback control
    # must coincide with a one-shot batch solve at every tick.
    w_state = np.zeros(NX)
    w_state[2] = 4.0   # z
    w_state[8] = 1.0   # dz
    wide = np.full(NU, 1e9)
    cfg = OcpConfig(n_horizon=10, dt_shoot=0.1, substeps=2,
                    w_state=w_state, w_control=np.array([1.0, 10.0, 10.0, 10.0]),
                    u_min=-wide, u_max=wide, levenberg=0.0)
    solver = RtiSolver(cfg, P)
    x0 = np.zeros(NX)
    u0 = np.array([P.m * P.gravity, 0.0, 0.0, 0.0])
    solver.reset(x0, u0)
    x_tgt = np.zeros(NX)
    x_tgt[2] = 1.0
    x_ref = np.tile(x_tgt, (cfg.n_horizon + 1, 1))
    u_ref = np.tile(u0, (cfg.n_horizon, 1))
    solver.set_reference(x_ref, u_ref)

    x_meas = x0.copy()
    worst = 0.0
    for _ in range(200):
        solver.prepare()
        states = solver.states.copy()
        controls = solver.controls.copy()
        du0 = _lstsq_first_control(cfg, states, controls, x_ref, u_ref, x_meas)
        u_cmd = solver.feedback(x_meas)
        worst = max(worst, float(np.abs(u_cmd - (controls[0] + du0)).max()))
        assert worst < 1e-8, worst
        solver.shift()
        x_meas = rk4_step(x_meas, u_cmd, P, cfg.dt_shoot, cfg.substeps)
    assert abs(x_meas[2] - 1.0) < 0.05  # the loop really regulated z


# -- 4: step-scenario tracking envelope -----------------------------------


def test_step_scenario_meets_tracking_envelope(step_run):
    cfg, trace, report = step_run
    assert np.allclose(cfg.initial_state[:3], (0.0, 0.0, 0.15))
    assert np.allclose(cfg.target_position, (5.0, 5.0, 5.0))
    assert cfg.duration == 20.0
    assert cfg.control_rate == 100.0
    terminal = np.abs(trace.final_state[:3] - cfg.target_position)
    assert np.all(terminal < 0.02), terminal
    assert report.settled
    assert report.settling_time <= 12.0
    assert report.overshoot_pct <= 35.0
    u = trace.controls
    assert np.all(u >= cfg.ocp.u_min[None, :] - 1e-9)
    assert np.all(u <= cfg.ocp.u_max[None, :] + 1e-9)
    assert report.u_max[0] <= 25.0


# -- 5: predictive controller against the PID baseline --------------------


def test_nmpc_outperforms_pid_baseline_on_itae(step_run, pid_run):
    _, _, nmpc_report = step_run
    _, _, pid_report = pid_run
    assert nmpc_report.itae < pid_report.itae


# -- 6: cycle-time budget and horizon scaling -----------------------------


@needs_compiled
def test_cycle_time_within_budget_and_scales_with_horizon(step_run):
    cfg, _, report = step_run
    assert cfg.ocp.n_horizon == 10 and cfg.ocp.substeps == 5
    stats = report.solve_time_stats
    assert stats["median"] <= 1000.0, stats
    assert stats["p99"] <= 2000.0, stats
    cfg20 = dataclasses.replace(cfg, ocp=ocp_with(cfg.ocp, n_horizon=20))
    trace20 = run_scenario(cfg20)
    stats20 = compute(trace20, cfg20.target_position).solve_time_stats
    assert stats20["median"] > stats["median"], (stats, stats20)


# -- 7: no heap traffic across steady-state cycles ------------------------


def _measured_cycles(run_cycles, core, cycles):
    # Single call site: allocations made through the Python memory API by
    # the extension are attributed to this frame.
    return run_cycles(core, cycles)


@needs_compiled
def test_steady_state_cycles_touch_no_heap():
    mod = backend.get_module("compiled")
    solver = RtiSolver(OcpConfig(n_horizon=10), P, backend_name="compiled")
    x0 = np.zeros(NX)
    x0[2] = 0.5
    u0 = np.array([P.m * P.gravity, 0.0, 0.0, 0.0])
    solver.reset(x0, u0)
    x_tgt = np.zeros(NX)
    x_tgt[:3] = (1.0, -1.0, 1.5)
    solver.set_reference(np.tile(x_tgt, (11, 1)), np.tile(u0, (10, 1)))
    core = solver._core
    np.asarray(core.x_meas)[:] = x0
    assert _measured_cycles(mod.run_cycles, core, 50) == 0  # warmup

    gc.collect()
    tracemalloc.start()
    try:
        before = tracemalloc.take_snapshot()
        status = _measured_cycles(mod.run_cycles, core, 1000)
        after = tracemalloc.take_snapshot()
    finally:
        tracemalloc.stop()
    assert status == 0

    ignore = tracemalloc.Filter(False, tracemalloc.__file__)
    stats = after.filter_traces([ignore]).compare_to(
        before.filter_traces([ignore]), "lineno")
    drive_line = _measured_cycles.__code__.co_firstlineno + 3
    leaks = [s for s in stats
             if s.size_diff > 0
             and any(f.filename == __file__ and f.lineno == drive_line
                     for f in s.traceback)]
    assert leaks == [], [str(s) for s in leaks]


# -- 8: fixed workspace bound and monotone growth -------------------------


def test_workspace_bounded_and_monotone_in_horizon():
    sizes = []
    for n in range(10, 21):
        solver = RtiSolver(OcpConfig(n_horizon=n, substeps=5), P)
        sizes.append(solver.workspace_bytes())
    assert sizes[18 - 10] <= 512 * 1024, sizes[18 - 10]
    assert all(b > a for a, b in zip(sizes, sizes[1:])), sizes


# -- 9: error integrals against closed forms ------------------------------


class _SyntheticTrace:
    def __init__(self, t, states, controls):
        self.t = t
        self.states = states
        self.controls = controls


def _tick_bound(f, dt):
    # Left-rectangle error is at most one tick of the integrand's variation;
    # the max term covers the unsampled tail interval.
    return dt * (np.abs(np.diff(f)).sum() + np.abs(f).max()) + 1e-12


def test_metrics_agree_with_closed_forms():
    dt, n = 0.01, 800
    t = np.arange(n) * dt
    horizon = n * dt
    target = np.array([1.0, -2.0, 0.5])
    e0 = np.array([0.3, -0.4, 0.12])
    e_norm = float(np.linalg.norm(e0))
    controls = np.zeros((n, 4))

    states = np.zeros((n, NX))
    states[:, :3] = target + e0
    rep = compute(_SyntheticTrace(t, states, controls), target)
    f_sq = np.full(n, e_norm ** 2)
    f_ab = np.full(n, e_norm)
    assert abs(rep.ise - e_norm ** 2 * horizon) <= _tick_bound(f_sq, dt)
    assert abs(rep.iae - e_norm * horizon) <= _tick_bound(f_ab, dt)
    assert abs(rep.itse - e_norm ** 2 * horizon ** 2 / 2) <= _tick_bound(t * f_sq, dt)
    assert abs(rep.itae - e_norm * horizon ** 2 / 2) <= _tick_bound(t * f_ab, dt)
    assert not rep.settled  # constant error never enters the band

    tau = 0.9
    decay = np.exp(-t / tau)
    states = np.zeros((n, NX))
    states[:, :3] = target + e0[None, :] * decay[:, None]
    rep = compute(_SyntheticTrace(t, states, controls), target)
    a1, a2 = 1.0 / tau, 2.0 / tau
    iae_cf = e_norm * (1 - np.exp(-a1 * horizon)) / a1
    ise_cf = e_norm ** 2 * (1 - np.exp(-a2 * horizon)) / a2
    itae_cf = e_norm * (1 - np.exp(-a1 * horizon) * (1 + a1 * horizon)) / a1 ** 2
    itse_cf = e_norm ** 2 * (1 - np.exp(-a2 * horizon) * (1 + a2 * horizon)) / a2 ** 2
    assert abs(rep.iae - iae_cf) <= _tick_bound(e_norm * decay, dt)
    assert abs(rep.ise - ise_cf) <= _tick_bound(e_norm ** 2 * decay ** 2, dt)
    assert abs(rep.itae - itae_cf) <= _tick_bound(t * e_norm * decay, dt)
    assert abs(rep.itse - itse_cf) <= _tick_bound(t * e_norm ** 2 * decay ** 2, dt)
    assert rep.settled
    # decay to 5 % of the initial error happens at 3 tau
    assert abs(rep.settling_time - 3.0 * tau) < 0.05


# -- 10: repeated runs are bitwise identical ------------------------------


def _trace_rows_without_timing(out_root):
    trace_path = next(out_root.glob("*/trace.csv"))
    lines = trace_path.read_text().splitlines()
    header = lines[0].split(",")
    keep = [i for i, name in enumerate(header) if name not in ("prep_us", "fb_us")]
    return [tuple(line.split(",")[i] for i in keep) for line in lines]


def test_run_verb_reproduces_bitwise_identical_traces(tmp_path):
    assert cli.main(["run", "--config", "step", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", "--config", "step", "--out", str(tmp_path / "b")]) == 0
    rows_a = _trace_rows_without_timing(tmp_path / "a")
    rows_b = _trace_rows_without_timing(tmp_path / "b")
    assert rows_a == rows_b
