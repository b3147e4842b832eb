"""Metric computations against analytic cases."""

from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest

from nmpcm import metrics


def synthetic_trace(t, pos, controls=None):
    states = np.zeros((t.size, 12))
    states[:, 0:3] = pos
    if controls is None:
        controls = np.zeros((t.size, 4))
    return SimpleNamespace(t=t, states=states, controls=controls,
                           prep_us=np.zeros(0), fb_us=np.zeros(0))


def test_constant_error_closed_forms():
    dt = 0.01
    n = 100                       # covers t in [0, 1)
    t = np.arange(n) * dt
    pos = np.zeros((n, 3))
    pos[:, 0] = 1.0               # constant 1 m error on x
    rep = metrics.compute(synthetic_trace(t, pos), np.zeros(3))
    # rectangle rule over [0, 1): ISE and IAE are exact, the t-weighted
    # integrals land within one tick of T^2/2
    assert rep.ise == pytest.approx(1.0, abs=1e-12)
    assert rep.iae == pytest.approx(1.0, abs=1e-12)
    assert rep.itse == pytest.approx(0.5, abs=dt)
    assert rep.itae == pytest.approx(0.5, abs=dt)
    assert rep.ise_axes[0] == pytest.approx(1.0, abs=1e-12)
    assert rep.ise_axes[1] == 0.0 and rep.ise_axes[2] == 0.0
    assert not rep.settled


def test_exponential_decay_closed_forms():
    dt = 0.001
    t = np.arange(0, 8.0, dt)
    e0 = 5.0
    pos = np.zeros((t.size, 3))
    pos[:, 0] = e0 * np.exp(-t)   # target at origin: |e| = 5 e^-t
    rep = metrics.compute(synthetic_trace(t, pos), np.zeros(3))
    # ISE = e0^2/2 (1 - e^-2T), IAE = e0 (1 - e^-T); T = 8 makes the tails
    # negligible next to the one-tick quadrature slack
    assert rep.ise == pytest.approx(e0**2 / 2.0, abs=e0**2 * dt)
    assert rep.iae == pytest.approx(e0, abs=e0 * dt)
    # ITAE = e0 (1 - (1+T) e^-T)
    assert rep.itae == pytest.approx(
        e0 * (1.0 - (1.0 + 8.0) * math.exp(-8.0)), abs=e0 * dt * 8.0)
    # settling: e^-t falls below 5% at t = ln 20
    assert rep.settled
    assert math.log(20.0) <= rep.settling_time <= math.log(20.0) + 2 * dt


def test_quadrature_error_shrinks_with_dt():
    errs = []
    for dt in (0.02, 0.01, 0.005):
        t = np.arange(0, 4.0, dt)
        pos = np.zeros((t.size, 3))
        pos[:, 0] = np.exp(-t)
        rep = metrics.compute(synthetic_trace(t, pos), np.zeros(3))
        errs.append(abs(rep.itae - (1.0 - 5.0 * math.exp(-4.0))))
    assert errs[0] > errs[1] > errs[2]


def test_monotone_approach_has_zero_overshoot():
    t = np.arange(0, 5.0, 0.01)
    pos = np.zeros((t.size, 3))
    pos[:, 2] = 1.0 - np.exp(-t)      # rises toward 1, never crosses
    rep = metrics.compute(synthetic_trace(t, pos), np.array([0.0, 0.0, 1.0]))
    assert rep.overshoot_pct == 0.0


def test_overshoot_percentage_value():
    t = np.arange(0, 3.0, 0.01)
    pos = np.zeros((t.size, 3))
    # commanded change 2 m; peak 2.3 m: overshoot 15%
    pos[:, 0] = np.minimum(2.3, 4.0 * t)
    pos[-1, 0] = 2.0
    rep = metrics.compute(synthetic_trace(t, pos), np.array([2.0, 0.0, 0.0]))
    assert rep.overshoot_pct == pytest.approx(15.0, abs=1e-9)


def test_negative_direction_overshoot():
    t = np.arange(0, 3.0, 0.01)
    pos = np.zeros((t.size, 3))
    pos[0, 1] = 2.0
    pos[1:, 1] = np.maximum(-0.2, 2.0 - 4.0 * t[1:])   # target 0, dips to -0.2
    rep = metrics.compute(synthetic_trace(t, pos), np.zeros(3))
    assert rep.overshoot_pct == pytest.approx(10.0, abs=1e-9)


def test_truncation_matches_shorter_trace():
    t = np.arange(0, 2.0, 0.01)
    pos = np.random.default_rng(2).normal(size=(t.size, 3))
    full = synthetic_trace(t, pos)
    half = synthetic_trace(t[:100], pos[:100])
    rep_half = metrics.compute(half, np.zeros(3))
    rep_cut = metrics.compute(
        SimpleNamespace(t=t[:100], states=full.states[:100],
                        controls=full.controls[:100],
                        prep_us=np.zeros(0), fb_us=np.zeros(0)),
        np.zeros(3))
    assert rep_half.ise == rep_cut.ise
    assert rep_half.itae == rep_cut.itae


def test_u_max_per_channel():
    t = np.arange(0, 1.0, 0.01)
    controls = np.zeros((t.size, 4))
    controls[10, 0] = 24.0
    controls[20, 1] = -0.09
    rep = metrics.compute(synthetic_trace(t, np.zeros((t.size, 3)), controls),
                          np.zeros(3))
    assert rep.u_max[0] == 24.0
    assert rep.u_max[1] == 0.09


def test_solver_timing_stats_flow_through():
    t = np.arange(0, 1.0, 0.01)
    trace = SimpleNamespace(t=t, states=np.zeros((t.size, 12)),
                            controls=np.zeros((t.size, 4)),
                            prep_us=np.full(t.size, 100.0),
                            fb_us=np.full(t.size, 50.0))
    rep = metrics.compute(trace, np.zeros(3))
    assert rep.solve_time_stats["median"] == 150.0
    assert rep.solve_time_stats["max"] == 150.0


def test_error_paths():
    with pytest.raises(metrics.EmptyTrace):
        metrics.compute(synthetic_trace(np.zeros(0), np.zeros((0, 3))),
                        np.zeros(3))
    t = np.array([0.0, 0.01, 0.03])
    with pytest.raises(metrics.NonUniformTicks):
        metrics.compute(synthetic_trace(t, np.zeros((3, 3))), np.zeros(3))


def test_report_serialization_round_trip(tmp_path):
    t = np.arange(0, 1.0, 0.01)
    pos = np.zeros((t.size, 3))
    pos[:, 0] = np.exp(-t)
    rep = metrics.compute(synthetic_trace(t, pos), np.zeros(3))
    path = tmp_path / "metrics.txt"
    metrics.write_report(rep, path)
    text = path.read_text()
    for key in ("ise", "itse", "iae", "itae", "settling_time_s",
                "overshoot_pct"):
        assert f"{key} = " in text
    parsed = dict(line.split(" = ") for line in text.strip().splitlines())
    assert float(parsed["ise"]) == rep.ise

    summary = tmp_path / "summary.csv"
    metrics.append_summary(rep, summary, "one")
    metrics.append_summary(rep, summary, "two")
    lines = summary.read_text().strip().splitlines()
    assert len(lines) == 3
    assert lines[0].startswith("run,")
    assert lines[1].startswith("one,") and lines[2].startswith("two,")
