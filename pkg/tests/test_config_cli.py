"""Config ingestion and command line surface."""

from __future__ import annotations

import numpy as np
import pytest

from nmpcm import cli
from nmpcm.config import ConfigError, load_config
from nmpcm.qp_brute import run_suite

from conftest import bundled_config

MINIMAL = """
scenario:
  name: tiny
  duration: 1.0
  control_rate: 100.0
  target:
    position: [0.0, 0.0, 1.0]
  initial_state: [0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0]
"""


def write_cfg(tmp_path, text, name="case.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_bundled_configs_load():
    for name in ("hover", "step"):
        cfg = load_config(bundled_config(name))
        assert cfg.duration > 0
        assert cfg.control_rate > 0
        assert cfg.ocp.n_horizon >= 1


def test_minimal_config_fills_defaults(tmp_path):
    cfg = load_config(write_cfg(tmp_path, MINIMAL))
    assert cfg.name == "tiny"
    assert cfg.controller == "nmpc"
    assert cfg.quad.m == 2.11
    assert cfg.mixer.pwm_per_newton == 115.0
    assert np.array_equal(cfg.pid.pos_kp, np.array([2.0, 2.0, 4.0]))
    assert cfg.ocp.u_max[0] == 25.0


def test_step_config_overrides_pid_position_loop():
    cfg = load_config(bundled_config("step"))
    assert np.array_equal(cfg.pid.pos_kp, np.array([0.3, 0.3, 1.5]))
    # attitude loop stays at the declared defaults
    assert np.array_equal(cfg.pid.att_kp, np.array([3.0, 3.0, 1.5]))


def test_unknown_keys_rejected_at_every_level(tmp_path):
    cases = (
        MINIMAL + "  typo_key: 1\n",
        MINIMAL + "ocp:\n  w_stat: [1]\n",
        MINIMAL + "pid:\n  position:\n    kP: 1.0\n",
        MINIMAL + "mixer:\n  pwm_slope: 100\n",
        MINIMAL + "unknown_section:\n  a: 1\n",
    )
    for i, text in enumerate(cases):
        with pytest.raises(ConfigError):
            load_config(write_cfg(tmp_path, text, f"bad{i}.cfg"))


def test_inertia_list_maps_to_axes(tmp_path):
    text = MINIMAL + "quad:\n  inertia: [0.08, 0.09, 0.11]\n"
    cfg = load_config(write_cfg(tmp_path, text))
    assert cfg.quad.ixx == 0.08
    assert cfg.quad.iyy == 0.09
    assert cfg.quad.izz == 0.11


def test_bad_values_surface_as_config_errors(tmp_path):
    text = MINIMAL + "quad:\n  mass: -2.0\n"
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, text))
    text = MINIMAL + "ocp:\n  n_horizon: 0\n"
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, text))


def test_run_verb_writes_run_directory(tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", "hover", "--out", str(out)])
    assert rc == 0
    run_dirs = [p for p in out.iterdir() if p.is_dir()]
    assert len(run_dirs) == 1
    run_dir = run_dirs[0]
    trace = (run_dir / "trace.csv").read_text().strip().splitlines()
    cfg = load_config(bundled_config("hover"))
    assert len(trace) == 1 + int(round(cfg.duration * cfg.control_rate))
    header = trace[0].split(",")
    assert header[:6] == ["t", "p", "q", "r", "phi", "theta"]
    assert header[-4:] == ["qp_iters", "prep_us", "fb_us", "fallback"]
    metrics_text = (run_dir / "metrics.txt").read_text()
    for key in ("settling_time_s", "overshoot_pct", "ise", "itse", "iae",
                "itae"):
        assert key in metrics_text
    assert (run_dir / "manifest.txt").exists()
    assert (out / "metrics_summary.csv").exists()


def test_run_directories_never_collide(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", "hover", "--out", str(out)]) == 0
    assert cli.main(["run", "--config", "hover", "--out", str(out)]) == 0
    assert len([p for p in out.iterdir() if p.is_dir()]) == 2


def test_config_errors_exit_one(tmp_path, capsys):
    bad = write_cfg(tmp_path, MINIMAL + "  controler: pid\n")
    assert cli.main(["run", "--config", str(bad),
                     "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["run", "--config", "does-not-exist",
                     "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "config error" in err


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as exc_info:
        cli.main(["no-such-verb"])
    assert exc_info.value.code == 2


def test_safety_abort_exits_two_with_partial_trace(tmp_path):
    # defaults-tuned PID cannot fly the long diagonal step
    text = """
scenario:
  name: flip
  duration: 20.0
  control_rate: 100.0
  controller: pid
  initial_state: [0, 0, 0.15, 0, 0, 0, 0, 0, 0, 0, 0, 0]
  target:
    position: [5.0, 5.0, 5.0]
"""
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(write_cfg(tmp_path, text)),
                   "--out", str(out)])
    assert rc == 2
    run_dir = next(p for p in out.iterdir() if p.is_dir())
    rows = (run_dir / "trace.csv").read_text().strip().splitlines()
    assert 1 < len(rows) < 2001    # truncated at the abort tick


def test_sweep_verb_single_cell(tmp_path):
    out = tmp_path / "sweep"
    rc = cli.main(["sweep", "--config", "hover", "--out", str(out),
                   "--n-list", "10", "--substep-list", "5"])
    assert rc == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert rows[0] == "n,substeps,median_us,p99_us,workspace_bytes,settled"
    assert len(rows) == 2
    n, sub, med, p99, ws, settled = rows[1].split(",")
    assert (int(n), int(sub)) == (10, 5)
    assert float(med) > 0 and float(p99) >= float(med)
    assert int(ws) > 0
    assert settled == "1"


def test_sweep_range_syntax(tmp_path):
    out = tmp_path / "sweep"
    rc = cli.main(["sweep", "--config", "hover", "--out", str(out),
                   "--n-list", "10-12", "--substep-list", "2,5"])
    assert rc == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + 3 * 2
    cells = [tuple(map(int, r.split(",")[:2])) for r in rows[1:]]
    assert cells == [(10, 2), (10, 5), (11, 2), (11, 5), (12, 2), (12, 5)]


def test_sweep_workspace_column_monotone_in_n(tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", "hover", "--out", str(out),
                     "--n-list", "10,14,18", "--substep-list", "5"]) == 0
    rows = (out / "sweep.csv").read_text().strip().splitlines()[1:]
    ws = [int(r.split(",")[4]) for r in rows]
    assert ws[0] < ws[1] < ws[2]


def test_bench_qp_verb(capsys):
    assert cli.main(["bench-qp", "--count", "25", "--n", "6", "--m", "4",
                     "--seed", "9"]) == 0
    out = capsys.readouterr().out
    assert "25/25 passed" in out


def test_bench_qp_deterministic_for_a_seed():
    a = run_suite(30, 6, 4, seed=21)
    b = run_suite(30, 6, 4, seed=21)
    assert a["passed"] == b["passed"] == 30
    assert a["max_dx"] == b["max_dx"]
    assert a["max_kkt_rel"] == b["max_kkt_rel"]
    c = run_suite(30, 6, 4, seed=22)
    assert c["max_dx"] != a["max_dx"]


def test_bench_qp_zero_count_is_vacuous():
    res = run_suite(0, 6, 4, 1)
    assert res["count"] == 0 and res["passed"] == 0
    assert res["failures"] == []


def test_nmpcm_threads_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("NMPCM_THREADS", "not-a-number")
    out = tmp_path / "sweep"
    rc = cli.main(["sweep", "--config", "hover", "--out", str(out),
                   "--n-list", "10", "--substep-list", "5"])
    assert rc == 1
    monkeypatch.setenv("NMPCM_THREADS", "1")
    rc = cli.main(["sweep", "--config", "hover", "--out", str(out),
                   "--n-list", "10", "--substep-list", "5"])
    assert rc == 0
