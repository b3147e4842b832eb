"""Command line entry point.

Verbs:
    run             closed-loop scenario -> run directory with trace + metrics
    sweep           horizon / substep timing grid -> sweep.csv
    bench-qp        random QP suite vs the enumeration reference
    bench-backends  compiled vs pure-Python cycle timing and agreement

Exit codes: 0 success, 1 configuration or benchmark failure, 2 safety abort.
"""

from __future__ import annotations

import argparse
import dataclasses
import importlib.resources
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .backend import available_backends, default_backend
from .config import ConfigError, load_config
from .metrics import append_summary, compute, write_report
from .qp_brute import run_suite
from .sim import SafetyAbort, run_scenario, sweep_horizon, write_sweep, write_trace


def _resolve_config(arg: str) -> Path:
    """Accept a filesystem path or the name of a bundled config."""
    p = Path(arg)
    if p.exists():
        return p
    name = arg if arg.endswith(".cfg") else arg + ".cfg"
    ref = importlib.resources.files("nmpcm").joinpath("data", name)
    if ref.is_file():
        return Path(str(ref))
    raise ConfigError(f"config not found: {arg}")


def _make_run_dir(out_root: Path, name: str) -> Path:
    """Fresh run directory out/<name>-<stamp>; never reuses an existing one."""
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = out_root / f"{name}-{stamp}"
    run_dir = base
    k = 1
    while run_dir.exists():
        run_dir = Path(f"{base}-{k}")
        k += 1
    run_dir.mkdir(parents=True)
    return run_dir


def _write_manifest(run_dir: Path, cfg_path: Path, cfg) -> None:
    lines = [
        f"version = {__version__}",
        f"config = {cfg_path}",
        f"scenario = {cfg.name}",
        f"controller = {cfg.controller}",
        f"backend = {cfg.backend or default_backend()}",
        f"seed = {cfg.seed}",
        f"created = {datetime.now().isoformat(timespec='seconds')}",
    ]
    (run_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def cmd_run(args) -> int:
    cfg_path = _resolve_config(args.config)
    cfg = load_config(cfg_path)
    out_root = Path(args.out)
    run_dir = _make_run_dir(out_root, cfg.name)
    _write_manifest(run_dir, cfg_path, cfg)
    try:
        trace = run_scenario(cfg)
    except SafetyAbort as exc:
        if exc.trace is not None:
            write_trace(exc.trace, run_dir / "trace.csv")
        print(f"safety abort at tick {exc.tick}: {exc.reason}", file=sys.stderr)
        return 2
    write_trace(trace, run_dir / "trace.csv")
    report = compute(trace, cfg.target_position)
    write_report(report, run_dir / "metrics.txt")
    append_summary(report, out_root / "metrics_summary.csv", cfg.name)
    med = report.solve_time_stats.get("median", 0.0)
    p99 = report.solve_time_stats.get("p99", 0.0)
    print(f"run {run_dir.name}: settled={report.settled} "
          f"settling_time={report.settling_time:.3f}s "
          f"itae={report.itae:.4f} cycle median={med:.0f}us p99={p99:.0f}us")
    return 0


def _parse_int_list(text: str) -> list[int]:
    """'10,12,14' or '10-20' (inclusive range)."""
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = text.split("-", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise ConfigError(f"empty range: {text}")
        return list(range(lo, hi + 1))
    out = [int(tok) for tok in text.split(",") if tok.strip()]
    if not out:
        raise ConfigError(f"empty list: {text}")
    return out


def cmd_sweep(args) -> int:
    cfg = load_config(_resolve_config(args.config))
    n_list = _parse_int_list(args.n_list)
    substep_list = _parse_int_list(args.substep_list)
    rows = sweep_horizon(cfg, n_list, substep_list)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    write_sweep(rows, path)
    print(f"wrote {path} ({len(rows)} cells)")
    return 0


def cmd_bench_qp(args) -> int:
    res = run_suite(args.count, args.n, args.m, args.seed)
    print(f"bench-qp: {res['passed']}/{res['count']} passed "
          f"max|dx|={res['max_dx']:.3e} max_kkt_rel={res['max_kkt_rel']:.3e} "
          f"elapsed={res['elapsed_s']:.1f}s")
    for idx, n, m, status, dx, kkt in res["failures"][:10]:
        print(f"  problem {idx} (n={n}, m={m}): status={status} "
              f"|dx|={dx:.3e} kkt_rel={kkt:.3e}", file=sys.stderr)
    return 0 if res["passed"] == res["count"] else 1


def cmd_bench_backends(args) -> int:
    backends = available_backends()
    if "compiled" not in backends:
        print("compiled backend not built; timing pure python only")
    cfg = load_config(_resolve_config(args.config))
    results = {}
    for name in backends:
        cfg_b = dataclasses.replace(cfg, backend=name)
        t0 = time.perf_counter()
        trace = run_scenario(cfg_b)
        wall = time.perf_counter() - t0
        cyc = trace.prep_us + trace.fb_us
        results[name] = (np.median(cyc), np.percentile(cyc, 99), wall, trace)
    for name, (med, p99, wall, _) in results.items():
        print(f"{name:>8}: cycle median={med:8.1f}us p99={p99:8.1f}us "
              f"wall={wall:6.2f}s")
    if len(results) == 2:
        a = results["compiled"][3].controls
        b = results["python"][3].controls
        diff = float(np.abs(a - b).max())
        print(f"max |u_cmd| disagreement: {diff:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nmpcm",
                                 description="quadrotor NMPC bench")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run one closed-loop scenario")
    p.add_argument("--config", required=True,
                   help="config file path or bundled name (hover, step)")
    p.add_argument("--out", default="out", help="output root directory")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="horizon/substep timing grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--n-list", default="10-20",
                   help="horizons, e.g. 10,12,14 or 10-20")
    p.add_argument("--substep-list", default="5")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("bench-qp", help="QP suite vs enumeration reference")
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=cmd_bench_qp)

    p = sub.add_parser("bench-backends",
                       help="compiled vs pure-Python comparison")
    p.add_argument("--config", default="step")
    p.set_defaults(fn=cmd_bench_backends)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
