"""Tracking-quality and timing metrics computed from a simulation trace.

Error is the Euclidean norm of the position error; the integral metrics
use the rectangle rule at tick resolution:

    ISE = sum e^2 dt,  ITSE = sum t e^2 dt,  IAE = sum |e| dt,
    ITAE = sum t |e| dt

Settling is the first time after which the error norm stays within 5% of
the initial error norm. Overshoot is the worst per-axis overshoot relative
to the commanded change, over axes with a nonzero commanded change. Both
per-axis and norm-based integrals are reported; acceptance comparisons use
the norm-based values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

SETTLING_BAND = 0.05


class EmptyTrace(ValueError):
    pass


class NonUniformTicks(ValueError):
    pass


@dataclass
class MetricsReport:
    ise: float
    itse: float
    iae: float
    itae: float
    ise_axes: NDArray[np.float64]
    itse_axes: NDArray[np.float64]
    iae_axes: NDArray[np.float64]
    itae_axes: NDArray[np.float64]
    settled: bool
    settling_time: float            # [s]; duration when not settled
    overshoot_pct: float
    u_max: NDArray[np.float64]      # per-channel max |u|
    solve_time_stats: dict = field(default_factory=dict)  # median/p95/p99/max [us]

    def as_flat_dict(self) -> dict:
        out = {
            "ise": self.ise,
            "itse": self.itse,
            "iae": self.iae,
            "itae": self.itae,
            "settled": int(self.settled),
            "settling_time_s": self.settling_time,
            "overshoot_pct": self.overshoot_pct,
        }
        for i, axis in enumerate("xyz"):
            out[f"ise_{axis}"] = float(self.ise_axes[i])
            out[f"itse_{axis}"] = float(self.itse_axes[i])
            out[f"iae_{axis}"] = float(self.iae_axes[i])
            out[f"itae_{axis}"] = float(self.itae_axes[i])
        for i in range(4):
            out[f"u{i + 1}_max"] = float(self.u_max[i])
        for key, value in self.solve_time_stats.items():
            out[f"solve_{key}_us"] = float(value)
        return out


def compute(trace, target) -> MetricsReport:
    """Metrics for a `SimTrace`-like object against a 3-vector target.

    `trace` needs `t`, `states`, and `controls` arrays; `prep_us`/`fb_us`
    feed the solver timing stats when present.
    """
    t = np.asarray(trace.t, dtype=float)
    if t.size == 0:
        raise EmptyTrace("trace has no ticks")
    states = np.asarray(trace.states, dtype=float)
    controls = np.asarray(trace.controls, dtype=float)
    target = np.asarray(target, dtype=float).ravel()
    if t.size > 1:
        steps = np.diff(t)
        dt = float(steps[0])
        if np.any(np.abs(steps - dt) > 1e-9 * max(1.0, abs(dt))):
            raise NonUniformTicks("tick spacing is not uniform")
    else:
        dt = 1.0

    err = states[:, 0:3] - target[None, :]
    e_norm = np.linalg.norm(err, axis=1)
    e_axes = np.abs(err)

    ise_axes = (e_axes ** 2).sum(axis=0) * dt
    iae_axes = e_axes.sum(axis=0) * dt
    itse_axes = (t[:, None] * e_axes ** 2).sum(axis=0) * dt
    itae_axes = (t[:, None] * e_axes).sum(axis=0) * dt
    ise = float((e_norm ** 2).sum() * dt)
    iae = float(e_norm.sum() * dt)
    itse = float((t * e_norm ** 2).sum() * dt)
    itae = float((t * e_norm).sum() * dt)

    settled, settling_time = _settling(t, e_norm, dt)
    overshoot = _overshoot(states[:, 0:3], target)
    u_max = np.abs(controls).max(axis=0) if controls.size else np.zeros(4)

    stats = {}
    prep = np.asarray(getattr(trace, "prep_us", np.zeros(0)), dtype=float)
    fb = np.asarray(getattr(trace, "fb_us", np.zeros(0)), dtype=float)
    if prep.size and fb.size:
        cycle = prep + fb
        stats = {
            "median": float(np.median(cycle)),
            "p95": float(np.percentile(cycle, 95)),
            "p99": float(np.percentile(cycle, 99)),
            "max": float(cycle.max()),
        }

    return MetricsReport(
        ise=ise, itse=itse, iae=iae, itae=itae,
        ise_axes=ise_axes, itse_axes=itse_axes,
        iae_axes=iae_axes, itae_axes=itae_axes,
        settled=settled, settling_time=settling_time,
        overshoot_pct=overshoot, u_max=u_max,
        solve_time_stats=stats,
    )


def _settling(t, e_norm, dt):
    """First time after which e stays within 5% of the initial error."""
    band = SETTLING_BAND * e_norm[0]
    outside = np.flatnonzero(e_norm > band)
    if outside.size == 0:
        return True, 0.0
    last = outside[-1]
    if last == t.size - 1:
        return False, float(t[-1] + dt)
    return True, float(t[last + 1])


def _overshoot(pos, target):
    """Worst per-axis overshoot [%] relative to the commanded change."""
    initial = pos[0]
    worst = 0.0
    for ax in range(3):
        change = target[ax] - initial[ax]
        if change == 0.0:
            continue
        if change > 0:
            peak = pos[:, ax].max() - target[ax]
        else:
            peak = target[ax] - pos[:, ax].min()
        worst = max(worst, 100.0 * peak / abs(change))
    return worst


def write_report(report: MetricsReport, path) -> None:
    """Serialize a report as flat `key = value` lines."""
    with open(path, "w", encoding="ascii") as fh:
        for key, value in report.as_flat_dict().items():
            if isinstance(value, float):
                fh.write(f"{key} = {value:.17g}\n")
            else:
                fh.write(f"{key} = {value}\n")


def append_summary(report: MetricsReport, path, run_name: str) -> None:
    """Append one row per run to a cross-run CSV summary."""
    flat = report.as_flat_dict()
    keys = sorted(flat)
    import os
    write_header = not os.path.exists(path)
    with open(path, "a", encoding="ascii") as fh:
        if write_header:
            fh.write("run," + ",".join(keys) + "\n")
        row = [run_name] + [
            f"{flat[k]:.17g}" if isinstance(flat[k], float) else str(flat[k])
            for k in keys
        ]
        fh.write(",".join(row) + "\n")
