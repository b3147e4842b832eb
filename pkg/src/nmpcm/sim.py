"""Deterministic closed-loop simulator.

Per control tick: measure -> build PID reference -> (NMPC prepare/feedback
or PID directly) -> mix to PWM -> reconstruct the realized control through
the inverse calibration (so actuator clamping reaches the plant) -> RK4
plant integration at the fine sub-step -> safety check -> record. A run
aborts with SafetyAbort when |phi| or |theta| exceeds 1.2 rad or any state
entry goes non-finite.

The NMPC path falls back to the PID reference control for a tick when the
QP fails or the linearization goes non-finite; the fallback is flagged in
the trace and the guess is re-seeded.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import backend, metrics
from .config import CONTROLLER_NMPC, ConfigError, ScenarioConfig
from .mixer import Mixer
from .pid import CascadedPid
from .qp import QpFailure
from .quad import NU, NX, QuadParams
from .rti import NonFiniteLinearization, RtiSolver

log = logging.getLogger("nmpcm")

SAFETY_TILT = 1.2  # [rad]

TRACE_COLUMNS = (
    "t", "p", "q", "r", "phi", "theta", "psi",
    "dp", "dq", "dr", "dphi", "dtheta", "dpsi",
    "u1", "u2", "u3", "u4",
    "pwm1", "pwm2", "pwm3", "pwm4",
    "ur1", "ur2", "ur3", "ur4",
    "qp_iters", "prep_us", "fb_us", "fallback",
)


class SafetyAbort(RuntimeError):
    """Attitude left the safety envelope or the state went non-finite."""

    def __init__(self, tick: int, reason: str, trace: "SimTrace | None" = None):
        super().__init__(f"tick {tick}: {reason}")
        self.tick = tick
        self.reason = reason
        self.trace = trace


@dataclass
class SimTrace:
    """Per-tick closed-loop history. Row k is the tick starting at t[k]."""

    t: NDArray[np.float64]
    states: NDArray[np.float64]      # measured state at tick start
    controls: NDArray[np.float64]    # commanded control
    pwm: NDArray[np.float64]
    u_ref: NDArray[np.float64]       # PID reference control
    qp_iters: NDArray[np.int64]
    prep_us: NDArray[np.float64]
    fb_us: NDArray[np.float64]
    fallback: NDArray[np.int64]
    final_state: NDArray[np.float64] = field(default_factory=lambda: np.zeros(NX))

    def __len__(self):
        return self.t.size

    def truncated(self, ticks: int) -> "SimTrace":
        return SimTrace(
            t=self.t[:ticks].copy(), states=self.states[:ticks].copy(),
            controls=self.controls[:ticks].copy(), pwm=self.pwm[:ticks].copy(),
            u_ref=self.u_ref[:ticks].copy(), qp_iters=self.qp_iters[:ticks].copy(),
            prep_us=self.prep_us[:ticks].copy(), fb_us=self.fb_us[:ticks].copy(),
            fallback=self.fallback[:ticks].copy(),
            final_state=self.final_state.copy(),
        )


def run_scenario(cfg: ScenarioConfig, fault_hook=None) -> SimTrace:
    """Run one closed-loop scenario to completion.

    `fault_hook(tick, solver)` is a test seam called before each NMPC
    solve; it may raise QpFailure to exercise the fallback path.
    """
    ticks = cfg.n_ticks
    if ticks < 1:
        raise ConfigError("duration * control_rate must be >= 1 tick")
    dt = cfg.tick_dt
    plant_sub = max(1, int(round(dt / cfg.plant_substep)))

    plant_params = QuadParams(
        m=cfg.quad.m * cfg.plant_mass_scale, l=cfg.quad.l,
        ixx=cfg.quad.ixx, iyy=cfg.quad.iyy, izz=cfg.quad.izz,
        gravity=cfg.quad.gravity,
    )
    impl = backend.get_module(cfg.backend)
    p_arr = plant_params.as_array()

    mixer = Mixer(cfg.mixer, cfg.quad)
    pid = CascadedPid(cfg.pid, cfg.quad, cfg.ocp.u_min, cfg.ocp.u_max)
    use_nmpc = cfg.controller == CONTROLLER_NMPC
    solver = RtiSolver(cfg.ocp, cfg.quad, cfg.backend) if use_nmpc else None

    rng = np.random.default_rng(cfg.seed) if cfg.sensor_noise_std > 0 else None

    trace = SimTrace(
        t=np.arange(ticks) * dt,
        states=np.zeros((ticks, NX)), controls=np.zeros((ticks, NU)),
        pwm=np.zeros((ticks, NU)), u_ref=np.zeros((ticks, NU)),
        qp_iters=np.zeros(ticks, dtype=np.int64),
        prep_us=np.zeros(ticks), fb_us=np.zeros(ticks),
        fallback=np.zeros(ticks, dtype=np.int64),
    )

    x_true = np.array(cfg.initial_state, dtype=float)
    n = cfg.ocp.n_horizon
    initialized = False

    for k in range(ticks):
        x_meas = x_true.copy()
        if rng is not None:
            x_meas += rng.normal(0.0, cfg.sensor_noise_std, NX)

        x_ref, u_ref_nodes = pid.build_reference(
            x_meas, cfg.target_position, cfg.target_yaw, n, dt
        )
        u_ref = u_ref_nodes[0]

        prep_us = fb_us = 0.0
        qp_iters = 0
        fell_back = False
        if use_nmpc:
            if not initialized:
                solver.reset(x_meas, u_ref)
                initialized = True
            solver.set_reference(x_ref, u_ref_nodes)
            try:
                if fault_hook is not None:
                    fault_hook(k, solver)
                t0 = time.perf_counter_ns()
                solver.prepare()
                prep_us = (time.perf_counter_ns() - t0) * 1e-3
                t0 = time.perf_counter_ns()
                u = solver.feedback(x_meas)
                fb_us = (time.perf_counter_ns() - t0) * 1e-3
                qp_iters = solver.qp_iterations
            except (QpFailure, NonFiniteLinearization) as exc:
                log.warning("tick %d: %s; falling back to PID reference", k, exc)
                u = np.clip(u_ref, cfg.ocp.u_min, cfg.ocp.u_max)
                solver.reset(x_meas, u)
                fell_back = True
        else:
            u = np.clip(u_ref, cfg.ocp.u_min, cfg.ocp.u_max)

        pwm = mixer.mix(u)
        u_plant = mixer.pwm_to_control(pwm)

        trace.states[k] = x_meas
        trace.controls[k] = u
        trace.pwm[k] = pwm
        trace.u_ref[k] = u_ref
        trace.qp_iters[k] = qp_iters
        trace.prep_us[k] = prep_us
        trace.fb_us[k] = fb_us
        trace.fallback[k] = int(fell_back)

        x_true = impl.rk4_step(x_true, u_plant, p_arr, dt, plant_sub)

        if not np.isfinite(x_true).all():
            trace.final_state = x_true
            raise SafetyAbort(k, "non-finite state", trace.truncated(k + 1))
        if abs(x_true[3]) > SAFETY_TILT or abs(x_true[4]) > SAFETY_TILT:
            trace.final_state = x_true
            raise SafetyAbort(
                k, f"attitude outside safety envelope "
                   f"(phi={x_true[3]:.3f}, theta={x_true[4]:.3f})",
                trace.truncated(k + 1),
            )

        if use_nmpc and not fell_back:
            solver.shift()

    trace.final_state = x_true
    return trace


def sweep_horizon(cfg: ScenarioConfig, n_list, substep_list,
                  max_workers: int | None = None):
    """Run the scenario per (N, substeps) cell; returns a list of row dicts.

    Cells are independent and may run in parallel threads (the compiled
    kernels drop the GIL); NMPCM_THREADS caps the worker count. Failures
    are recorded per cell and do not stop the sweep.
    """
    cells = [(int(n), int(s)) for n in n_list for s in substep_list]
    if not cells:
        raise ConfigError("n_list and substep_list must be nonempty")
    env_cap = os.environ.get("NMPCM_THREADS")
    workers = max_workers or len(cells)
    if env_cap:
        try:
            workers = max(1, min(workers, int(env_cap)))
        except ValueError:
            raise ConfigError(f"NMPCM_THREADS must be an integer: {env_cap!r}")
    workers = max(1, min(workers, len(cells), os.cpu_count() or 1))

    def cell(args):
        n, sub = args
        row = {"n": n, "substeps": sub, "median_us": float("nan"),
               "p99_us": float("nan"), "workspace_bytes": 0, "settled": 0}
        ocp = ocp_with(cfg.ocp, n_horizon=n, substeps=sub)
        try:
            row["workspace_bytes"] = RtiSolver(
                ocp, cfg.quad, cfg.backend
            ).workspace_bytes()
            sub_cfg = ScenarioConfig(
                name=f"{cfg.name}-n{n}-s{sub}",
                initial_state=cfg.initial_state,
                target_position=cfg.target_position,
                target_yaw=cfg.target_yaw, duration=cfg.duration,
                control_rate=cfg.control_rate, plant_substep=cfg.plant_substep,
                controller=cfg.controller, seed=cfg.seed,
                sensor_noise_std=cfg.sensor_noise_std,
                plant_mass_scale=cfg.plant_mass_scale,
                ocp=ocp, pid=cfg.pid, quad=cfg.quad, mixer=cfg.mixer,
                backend=cfg.backend,
            )
            trace = run_scenario(sub_cfg)
            rep = metrics.compute(trace, cfg.target_position)
            cycle = trace.prep_us + trace.fb_us
            row["median_us"] = float(np.median(cycle))
            row["p99_us"] = float(np.percentile(cycle, 99))
            row["settled"] = int(rep.settled)
        except (SafetyAbort, QpFailure, ConfigError) as exc:
            log.warning("sweep cell n=%d substeps=%d failed: %s", n, sub, exc)
        return row

    if workers == 1:
        return [cell(c) for c in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(cell, cells))


def ocp_with(ocp, **changes):
    """Copy of an OcpConfig with some fields replaced."""
    from dataclasses import replace

    return replace(ocp, **{
        "w_state": ocp.w_state.copy(),
        "w_control": ocp.w_control.copy(),
        "w_terminal": ocp.w_terminal.copy(),
        "u_min": ocp.u_min.copy(), "u_max": ocp.u_max.copy(),
        "x_min": ocp.x_min.copy(), "x_max": ocp.x_max.copy(),
        **changes,
    })


def write_trace(trace: SimTrace, path) -> None:
    """Emit the exact trace.csv column contract, 17 significant digits."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for k in range(len(trace)):
            vals = [trace.t[k], *trace.states[k], *trace.controls[k],
                    *trace.pwm[k], *trace.u_ref[k]]
            row = [f"{v:.17g}" for v in vals]
            row.append(str(int(trace.qp_iters[k])))
            row.append(f"{trace.prep_us[k]:.17g}")
            row.append(f"{trace.fb_us[k]:.17g}")
            row.append(str(int(trace.fallback[k])))
            fh.write(",".join(row) + "\n")


def write_sweep(rows, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("n,substeps,median_us,p99_us,workspace_bytes,settled\n")
        for r in rows:
            fh.write(
                f"{r['n']},{r['substeps']},{r['median_us']:.17g},"
                f"{r['p99_us']:.17g},{r['workspace_bytes']},{r['settled']}\n"
            )
