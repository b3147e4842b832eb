"""Real-time iteration layer: one Gauss-Newton SQP step per control tick.

Each tick splits into two phases. `prepare` integrates the current
trajectory guess with RK4, linearizes via the exact discrete-map
sensitivities, and condenses the linearized multiple-shooting problem into
a dense QP over control corrections, with the initial-state correction left
as a parameter. `feedback` plugs in the measured state, solves the QP
warm-started from the previous active set, applies the corrections, and
returns the first control. `shift` advances the guess one interval for the
next tick.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from . import backend
from .qp import QpFailure, QpStatus
from .quad import NU, NX, QuadParams

DEFAULT_W_STATE = (20.0, 20.0, 40.0, 5.0, 5.0, 5.0, 2.0, 2.0, 4.0, 0.5, 0.5, 0.5)
DEFAULT_W_CONTROL = (0.05, 10.0, 10.0, 10.0)
DEFAULT_U_MIN = (17.5, -0.1, -0.1, -0.1)
DEFAULT_U_MAX = (25.0, 0.1, 0.1, 0.1)


class NonFiniteLinearization(RuntimeError):
    """A Jacobian or defect entry came out non-finite during prepare."""


def _vec(value, size, name) -> NDArray[np.float64]:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(size, float(arr[0]))
    if arr.size != size:
        raise ValueError(f"{name} must have {size} entries")
    return arr


@dataclass
class OcpConfig:
    """Horizon, weights, and bounds of the tracking OCP.

    Weight naming is semantic: `w_state` is the diagonal stage state weight,
    `w_control` the control weight, `w_terminal` the extra terminal state
    weight. State bounds default to unbounded; when finite they enter the
    QP as soft general rows sharing one slack variable with quadratic
    penalty `soft_penalty`.
    """

    n_horizon: int = 10
    dt_shoot: float = 0.05           # shooting interval [s]
    substeps: int = 5                # RK4 sub-intervals per shooting interval
    w_state: NDArray[np.float64] = field(default_factory=lambda: np.array(DEFAULT_W_STATE))
    w_control: NDArray[np.float64] = field(default_factory=lambda: np.array(DEFAULT_W_CONTROL))
    w_terminal: Optional[NDArray[np.float64]] = None   # default 2 * w_state
    u_min: NDArray[np.float64] = field(default_factory=lambda: np.array(DEFAULT_U_MIN))
    u_max: NDArray[np.float64] = field(default_factory=lambda: np.array(DEFAULT_U_MAX))
    x_min: Optional[NDArray[np.float64]] = None        # default unbounded
    x_max: Optional[NDArray[np.float64]] = None
    soft_penalty: float = 1e4
    levenberg: float = 1e-9

    def __post_init__(self):
        self.n_horizon = int(self.n_horizon)
        self.dt_shoot = float(self.dt_shoot)
        self.substeps = int(self.substeps)
        self.w_state = _vec(self.w_state, NX, "w_state")
        self.w_control = _vec(self.w_control, NU, "w_control")
        if self.w_terminal is None:
            self.w_terminal = 2.0 * self.w_state
        else:
            self.w_terminal = _vec(self.w_terminal, NX, "w_terminal")
        self.u_min = _vec(self.u_min, NU, "u_min")
        self.u_max = _vec(self.u_max, NU, "u_max")
        self.x_min = (np.full(NX, -np.inf) if self.x_min is None
                      else _vec(self.x_min, NX, "x_min"))
        self.x_max = (np.full(NX, np.inf) if self.x_max is None
                      else _vec(self.x_max, NX, "x_max"))
        if self.n_horizon < 1:
            raise ValueError("n_horizon must be >= 1")
        if self.dt_shoot <= 0:
            raise ValueError("dt_shoot must be > 0")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        for name in ("w_state", "w_control", "w_terminal"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} entries must be >= 0")
        if np.any(self.u_min >= self.u_max):
            raise ValueError("u_min must be < u_max elementwise")
        if np.any(self.x_min > self.x_max):
            raise ValueError("x_min must be <= x_max")
        if self.soft_penalty <= 0:
            raise ValueError("soft_penalty must be > 0")
        if self.levenberg < 0:
            raise ValueError("levenberg must be >= 0")

    @property
    def horizon_seconds(self) -> float:
        return self.n_horizon * self.dt_shoot


class RtiSolver:
    """Owner of one RTI workspace+guess pair. Single-threaded by contract.

    All buffers are sized at construction from the config; nothing grows
    afterwards. Independent instances may run concurrently.
    """

    def __init__(self, cfg: OcpConfig, params: QuadParams,
                 backend_name: str | None = None):
        impl = backend.get_module(backend_name)
        self.backend = backend_name or backend.default_backend()
        self.cfg = cfg
        self.params = params
        self._core = impl.RtiCore(
            cfg.n_horizon, cfg.dt_shoot, cfg.substeps, params.as_array(),
            cfg.w_state, cfg.w_control, cfg.w_terminal, cfg.u_min, cfg.u_max,
            cfg.x_min, cfg.x_max, cfg.soft_penalty, cfg.levenberg,
        )

    # -- guess and reference ---------------------------------------------

    @property
    def states(self) -> NDArray[np.float64]:
        """Trajectory guess states, shape (N+1, 12). Live buffer."""
        return np.asarray(self._core.states)

    @property
    def controls(self) -> NDArray[np.float64]:
        """Trajectory guess controls, shape (N, 4). Live buffer."""
        return np.asarray(self._core.controls)

    @property
    def qp_iterations(self) -> int:
        return int(self._core.qp_iterations)

    def reset(self, x0, u0) -> None:
        """Initialize the guess: every state node x0, every control u0."""
        self._core.reset(np.asarray(x0, dtype=float), np.asarray(u0, dtype=float))

    def set_reference(self, x_ref, u_ref) -> None:
        """Set tracking references: x_ref (N+1, 12), u_ref (N, 4) or (N+1, 4)."""
        x_ref = np.asarray(x_ref, dtype=float)
        u_ref = np.asarray(u_ref, dtype=float)
        n = self.cfg.n_horizon
        if x_ref.shape != (n + 1, NX):
            raise ValueError(f"x_ref must have shape ({n + 1}, {NX})")
        if u_ref.shape == (n + 1, NU):
            u_ref = u_ref[:n]
        if u_ref.shape != (n, NU):
            raise ValueError(f"u_ref must have shape ({n}, {NU})")
        self._core.set_reference(x_ref, u_ref)

    # -- RTI phases -------------------------------------------------------

    def prepare(self) -> None:
        """Integrate, linearize, condense along the current guess."""
        if self._core.prepare() != 0:
            raise NonFiniteLinearization(
                "non-finite entries in the linearization; reset the guess"
            )

    def feedback(self, x_measured) -> NDArray[np.float64]:
        """Solve the condensed QP at the measured state, update the guess.

        Returns a copy of the first control, hard-clipped to the control
        bounds. Raises QpFailure on iteration limit or infeasibility; the
        guess is left untouched in that case so the caller can fall back
        and retry next tick.
        """
        core = self._core
        np.asarray(core.x_meas)[:] = np.asarray(x_measured, dtype=float)
        code = core.feedback()
        if code != 0:
            status = QpStatus(code)
            raise QpFailure(f"condensed QP ended with {status.name}", status)
        return np.array(core.u_cmd)

    def shift(self) -> None:
        """Advance the guess one shooting interval (warm start hand-off)."""
        self._core.shift()

    # -- introspection ----------------------------------------------------

    def workspace_bytes(self) -> int:
        """Total bytes of the fixed-capacity solver buffers."""
        return int(self._core.workspace_bytes())

    def trajectory_cost(self) -> float:
        """Tracking cost of the current guess against the current refs.

        Re-integrates nothing: evaluates the discrete cost on the stored
        nodes (stage states at nodes 1..N, terminal extra at N, controls at
        0..N-1).
        """
        core = self._core
        n = self.cfg.n_horizon
        xs = np.asarray(core.states)
        us = np.asarray(core.controls)
        xr = np.asarray(core.x_ref)
        ur = np.asarray(core.u_ref)
        cost = 0.0
        for k in range(1, n + 1):
            w = self.cfg.w_state + (self.cfg.w_terminal if k == n else 0.0)
            e = xs[k] - xr[k]
            cost += float(e @ (w * e))
        for k in range(n):
            e = us[k] - ur[k]
            cost += float(e @ (self.cfg.w_control * e))
        return cost
