"""Quadrotor model: parameters, state conventions, RK4 discretization.

State vector layout (12 entries):

    index  0..2   p, q, r          position [m]
    index  3..5   phi, theta, psi  Euler angles [rad], stored unwrapped
    index  6..8   dp, dq, dr       linear velocity [m/s]
    index  9..11  dphi, dtheta, dpsi  angular rates [rad/s]

Controls are ``[u1, u2, u3, u4]``: total thrust [N] and the three body
torques [N m]. The inertia values are carried in kg m^2 (see docs/config.md
for the unit note on the platform datasheet).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from . import backend

NX = 12
NU = 4

# state index constants
IX_P, IX_Q, IX_R = 0, 1, 2
IX_PHI, IX_THETA, IX_PSI = 3, 4, 5
IX_DP, IX_DQ, IX_DR = 6, 7, 8
IX_DPHI, IX_DTHETA, IX_DPSI = 9, 10, 11


@dataclass
class QuadParams:
    """Physical parameters of the platform."""

    m: float = 2.11          # mass [kg]
    l: float = 0.159         # arm length, hub to motor [m]
    ixx: float = 0.0785      # [kg m^2]
    iyy: float = 0.0785
    izz: float = 0.105
    gravity: float = 9.81    # [m/s^2]

    def __post_init__(self):
        for name in ("m", "l", "ixx", "iyy", "izz", "gravity"):
            if not getattr(self, name) > 0:
                raise ValueError(f"QuadParams.{name} must be > 0")

    def as_array(self) -> NDArray[np.float64]:
        """Parameter vector in backend order [m, l, ixx, iyy, izz, g]."""
        return np.array(
            [self.m, self.l, self.ixx, self.iyy, self.izz, self.gravity]
        )

    def hover_thrust(self) -> float:
        return self.m * self.gravity


@dataclass
class QuadState:
    """Named view of the 12-entry state vector."""

    p: float = 0.0
    q: float = 0.0
    r: float = 0.0
    phi: float = 0.0
    theta: float = 0.0
    psi: float = 0.0
    dp: float = 0.0
    dq: float = 0.0
    dr: float = 0.0
    dphi: float = 0.0
    dtheta: float = 0.0
    dpsi: float = 0.0

    _FIELDS = ("p", "q", "r", "phi", "theta", "psi",
               "dp", "dq", "dr", "dphi", "dtheta", "dpsi")

    def as_array(self) -> NDArray[np.float64]:
        return np.array([getattr(self, f) for f in self._FIELDS])

    @classmethod
    def from_array(cls, x) -> "QuadState":
        x = np.asarray(x, dtype=float)
        if x.shape != (NX,):
            raise ValueError(f"state vector must have shape ({NX},)")
        return cls(**dict(zip(cls._FIELDS, (float(v) for v in x))))


@dataclass
class ControlInput:
    """Thrust and body torques."""

    u1: float = 0.0
    u2: float = 0.0
    u3: float = 0.0
    u4: float = 0.0

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.u1, self.u2, self.u3, self.u4])

    @classmethod
    def from_array(cls, u) -> "ControlInput":
        u = np.asarray(u, dtype=float)
        if u.shape != (NU,):
            raise ValueError(f"control vector must have shape ({NU},)")
        return cls(*(float(v) for v in u))


@dataclass
class StateJacobians:
    """Exact Jacobians of the discrete RK4 map."""

    a: NDArray[np.float64] = field(default_factory=lambda: np.eye(NX))
    b: NDArray[np.float64] = field(default_factory=lambda: np.zeros((NX, NU)))


def _as_state(x) -> NDArray[np.float64]:
    if isinstance(x, QuadState):
        return x.as_array()
    return np.asarray(x, dtype=float)


def _as_control(u) -> NDArray[np.float64]:
    if isinstance(u, ControlInput):
        return u.as_array()
    return np.asarray(u, dtype=float)


def continuous_dynamics(x, u, params: QuadParams, backend_name: str | None = None):
    """Continuous-time state derivative.

    Translational accelerations project the thrust through the Z-Y-X Euler
    rotation and subtract gravity; angular accelerations carry the
    gyroscopic cross-coupling terms (iyy - izz) etc. Total function of
    finite inputs: no clamping, no failure modes.
    """
    impl = backend.get_module(backend_name)
    return impl.dynamics(_as_state(x), _as_control(u), params.as_array())


def rk4_step(x, u, params: QuadParams, dt: float, substeps: int = 1,
             backend_name: str | None = None):
    """Integrate one zero-order-hold interval with classical RK4.

    The interval is cut into `substeps` equal sub-intervals. The hover
    equilibrium is an exact fixed point of this map for any dt.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    impl = backend.get_module(backend_name)
    return impl.rk4_step(_as_state(x), _as_control(u), params.as_array(), dt,
                         substeps)


def rk4_step_with_sensitivities(x, u, params: QuadParams, dt: float,
                                substeps: int = 1,
                                backend_name: str | None = None):
    """RK4 step plus the exact Jacobians of the discrete map.

    Returns ``(x_next, StateJacobians)``. The Jacobians come from
    propagating the variational equations through every RK4 stage, so they
    are derivatives of the *discrete* map, exactly consistent with
    `rk4_step` output.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    impl = backend.get_module(backend_name)
    xn, a, b = impl.rk4_step_sens(_as_state(x), _as_control(u),
                                  params.as_array(), dt, substeps)
    return xn, StateJacobians(a=a, b=b)
