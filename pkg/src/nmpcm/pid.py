"""Cascaded PID: position loop feeding an attitude loop.

Produces both the standalone baseline controller and the control reference
u_r the NMPC tracks and warm-starts from. The position loop turns position
error into desired accelerations, inverts them into a thrust feedforward
and small-angle attitude setpoints; the attitude loop turns angle errors
into body torques. All outputs clamp to the configured control bounds,
attitude setpoints to +-0.35 rad. Derivative terms act on measured rates
(derivative-on-measurement), so setpoint steps cause no derivative kick.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .quad import NU, NX, QuadParams

TILT_LIMIT = 0.35  # [rad] attitude setpoint clamp


def _gain3(value, name) -> NDArray[np.float64]:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        arr = np.full(3, float(arr[0]))
    if arr.size != 3:
        raise ValueError(f"{name} must have 3 entries")
    if np.any(arr < 0):
        raise ValueError(f"{name} entries must be >= 0")
    return arr


@dataclass
class PidGains:
    """Per-axis gain triplets for both loops plus the anti-windup clamp."""

    pos_kp: NDArray[np.float64] = field(default_factory=lambda: np.array([2.0, 2.0, 4.0]))
    pos_ki: NDArray[np.float64] = field(default_factory=lambda: np.array([0.0, 0.0, 0.2]))
    pos_kd: NDArray[np.float64] = field(default_factory=lambda: np.array([1.5, 1.5, 2.5]))
    att_kp: NDArray[np.float64] = field(default_factory=lambda: np.array([3.0, 3.0, 1.5]))
    att_ki: NDArray[np.float64] = field(default_factory=lambda: np.array([0.0, 0.0, 0.0]))
    att_kd: NDArray[np.float64] = field(default_factory=lambda: np.array([0.4, 0.4, 0.3]))
    integrator_limit: float = 2.0

    def __post_init__(self):
        for name in ("pos_kp", "pos_ki", "pos_kd", "att_kp", "att_ki", "att_kd"):
            setattr(self, name, _gain3(getattr(self, name), name))
        self.integrator_limit = float(self.integrator_limit)
        if not self.integrator_limit > 0:
            raise ValueError("integrator_limit must be > 0")


class CascadedPid:
    """Position -> attitude cascade with internal integrator state.

    One instance per control loop; not shareable across threads. The same
    instance serves both the CascadedPidOnly controller and the NMPC
    reference generator, advancing its integrators once per tick.
    """

    def __init__(self, gains: PidGains, params: QuadParams, u_min, u_max):
        self.gains = gains
        self.params = params
        self.u_min = np.asarray(u_min, dtype=float).copy()
        self.u_max = np.asarray(u_max, dtype=float).copy()
        self._pos_int = np.zeros(3)
        self._att_int = np.zeros(3)

    def reset(self) -> None:
        self._pos_int[:] = 0.0
        self._att_int[:] = 0.0

    def position_loop(self, x, target_pos, target_yaw, dt):
        """Desired tilt and thrust feedforward from position error.

        PID on position error yields desired accelerations (ax, ay, az);
        inversion gives u1_ff = m (g + az) / (cos phi cos theta) and the
        small-angle, yaw-rotated tilt setpoints

            phi_d   = (ax sin psi - ay cos psi) / g
            theta_d = (ax cos psi + ay sin psi) / g

        Returns (phi_d, theta_d, u1_ff), all clamped.
        """
        g = self.gains
        x = np.asarray(x, dtype=float)
        err = np.asarray(target_pos, dtype=float) - x[0:3]
        self._pos_int += err * dt
        lim = g.integrator_limit
        np.clip(self._pos_int, -lim, lim, out=self._pos_int)
        acc = g.pos_kp * err + g.pos_ki * self._pos_int - g.pos_kd * x[6:9]
        grav = self.params.gravity
        denom = np.cos(x[3]) * np.cos(x[4])
        # near the gimbal region the inversion denominator collapses; the
        # simulator aborts well before cos phi cos theta reaches 0.1
        denom = max(denom, 0.1)
        u1 = self.params.m * (grav + acc[2]) / denom
        u1 = min(max(u1, self.u_min[0]), self.u_max[0])
        sps, cps = np.sin(x[5]), np.cos(x[5])
        phi_d = (acc[0] * sps - acc[1] * cps) / grav
        theta_d = (acc[0] * cps + acc[1] * sps) / grav
        phi_d = min(max(phi_d, -TILT_LIMIT), TILT_LIMIT)
        theta_d = min(max(theta_d, -TILT_LIMIT), TILT_LIMIT)
        return phi_d, theta_d, u1

    def attitude_loop(self, x, phi_d, theta_d, psi_d, dt):
        """Body torques from attitude error with rate damping."""
        g = self.gains
        x = np.asarray(x, dtype=float)
        err = np.array([phi_d, theta_d, psi_d]) - x[3:6]
        self._att_int += err * dt
        lim = g.integrator_limit
        np.clip(self._att_int, -lim, lim, out=self._att_int)
        tau = g.att_kp * err + g.att_ki * self._att_int - g.att_kd * x[9:12]
        tau = np.clip(tau, self.u_min[1:4], self.u_max[1:4])
        return float(tau[0]), float(tau[1]), float(tau[2])

    def control(self, x, target_pos, target_yaw, dt) -> NDArray[np.float64]:
        """One full cascade update; returns (u1, u2, u3, u4) in bounds."""
        phi_d, theta_d, u1 = self.position_loop(x, target_pos, target_yaw, dt)
        u2, u3, u4 = self.attitude_loop(x, phi_d, theta_d, target_yaw, dt)
        return np.array([u1, u2, u3, u4])

    def build_reference(self, x, target_pos, target_yaw, n_horizon, dt):
        """Tracking references for the NMPC horizon.

        Runs both loops once from the current state, then replicates the
        target-as-state (zero rates, target yaw) and the resulting control
        reference across all N+1 nodes. Returns (x_ref, u_ref) with shapes
        (N+1, 12) and (N+1, 4).
        """
        u = self.control(x, target_pos, target_yaw, dt)
        x_ref = np.zeros((n_horizon + 1, NX))
        x_ref[:, 0:3] = np.asarray(target_pos, dtype=float)
        x_ref[:, 5] = float(target_yaw)
        u_ref = np.tile(u, (n_horizon + 1, 1))
        return x_ref, u_ref
