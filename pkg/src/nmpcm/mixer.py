"""Motor mixing: controls (u1..u4) to four PWM commands and back.

The default geometry is an X frame with motors numbered 1 front-left,
2 front-right, 3 back-right, 4 back-left; arm moment arm l' = l / sqrt(2)
on both body axes. Per-motor thrusts come from the inverse mixing

    f = M^-1 [u1, u2/l', u3/l', u4/c_t]

where c_t is the yaw (drag) torque coefficient, and PWM is an affine map
of thrust, clamped to [1000, 2000] us. The inverse map `pwm_to_control`
reconstructs the control actually realized after clamping, which is what
the simulated plant receives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .quad import QuadParams

# per-motor (roll, pitch, yaw) signs of the default X frame
X_FRAME_SIGNS = (
    (1.0, -1.0, -1.0),   # motor 1, front-left
    (-1.0, -1.0, 1.0),   # motor 2, front-right
    (-1.0, 1.0, -1.0),   # motor 3, back-right
    (1.0, 1.0, 1.0),     # motor 4, back-left
)

PWM_MIN = 1000.0
PWM_MAX = 2000.0


@dataclass
class MixerConfig:
    pwm_per_newton: float = 115.0    # thrust-to-PWM slope [us/N]
    pwm_offset: float = 1000.0       # PWM at zero thrust [us]
    yaw_torque_coeff: float = 0.012  # thrust-to-drag-torque ratio [m]
    motor_signs: NDArray[np.float64] = field(
        default_factory=lambda: np.array(X_FRAME_SIGNS)
    )

    def __post_init__(self):
        self.pwm_per_newton = float(self.pwm_per_newton)
        self.pwm_offset = float(self.pwm_offset)
        self.yaw_torque_coeff = float(self.yaw_torque_coeff)
        self.motor_signs = np.asarray(self.motor_signs, dtype=float)
        if self.pwm_per_newton <= 0:
            raise ValueError("pwm_per_newton must be > 0")
        if self.yaw_torque_coeff <= 0:
            raise ValueError("yaw_torque_coeff must be > 0")
        if self.motor_signs.shape != (4, 3):
            raise ValueError("motor_signs must be 4 rows of (roll, pitch, yaw)")


class Mixer:
    """Precomputed mixing matrices for one frame geometry."""

    def __init__(self, cfg: MixerConfig, params: QuadParams):
        self.cfg = cfg
        self.params = params
        arm = params.l / np.sqrt(2.0)
        self.arm = arm
        # rows: total thrust, roll/arm, pitch/arm, yaw/c_t
        m = np.ones((4, 4))
        m[1:4, :] = cfg.motor_signs.T
        if abs(np.linalg.det(m)) < 1e-9:
            raise ValueError("motor_signs give a singular mixing matrix")
        self._fwd = m
        self._inv = np.linalg.inv(m)
        self._scale = np.array([1.0, arm, arm, cfg.yaw_torque_coeff])

    def thrusts(self, u) -> NDArray[np.float64]:
        """Per-motor thrusts [N] realizing the commanded control."""
        v = np.asarray(u, dtype=float) / self._scale
        return self._inv @ v

    def mix(self, u) -> NDArray[np.float64]:
        """Controls to PWM [us], clamped to [1000, 2000]."""
        f = self.thrusts(u)
        pwm = self.cfg.pwm_offset + self.cfg.pwm_per_newton * f
        return np.clip(pwm, PWM_MIN, PWM_MAX)

    def pwm_to_control(self, pwm) -> NDArray[np.float64]:
        """Controls realized by the (possibly clamped) PWM commands."""
        f = (np.asarray(pwm, dtype=float) - self.cfg.pwm_offset) / self.cfg.pwm_per_newton
        return self._scale * (self._fwd @ f)
