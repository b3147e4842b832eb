"""Fixed-capacity real-time-iteration NMPC for a 12-state quadrotor.

The package couples a cascaded PID reference generator, a multiple-shooting
Gauss-Newton RTI solver with condensing, a dense active-set QP core, a motor
mixer, and a deterministic closed-loop simulator with benchmark metrics.

Hot kernels live in a compiled extension (``nmpcm._core``); a numpy fallback
(``nmpcm._purepy``) with the same interface is selected automatically when the
extension is unavailable. See ``nmpcm.backend``.
"""

from .backend import available_backends, default_backend
from .mixer import Mixer, MixerConfig
from .pid import CascadedPid, PidGains
from .qp import DenseQpSolver, QpFailure, QpProblem, QpSolution, QpStatus
from .quad import (
    ControlInput,
    QuadParams,
    QuadState,
    StateJacobians,
    continuous_dynamics,
    rk4_step,
    rk4_step_with_sensitivities,
)
from .rti import NonFiniteLinearization, OcpConfig, RtiSolver

__version__ = "0.1.0"

__all__ = [
    "available_backends",
    "default_backend",
    "CascadedPid",
    "ControlInput",
    "DenseQpSolver",
    "Mixer",
    "MixerConfig",
    "NonFiniteLinearization",
    "OcpConfig",
    "PidGains",
    "QpFailure",
    "QpProblem",
    "QpSolution",
    "QpStatus",
    "QuadParams",
    "QuadState",
    "RtiSolver",
    "StateJacobians",
    "continuous_dynamics",
    "rk4_step",
    "rk4_step_with_sensitivities",
    "__version__",
]
