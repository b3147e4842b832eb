"""Scenario configuration: schema, validation, YAML ingestion.

The config file is nested YAML with five sections (scenario, ocp, pid,
quad, mixer); docs/config.md is the normative key reference. Unknown keys
anywhere are rejected so weight-name typos fail loudly instead of running
with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml
from numpy.typing import NDArray

from .mixer import MixerConfig
from .pid import PidGains
from .quad import NX, QuadParams
from .rti import OcpConfig

CONTROLLER_NMPC = "nmpc"
CONTROLLER_PID = "pid"


class ConfigError(ValueError):
    """Configuration parse or validation failure (CLI exit code 1)."""


@dataclass
class ScenarioConfig:
    """Everything needed to run one closed-loop scenario."""

    name: str = "scenario"
    initial_state: NDArray[np.float64] = field(default_factory=lambda: np.zeros(NX))
    target_position: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    target_yaw: float = 0.0
    duration: float = 10.0           # [s]
    control_rate: float = 100.0      # [Hz]
    plant_substep: float = 1e-3      # [s]
    controller: str = CONTROLLER_NMPC
    seed: int = 0
    sensor_noise_std: float = 0.0    # optional measurement noise, off by default
    plant_mass_scale: float = 1.0    # model-mismatch knob
    ocp: OcpConfig = field(default_factory=OcpConfig)
    pid: PidGains = field(default_factory=PidGains)
    quad: QuadParams = field(default_factory=QuadParams)
    mixer: MixerConfig = field(default_factory=MixerConfig)
    backend: Optional[str] = None

    def __post_init__(self):
        self.initial_state = np.asarray(self.initial_state, dtype=float).ravel()
        self.target_position = np.asarray(self.target_position, dtype=float).ravel()
        if self.initial_state.size != NX:
            raise ConfigError(f"initial_state must have {NX} entries")
        if self.target_position.size != 3:
            raise ConfigError("target position must have 3 entries")
        if not self.duration > 0:
            raise ConfigError("duration must be > 0")
        if not self.control_rate > 0:
            raise ConfigError("control_rate must be > 0")
        if not 0 < self.plant_substep <= 1.0 / self.control_rate + 1e-12:
            raise ConfigError("plant_substep must be in (0, 1/control_rate]")
        if self.controller not in (CONTROLLER_NMPC, CONTROLLER_PID):
            raise ConfigError(
                f"controller must be '{CONTROLLER_NMPC}' or '{CONTROLLER_PID}'"
            )
        if self.sensor_noise_std < 0:
            raise ConfigError("sensor_noise_std must be >= 0")
        if not 0.5 <= self.plant_mass_scale <= 2.0:
            raise ConfigError("plant_mass_scale must be within [0.5, 2.0]")

    @property
    def tick_dt(self) -> float:
        return 1.0 / self.control_rate

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.control_rate))


_SCENARIO_KEYS = {
    "name", "initial_state", "target", "duration", "control_rate",
    "plant_substep", "controller", "seed", "sensor_noise_std",
    "plant_mass_scale", "backend",
}
_TARGET_KEYS = {"position", "yaw"}
_OCP_KEYS = {
    "n_horizon", "dt_shoot", "substeps", "w_state", "w_control",
    "w_terminal", "u_min", "u_max", "x_min", "x_max", "soft_penalty",
    "levenberg",
}
_PID_KEYS = {"position", "attitude", "integrator_limit"}
_PID_LOOP_KEYS = {"kp", "ki", "kd"}
_QUAD_KEYS = {"mass", "arm_length", "inertia", "gravity"}
_MIXER_KEYS = {"pwm_per_newton", "pwm_offset", "yaw_torque_coeff", "motor_signs"}
_TOP_KEYS = {"scenario", "ocp", "pid", "quad", "mixer"}


def _require_mapping(node, where):
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ConfigError(f"{where} must be a mapping")
    return node


def _check_keys(node: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(node) - allowed)
    if unknown:
        raise ConfigError(f"unknown key {where}.{unknown[0]}")


def load_config(path) -> ScenarioConfig:
    """Parse and validate a scenario file. Raises ConfigError."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return parse_config(raw)


def parse_config(raw) -> ScenarioConfig:
    raw = _require_mapping(raw, "config")
    _check_keys(raw, _TOP_KEYS, "config")

    scn = _require_mapping(raw.get("scenario"), "scenario")
    _check_keys(scn, _SCENARIO_KEYS, "scenario")
    target = _require_mapping(scn.get("target"), "scenario.target")
    _check_keys(target, _TARGET_KEYS, "scenario.target")

    ocp_raw = _require_mapping(raw.get("ocp"), "ocp")
    _check_keys(ocp_raw, _OCP_KEYS, "ocp")
    pid_raw = _require_mapping(raw.get("pid"), "pid")
    _check_keys(pid_raw, _PID_KEYS, "pid")
    quad_raw = _require_mapping(raw.get("quad"), "quad")
    _check_keys(quad_raw, _QUAD_KEYS, "quad")
    mixer_raw = _require_mapping(raw.get("mixer"), "mixer")
    _check_keys(mixer_raw, _MIXER_KEYS, "mixer")

    try:
        quad = QuadParams(
            m=float(quad_raw.get("mass", 2.11)),
            l=float(quad_raw.get("arm_length", 0.159)),
            **_inertia_fields(quad_raw.get("inertia")),
            gravity=float(quad_raw.get("gravity", 9.81)),
        )
        ocp = OcpConfig(**{k: v for k, v in ocp_raw.items()})
        pid = _parse_pid(pid_raw)
        mixer = MixerConfig(**{k: v for k, v in mixer_raw.items()})
        cfg = ScenarioConfig(
            name=str(scn.get("name", "scenario")),
            initial_state=scn.get("initial_state", np.zeros(NX)),
            target_position=target.get("position", (0.0, 0.0, 0.0)),
            target_yaw=float(target.get("yaw", 0.0)),
            duration=float(scn.get("duration", 10.0)),
            control_rate=float(scn.get("control_rate", 100.0)),
            plant_substep=float(scn.get("plant_substep", 1e-3)),
            controller=str(scn.get("controller", CONTROLLER_NMPC)),
            seed=int(scn.get("seed", 0)),
            sensor_noise_std=float(scn.get("sensor_noise_std", 0.0)),
            plant_mass_scale=float(scn.get("plant_mass_scale", 1.0)),
            ocp=ocp, pid=pid, quad=quad, mixer=mixer,
            backend=scn.get("backend"),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _inertia_fields(value) -> dict:
    if value is None:
        return {}
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size != 3:
        raise ConfigError("quad.inertia must have 3 entries (ixx, iyy, izz)")
    return {"ixx": float(arr[0]), "iyy": float(arr[1]), "izz": float(arr[2])}


def _parse_pid(node: dict) -> PidGains:
    pos = _require_mapping(node.get("position"), "pid.position")
    _check_keys(pos, _PID_LOOP_KEYS, "pid.position")
    att = _require_mapping(node.get("attitude"), "pid.attitude")
    _check_keys(att, _PID_LOOP_KEYS, "pid.attitude")
    kwargs = {}
    for prefix, loop in (("pos", pos), ("att", att)):
        for gain in ("kp", "ki", "kd"):
            if gain in loop:
                kwargs[f"{prefix}_{gain}"] = loop[gain]
    if "integrator_limit" in node:
        kwargs["integrator_limit"] = node["integrator_limit"]
    return PidGains(**kwargs)
