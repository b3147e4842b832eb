"""Shared fixtures: backend parametrization and bundled config access."""

from __future__ import annotations

import importlib.resources
from pathlib import Path

import numpy as np
import pytest

from nmpcm import backend
from nmpcm.config import load_config


def pytest_generate_tests(metafunc):
    # Any test taking `backend_name` runs once per built backend.
    if "backend_name" in metafunc.fixturenames:
        metafunc.parametrize("backend_name", backend.available_backends())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def bundled_config(name: str) -> Path:
    ref = importlib.resources.files("nmpcm").joinpath("data", f"{name}.cfg")
    return Path(str(ref))


@pytest.fixture
def hover_cfg():
    return load_config(bundled_config("hover"))


@pytest.fixture
def step_cfg():
    return load_config(bundled_config("step"))


def random_flight_states(rng, count):
    """Batch of plausible flight states: bounded attitude, moderate rates."""
    x = np.zeros((count, 12))
    x[:, 0:3] = rng.uniform(-5.0, 5.0, (count, 3))
    x[:, 3:5] = rng.uniform(-1.0, 1.0, (count, 2))
    x[:, 5] = rng.uniform(-np.pi, np.pi, count)
    x[:, 6:9] = rng.uniform(-4.0, 4.0, (count, 3))
    x[:, 9:12] = rng.uniform(-3.0, 3.0, (count, 3))
    return x


def random_controls(rng, count):
    u = np.zeros((count, 4))
    u[:, 0] = rng.uniform(0.0, 30.0, count)
    u[:, 1:4] = rng.uniform(-0.12, 0.12, (count, 3))
    return u
