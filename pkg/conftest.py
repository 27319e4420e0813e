import json

import numpy as np
import pytest

from core_types import DelayFunction, GainFunction
from models import build_scalar
from solver import SolverConfig


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance runs")


def benchmark_closed_form(t):
    """u' = -u + 0.3 u(t - 1), u = 1 on [-1, 0], solved by hand on [0, 2]"""
    t = np.asarray(t, dtype=float)
    first = 0.3 + 0.7 * np.exp(-t)
    second = 0.09 + (0.21 * np.e * t + 0.7) * np.exp(-t)
    return np.where(t <= 1.0, first, second)


@pytest.fixture
def benchmark():
    return build_scalar(1.0, 1.0, GainFunction.constant(0.3), DelayFunction.constant(1.0), history=1.0)


@pytest.fixture
def vanishing():
    delay = DelayFunction.from_expression("abs(sin(t))", 1.0)
    return build_scalar(1.0, 1.0, GainFunction.constant(0.3), delay, history=1.0)


@pytest.fixture
def coarse():
    return SolverConfig(dt=1e-2)


@pytest.fixture
def scalar_document():
    return {
        "model": {"kind": "scalar", "a": 1.0, "b": 1.0},
        "delay": {"kind": "constant", "value": 1.0},
        "gain": {"kind": "constant", "value": 0.3},
        "history": {"kind": "constant", "value": 1.0},
        "solver": {"T": 5.0, "dt": 0.01},
        "analysis": {"oracle_refinement": 8, "oracle_tolerance": 1e-4},
    }


@pytest.fixture
def write_config(tmp_path):
    def write(document, name="run"):
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(document))
        return path

    return write
