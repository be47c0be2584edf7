"""
Shared fixtures: small systems, coarse integrators and a minimal scenario.
"""

import math

import numpy as np
import pytest

from skewflow.cocycle import IntegratorConfig, SystemDef
from skewflow.driving import DrivingFlowSpec, DrivingGrid
from skewflow.signals import ControlRange


LINEAR_AMPLITUDE = 0.5


def linear_alpha(w: float) -> float:
    """Periodic solution of x' = -x + A sin(2 pi w), w' = 1."""
    a = LINEAR_AMPLITUDE / (1.0 + 4.0 * math.pi**2)
    return a * (math.sin(2.0 * math.pi * w) - 2.0 * math.pi * math.cos(2.0 * math.pi * w))


@pytest.fixture
def cubic_system():
    """x' = -x^3 + u, u in [-0.5, 0.5], Q = [-2, 2]."""
    return SystemDef.from_strings(
        1, DrivingFlowSpec((1.0,)), ControlRange((-0.5,), (0.5,)), [["-x1^3"], ["1"]], [(-2.0, 2.0)], "cubic"
    )


@pytest.fixture
def linear_system():
    """x' = -x + 0.5 sin(2 pi w1) + u, u in [-0.25, 0.25], Q = [-2, 2]."""
    return SystemDef.from_strings(
        1,
        DrivingFlowSpec((1.0,)),
        ControlRange((-0.25,), (0.25,)),
        [[f"-x1 + {LINEAR_AMPLITUDE}*sin(2*pi*w1)"], ["1"]],
        [(-2.0, 2.0)],
        "linear",
    )


@pytest.fixture
def planar_system():
    """Two uncoupled damped states, one control acting on both."""
    return SystemDef.from_strings(
        2,
        DrivingFlowSpec((1.0, math.sqrt(2.0))),
        ControlRange((-0.2,), (0.2,)),
        [["-x1 + 0.1*cos(2*pi*w1)", "-2*x2 + 0.1*sin(2*pi*w2)"], ["1", "1"]],
        [(-1.0, 1.0), (-1.0, 1.0)],
        "planar",
    )


@pytest.fixture
def cfg():
    return IntegratorConfig(h=1e-3)


@pytest.fixture
def coarse_cfg():
    return IntegratorConfig(h=1e-2)


@pytest.fixture
def single_cell():
    return DrivingGrid((1,))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scenario_dict():
    """Small autonomous cubic scenario as a plain mapping."""
    return {
        "system": {
            "name": "tiny-cubic",
            "d": 1,
            "frequencies": [1.0],
            "control_lower": [-0.5],
            "control_upper": [0.5],
            "domain": [[-2.0, 2.0]],
            "fields": [["-x1^3"], ["1"]],
        },
        "discretization": {"boxes_per_dim": [32], "driving_cells": [1], "control_levels": 3},
        "chain": {"T": 1.0, "jump_factors": [1.0, 2.0]},
        "integrator": {"h": 1.0e-2},
        "analysis": {
            "seed": 5,
            "simulate": {"x": [1.0], "T": 2.0, "samples": 21},
            "equilibrium": {"seed": [0.0], "horizon": 1.0, "no_return_samples": 40},
            "lift": {"window": 4.0, "count": 4, "pairs": 2},
            "verify": {
                "suites": ["integrator_order", "scc_oracle", "metric"],
                "scc_graphs": 5,
                "metric_triples": 20,
            },
        },
    }
