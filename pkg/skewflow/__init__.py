"""
skewflow
========

Set-oriented computation of chain control sets, control sets and
equilibria for control systems driven by a Kronecker flow on a torus.
"""

from skewflow.cocycle import IntegratorConfig, SystemDef, solve_phi, solve_psi
from skewflow.cover_graph import BoxCover, ChainGraph, ChainSetApprox, build_chain_graph, chain_control_sets
from skewflow.driving import DrivingFlowSpec, DrivingGrid, DrivingPoint
from skewflow.error_handler import SkewflowError
from skewflow.signals import ControlRange, ControlSignal

__version__ = "0.1.0"

__all__ = [
    "BoxCover",
    "ChainGraph",
    "ChainSetApprox",
    "ControlRange",
    "ControlSignal",
    "DrivingFlowSpec",
    "DrivingGrid",
    "DrivingPoint",
    "IntegratorConfig",
    "SkewflowError",
    "SystemDef",
    "build_chain_graph",
    "chain_control_sets",
    "solve_phi",
    "solve_psi",
]
