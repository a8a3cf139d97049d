"""Distributed multi-time-slot economic dispatch.

Every bus runs a projected primal-dual dynamical system that exchanges
voltages, angles and multipliers with its neighbors only; the coupled
system settles at the optimal dispatch of generators and storage over a
receding window.
"""

from .network import NetworkCase, load_case, parse_case, serialize_case
from .problem import (
    DispatchSolution,
    MtsedProblem,
    assemble_problem,
    compact_matrices,
    total_cost,
)
from .simulator import (
    IntegratorConfig,
    WindowResult,
    init_state,
    receding_horizon,
    run_window,
)

__version__ = "0.1.0"

__all__ = [
    "DispatchSolution",
    "IntegratorConfig",
    "MtsedProblem",
    "NetworkCase",
    "WindowResult",
    "assemble_problem",
    "compact_matrices",
    "init_state",
    "load_case",
    "parse_case",
    "receding_horizon",
    "run_window",
    "serialize_case",
    "total_cost",
]
