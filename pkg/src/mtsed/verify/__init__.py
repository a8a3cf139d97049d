"""Certification tools: feasibility and KKT checks, the energy function,
a centralised interior-point oracle and a brute-force active-set solver."""

from .centralized import OracleResult, SlaterReport, equilibrium, oracle, slater_screen
from .enumeration import EnumerationResult, enumerate_active_sets, enumerate_compact
from .kkt import FeasibilityReport, KktReport, check_feasibility, check_kkt
from .lyapunov import LyapunovValue, lyapunov
from .qp import InfeasibleError, IterationLimitError, QpError, solve_qp

__all__ = [
    "EnumerationResult",
    "FeasibilityReport",
    "InfeasibleError",
    "IterationLimitError",
    "KktReport",
    "LyapunovValue",
    "OracleResult",
    "QpError",
    "SlaterReport",
    "check_feasibility",
    "check_kkt",
    "enumerate_active_sets",
    "enumerate_compact",
    "equilibrium",
    "lyapunov",
    "oracle",
    "slater_screen",
    "solve_qp",
]
