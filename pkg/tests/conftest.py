"""Shared fixtures: bundled cases, oracle solutions and long convergence runs."""

import numpy as np
import pytest
from helpers import ACCEPTANCE, random_case

from mtsed.network import load_case
from mtsed.problem import assemble_problem, compact_matrices
from mtsed.simulator import IntegratorConfig, run_window
from mtsed.verify import enumerate_compact, equilibrium, lyapunov, oracle, slater_screen
from mtsed.verify.enumeration import count_patterns

RANDOM_INSTANCES = 50
RANDOM_SEED = 20240611
MAX_PATTERNS = 30000


class LyapunovRecorder:
    """Callback storing the energy function at every integration step."""

    def __init__(self, compact, zeta_star):
        self.compact = compact
        self.zeta_star = zeta_star
        self.values = []
        self.sandwich_ok = True

    def __call__(self, k, t, state):
        v = lyapunov(state.ravel(), self.zeta_star, self.compact)
        self.values.append(v.value)
        self.sandwich_ok &= v.sandwich_ok


def _bundle(name):
    case = load_case(name)
    problem = assemble_problem(case)
    compact = compact_matrices(problem)
    return case, problem, compact


def _converged_run(problem, compact):
    sol = oracle(compact)
    recorder = LyapunovRecorder(compact, equilibrium(compact, sol))
    result = run_window(problem, IntegratorConfig(), callback=recorder)
    return result, sol, recorder


@pytest.fixture(scope="session")
def one_bus():
    return _bundle("one_bus")


@pytest.fixture(scope="session")
def ieee14():
    return _bundle("ieee14_mtsed")


@pytest.fixture(scope="session")
def one_bus_oracle(one_bus):
    return oracle(one_bus[2])


@pytest.fixture(scope="session")
def ieee14_oracle(ieee14):
    return oracle(ieee14[2])


@pytest.fixture(scope="session")
def one_bus_run(one_bus):
    """Default RK4 run on the single-bus case with the energy function recorded."""
    return _converged_run(one_bus[1], one_bus[2])


@pytest.fixture(scope="session")
def ieee14_run(ieee14):
    """Default RK4 run on the 14-bus case with the energy function recorded."""
    return _converged_run(ieee14[1], ieee14[2])


@pytest.fixture(scope="session")
def random_instances():
    """Small random cases with a positive Slater margin and few active-set patterns.

    Each entry is ``(case, problem, compact, oracle_result, enumeration_result)``.
    """
    rng = np.random.default_rng(RANDOM_SEED)
    out = []
    while len(out) < RANDOM_INSTANCES:
        case = random_case(rng)
        problem = assemble_problem(case)
        compact = compact_matrices(problem)
        if count_patterns(compact.E, compact.F, compact.omega.lo, compact.omega.hi) > MAX_PATTERNS:
            continue
        if not slater_screen(problem).satisfied:
            continue
        out.append((case, problem, compact, oracle(compact), enumerate_compact(compact)))
    return out


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
