"""Tests for the reference solver, certificates, energy function and Slater screen."""

import numpy as np
import pytest
from helpers import gen, make_case, storage
from scipy.optimize import minimize

from mtsed.dynamics import FIELDS
from mtsed.problem import DispatchSolution, assemble_problem, compact_matrices
from mtsed.verify import (
    InfeasibleError,
    IterationLimitError,
    check_feasibility,
    check_kkt,
    enumerate_active_sets,
    enumerate_compact,
    equilibrium,
    lyapunov,
    oracle,
    slater_screen,
    solve_qp,
)

# =============================================================================
# interior-point solver
# =============================================================================

def test_qp_known_solution():
    # min 0.5(x1^2 + x2^2) - x1 - x2  s.t.  x1 + x2 = 1, x1 <= 0.2, 0 <= x <= 1
    r = solve_qp(np.eye(2), [-1.0, -1.0], [[1.0, 1.0]], [1.0], [[1.0, 0.0]], [0.2],
                 [0.0, 0.0], [1.0, 1.0])
    np.testing.assert_allclose(r.x, [0.2, 0.8], atol=1e-8)
    # stationarity with the solver's sign convention
    grad = r.x - 1.0 + r.y[0] * np.ones(2) + r.z[0] * np.array([1.0, 0.0]) + r.z_hi - r.z_lo
    np.testing.assert_allclose(grad, 0.0, atol=1e-8)


def test_qp_fixed_coordinates():
    r = solve_qp(np.eye(3), [1.0, 0.0, -4.0], None, None, None, None,
                 [0.0, 2.0, 0.0], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(r.x, [0.0, 2.0, 3.0], atol=1e-8)


def test_qp_degenerate_bound():
    # the bound is active with a zero multiplier, so the iterates approach it like sqrt(mu)
    r = solve_qp(np.eye(1), [0.0], None, None, None, None, [0.0], [1.0])
    assert 0.0 <= r.x[0] <= 1e-4


@pytest.mark.parametrize("seed", range(8))
def test_qp_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    n = 5
    M = rng.normal(size=(n, n))
    P = M @ M.T * (seed % 2)  # alternate between LPs and strictly convex QPs
    q = rng.normal(size=n)
    A = rng.normal(size=(1, n))
    x0 = rng.uniform(0.2, 0.8, n)
    b = A @ x0
    G = rng.normal(size=(3, n))
    h = G @ x0 + 0.1
    r = solve_qp(P, q, A, b, G, h, np.zeros(n), np.ones(n))
    ref = minimize(lambda x: 0.5 * x @ P @ x + q @ x, x0, jac=lambda x: P @ x + q,
                   bounds=[(0, 1)] * n, method="SLSQP", options={"ftol": 1e-12, "maxiter": 500},
                   constraints=[{"type": "eq", "fun": lambda x: A @ x - b},
                                {"type": "ineq", "fun": lambda x: h - G @ x}])
    assert ref.success
    assert r.objective == pytest.approx(ref.fun, abs=1e-7)


def test_qp_infeasible_certificate():
    with pytest.raises(InfeasibleError) as info:
        solve_qp(np.eye(1), [0.0], [[1.0]], [5.0], None, None, [0.0], [1.0])
    assert info.value.certificate["violation"] > 1.0


def test_qp_iteration_limit():
    rng = np.random.default_rng(0)
    P = np.eye(4)
    with pytest.raises(IterationLimitError):
        solve_qp(P, rng.normal(size=4), None, None, rng.normal(size=(3, 4)), np.ones(3),
                 -np.ones(4), np.ones(4), max_iter=1)


# =============================================================================
# oracle and enumeration
# =============================================================================

def test_oracle_one_bus(one_bus, one_bus_oracle):
    _, _problem, _compact = one_bus
    x, y, _z = one_bus_oracle
    assert 100 * x[0] == pytest.approx(50.0, abs=1e-6)
    # marginal cost a*50 + b = 7.7 $/MWh, in internal units with the dynamics' sign
    assert y[0] == pytest.approx(-(0.014 * 50 + 7.0) * 100 / 2000.0, rel=1e-8)
    assert one_bus_oracle.cost == pytest.approx(607.5, rel=1e-10)
    assert one_bus_oracle.kkt.certified and one_bus_oracle.kkt.tol == 1e-6


def test_oracle_ieee14(ieee14, ieee14_oracle):
    _, _problem, compact = ieee14
    assert ieee14_oracle.kkt.certified
    assert ieee14_oracle.cost == pytest.approx(32642.9, rel=0.05)
    assert ieee14_oracle.cost == pytest.approx(compact.cost(ieee14_oracle.x))


def test_oracle_infeasible():
    problem = assemble_problem(make_case(1, gens=[gen(1)], demand_p=[[400.0]]))
    with pytest.raises(InfeasibleError):
        oracle(compact_matrices(problem))


def test_enumeration_one_bus(one_bus, one_bus_oracle):
    _, _, compact = one_bus
    e = enumerate_compact(compact)
    assert e.patterns == 81
    assert compact.cost(e.x) == pytest.approx(one_bus_oracle.cost, rel=1e-10)


def test_enumeration_simple_qp():
    e = enumerate_active_sets(np.eye(2), [-1.0, -1.0], [[1.0, 1.0]], [1.0], [[1.0, 0.0]], [0.2],
                              [0.0, 0.0], [1.0, 1.0])
    np.testing.assert_allclose(e.x, [0.2, 0.8], atol=1e-12)


def test_enumeration_pattern_limit(ieee14):
    with pytest.raises(ValueError, match="exceed"):
        enumerate_compact(ieee14[2], max_patterns=1000)


def test_oracle_matches_enumeration_on_storage_case():
    case = make_case(2, tau=1, gens=[gen(1, p_min=5.0)], storages=[storage(2, a=3.0)],
                     demand_p=[[20.0], [30.0]], demand_q=[[2.0], [1.0]])
    compact = compact_matrices(assemble_problem(case))
    e = enumerate_compact(compact)
    assert compact.cost(e.x) == pytest.approx(oracle(compact).cost, rel=1e-8)


# =============================================================================
# check_kkt
# =============================================================================

def test_kkt_oracle_certified_strictly(ieee14, ieee14_oracle):
    _, _, compact = ieee14
    report = check_kkt(*ieee14_oracle, compact, tol=1e-6)
    assert report.certified
    assert report.simultaneous_charge_discharge <= 1e-6


def test_kkt_complementarity_break(ieee14, ieee14_oracle):
    _, _, compact = ieee14
    x, y, z = ieee14_oracle
    slack = compact.E @ x - compact.F
    j = int(np.argmin(slack))
    z2 = z.copy()
    z2[j] += 1.0
    report = check_kkt(x, y, z2, compact)
    assert report.complementarity == pytest.approx(abs(slack[j]) * z2[j], rel=1e-6)
    assert not report.certified


def test_kkt_stationarity_interior_point(one_bus):
    _, _problem, compact = one_bus
    x = compact.omega.midpoint()
    y = np.zeros(compact.C.shape[0])
    z = np.zeros(compact.E.shape[0])
    g = compact.A @ x + compact.Bvec
    report = check_kkt(x, y, z, compact)
    lo, hi = compact.omega.lo, compact.omega.hi
    expected = np.max(np.abs(np.clip(x - g, lo, hi) - x))
    assert report.stationarity == pytest.approx(expected)
    assert report.stationarity > 0
    assert report.stationarity <= min(np.max(np.abs(g)), np.max(np.minimum(x - lo, hi - x)))


def test_kkt_shape_check(one_bus):
    _, _, compact = one_bus
    with pytest.raises(ValueError, match="shape"):
        check_kkt(np.zeros(3), np.zeros(2), np.zeros(4), compact)


def test_kkt_flags_simultaneous_charge_discharge():
    case = make_case(1, gens=[gen(1)], storages=[storage(1)], demand_p=[[50.0]])
    problem = assemble_problem(case)
    compact = compact_matrices(problem)
    sol = DispatchSolution.zeros(1, 1)
    sol.p_g[:] = 0.5
    sol.p_c[:] = sol.p_d[:] = 0.1
    sol.v[:] = 1.0
    report = check_kkt(sol.to_vector(), np.zeros(2), np.zeros(4), compact)
    assert report.scaled_eq == 0.0
    assert report.simultaneous_charge_discharge == pytest.approx(0.01)
    assert check_feasibility(sol, problem).p_balance == 0.0


# =============================================================================
# check_feasibility
# =============================================================================

def test_feasibility_oracle_solution(ieee14, ieee14_oracle):
    case, problem, _compact = ieee14
    sol = DispatchSolution.from_vector(ieee14_oracle.x, case.n, case.tau)
    report = check_feasibility(sol, problem)
    assert report.feasible, report.as_dict()


def test_feasibility_single_ramp_violation():
    case = make_case(1, tau=4, gens=[gen(1, ramp_up=60.0, p0=50.0)], demand_p=np.full((1, 4), 50.0))
    problem = assemble_problem(case)
    sol = DispatchSolution.zeros(1, 4)
    sol.p_g[0] = [0.5, 0.5, 0.61, 0.61]  # slot 3 rises 11 MW against a 10 MW limit
    sol.v[:] = 1.0
    report = check_feasibility(sol, problem)
    assert report.ramp == pytest.approx(1.0, abs=1e-9)
    others = {k: v for k, v in report.as_dict().items() if k not in ("ramp", "p_balance")}
    assert all(v == 0.0 for v in others.values())


# =============================================================================
# lyapunov
# =============================================================================

def test_lyapunov_zero_at_equilibrium(ieee14, ieee14_oracle):
    _, _, compact = ieee14
    zs = equilibrium(compact, ieee14_oracle)
    v = lyapunov(zs, zs, compact)
    # x* lies outside the box where multipliers of the box are active
    assert v.value == pytest.approx(v.W)
    assert v.W >= 0.0
    assert v.lower == 0.0
    assert v.sandwich_ok


def test_lyapunov_phase_lead_only(one_bus, one_bus_oracle):
    _, _, compact = one_bus
    zs = equilibrium(compact, one_bus_oracle)
    z = zs.copy()
    rho = FIELDS.index("rho_p")
    z[rho] = 0.3
    v = lyapunov(z, zs, compact)
    assert v.value - lyapunov(zs, zs, compact).value == pytest.approx(0.5 * 0.09)


def test_lyapunov_sandwich_random(ieee14, ieee14_oracle):
    _, _, compact = ieee14
    zs = equilibrium(compact, ieee14_oracle)
    rng = np.random.default_rng(1)
    for _ in range(50):
        v = lyapunov(zs + rng.normal(size=zs.size), zs, compact)
        assert v.sandwich_ok
        assert float(v) >= 0.0


def test_lyapunov_descent_one_bus(one_bus_run):
    _, _, recorder = one_bus_run
    assert np.max(np.diff(recorder.values)) <= 1e-8


# =============================================================================
# slater_screen
# =============================================================================

def test_slater_ieee14(ieee14):
    report = slater_screen(ieee14[1])
    assert report.satisfied and report.margin > 0


def test_slater_pinned_generator():
    case = make_case(1, gens=[gen(1, p_min=50.0, p_max=50.0)], demand_p=[[50.0]],
                     demand_q=[[5.0]])
    report = slater_screen(assemble_problem(case))
    assert report.feasible and not report.satisfied
    assert report.margin == pytest.approx(0.0, abs=1e-8)


def test_slater_excess_demand():
    case = make_case(1, gens=[gen(1)], demand_p=[[400.0]])
    report = slater_screen(assemble_problem(case))
    assert not report.feasible and not report.satisfied
