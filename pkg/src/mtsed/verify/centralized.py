"""Centralised reference solver, equilibrium reconstruction and Slater screen."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..problem import compact_matrices
from .kkt import KktReport, check_kkt
from .qp import InfeasibleError, IterationLimitError, QpResult, solve_qp

__all__ = [
    "InfeasibleError",
    "IterationLimitError",
    "OracleResult",
    "SlaterReport",
    "equilibrium",
    "oracle",
    "slater_screen",
]


@dataclass(frozen=True)
class OracleResult:
    """Optimal primal-dual triple of the stacked problem.

    ``y`` and ``z`` use the same signs as the dynamics' multiplier states,
    so ``(x, y, z)`` can be compared with a converged run directly. The
    triple unpacks as ``x, y, z = oracle(...)``.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    cost: float
    kkt: KktReport
    qp: QpResult

    def __iter__(self):
        return iter((self.x, self.y, self.z))


def oracle(compact, tol=1e-6, eps=1e-10, max_iter=100):
    """Solve the stacked dispatch QP with an interior-point method.

    Parameters
    ----------
    compact : CompactProblem
    tol : float
        KKT tolerance the answer must meet.

    Raises
    ------
    InfeasibleError
        With a certificate if no dispatch satisfies the constraints.
    IterationLimitError
        If the iteration budget runs out, or the answer fails the KKT check.
    """
    r = solve_qp(compact.A, compact.Bvec, compact.C, compact.D, compact.E, compact.F,
                 compact.omega.lo, compact.omega.hi, eps=eps, max_iter=max_iter)
    # interior iterates sit a hair inside the box; snap to it
    x = np.minimum(np.maximum(r.x, compact.omega.lo), compact.omega.hi)
    z = np.maximum(r.z, 0.0)
    report = check_kkt(x, r.y, z, compact, tol=tol)
    if not report.certified:
        raise IterationLimitError(f"oracle answer failed the KKT check (worst {report.worst:.3g})")
    return OracleResult(x=x, y=r.y, z=z, cost=float(compact.cost(x)), kkt=report, qp=r)


def equilibrium(compact, result):
    """Stacked state at which the dynamics are at rest.

    The primal state sits before projection: ``x = x~ - g`` with
    ``g = A x~ + Bvec + C'y + E'z``, so that projecting it onto the boxes
    returns ``x~``. The multiplier states take the optimal duals and the
    phase-lead states are zero.
    """
    x, y, z = result
    g = compact.A @ x + compact.Bvec + compact.C.T @ y + compact.E.T @ z
    x_pre = x - g
    return np.concatenate([x_pre, y, z, np.zeros_like(y)])


@dataclass(frozen=True)
class SlaterReport:
    """Outcome of the margin program.

    ``margin`` is the largest uniform slack (p.u., p.u. h) achievable on
    every device box, ramp and energy limit while meeting the balances,
    capped at 1. ``feasible`` is false when even zero margin is impossible.
    """

    margin: float
    satisfied: bool
    feasible: bool
    message: str = ""


def slater_screen(problem, threshold=1e-8):
    """Check that a dispatch with a positive margin on every limit exists.

    Margins apply to generator boxes and ramps at generator buses, storage
    power boxes and energy limits at storage buses, and every voltage box.
    Coordinates of absent devices are pinned at zero and carry no margin.
    """
    compact = compact_matrices(problem)
    nx = compact.A.shape[0]
    n, tau = problem.n, problem.tau
    N = n * tau
    lo, hi = compact.omega.lo, compact.omega.hi

    rep = lambda mask: np.repeat(np.asarray(mask, dtype=bool), tau)
    # ramp rows of generator buses and energy rows of storage buses
    gen_rows, sto_rows = rep(problem.has_gen), rep(problem.has_storage)
    E_rows = np.flatnonzero(np.concatenate([gen_rows, gen_rows, sto_rows, sto_rows]))
    margin_cols = np.concatenate([
        rep(problem.has_gen), rep(problem.has_gen),
        rep(problem.has_storage), rep(problem.has_storage),
        np.ones(N, dtype=bool), np.zeros(N, dtype=bool),
    ])
    cols = np.flatnonzero(margin_cols)
    k = cols.size
    # variables (x, rho); minimise -rho
    Gi = np.zeros((E_rows.size + 2 * k, nx + 1))
    Gi[:E_rows.size, :nx] = compact.E[E_rows]
    Gi[:E_rows.size, nx] = 1.0
    r0 = E_rows.size
    Gi[r0 + np.arange(k), cols] = 1.0
    Gi[r0 + np.arange(k), nx] = 1.0
    Gi[r0 + k + np.arange(k), cols] = -1.0
    Gi[r0 + k + np.arange(k), nx] = 1.0
    hi_rows = np.concatenate([compact.F[E_rows], hi[cols], -lo[cols]])
    A = np.hstack([compact.C, np.zeros((compact.C.shape[0], 1))])
    c = np.zeros(nx + 1)
    c[nx] = -1.0
    lo_v = np.concatenate([lo, [0.0]])
    hi_v = np.concatenate([hi, [1.0]])
    try:
        r = solve_qp(np.zeros((nx + 1, nx + 1)), c, A, compact.D, Gi, hi_rows, lo_v, hi_v)
    except InfeasibleError as exc:
        return SlaterReport(margin=0.0, satisfied=False, feasible=False, message=str(exc))
    margin = float(max(r.x[nx], 0.0))
    return SlaterReport(margin=margin, satisfied=margin > threshold, feasible=True)
