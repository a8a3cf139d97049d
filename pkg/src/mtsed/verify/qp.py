"""Dense primal-dual interior-point solver for box-constrained convex QPs.

Solves::

    minimise    0.5 x'Px + q'x
    subject to  Ax = b,  Gx <= h,  lo <= x <= hi

with Mehrotra's predictor-corrector method. The multiplier sign convention
matches the dispatch dynamics: stationarity reads
``Px + q + A'y + G'z + z_hi - z_lo = 0`` with ``z, z_lo, z_hi >= 0``.

Fixed coordinates (``lo == hi``) are substituted out and rows of ``G`` that
become identically zero are checked and dropped before iterating. A small
primal-dual regularisation plus iterative refinement handles singular
Hessians and redundant equalities (for example the voltage-angle gauge).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

__all__ = [
    "InfeasibleError",
    "IterationLimitError",
    "QpError",
    "QpResult",
    "solve_qp",
]


class QpError(RuntimeError):
    pass


class InfeasibleError(QpError):
    """No point satisfies the constraints.

    ``certificate`` holds the elastic-program duals ``(y, z)`` and its
    optimal violation, a positive number whenever the constraints are
    inconsistent.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class IterationLimitError(QpError):
    """The iteration budget ran out before the tolerances were met."""


@dataclass(frozen=True)
class QpResult:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    objective: float
    iterations: int
    residuals: dict


def _as2d(M, ncols):
    if M is None:
        return np.zeros((0, ncols))
    return np.atleast_2d(np.asarray(M, dtype=float)).reshape(-1, ncols)


def solve_qp(P, q, A=None, b=None, G=None, h=None, lo=None, hi=None,
             eps=1e-10, max_iter=100, reg=1e-9, check_infeasible=True):
    """Solve a convex QP; see the module docstring for the form.

    Parameters
    ----------
    P : (n, n) array_like, symmetric positive semidefinite
    q : (n,) array_like
    A, b : equality constraints, optional
    G, h : inequality constraints, optional
    lo, hi : (n,) bounds, may be infinite; default unbounded
    eps : float
        Scaled tolerance on primal, dual and complementarity residuals.
    max_iter : int
    reg : float
        Regularisation used when factorising the Newton system.
    check_infeasible : bool
        On failure, solve an elastic feasibility program to tell an
        infeasible problem from one that merely ran out of iterations.

    Raises
    ------
    InfeasibleError, IterationLimitError
    """
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    q = np.asarray(q, dtype=float).reshape(n)
    A = _as2d(A, n)
    b = np.zeros(0) if b is None else np.asarray(b, dtype=float).reshape(-1)
    G = _as2d(G, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float).reshape(-1)
    lo = np.full(n, -np.inf) if lo is None else np.asarray(lo, dtype=float).reshape(n)
    hi = np.full(n, np.inf) if hi is None else np.asarray(hi, dtype=float).reshape(n)
    if A.shape[0] != b.shape[0] or G.shape[0] != h.shape[0]:
        raise ValueError("constraint matrix and right-hand side sizes differ")
    if np.any(lo > hi):
        raise InfeasibleError("a lower bound exceeds its upper bound")

    fixed = lo == hi
    free = ~fixed
    xf = lo[fixed]
    J = np.flatnonzero(free)
    Pj = P[np.ix_(J, J)]
    qj = q[J] + P[np.ix_(J, np.flatnonzero(fixed))] @ xf
    Aj = A[:, J]
    bj = b - A[:, fixed] @ xf
    Gj = G[:, J]
    hj = h - G[:, fixed] @ xf

    zero_rows = ~np.any(Gj != 0, axis=1)
    scale_h = 1.0 + (np.max(np.abs(h)) if h.size else 0.0)
    if np.any(hj[zero_rows] < -1e-9 * scale_h):
        raise InfeasibleError("a constraint on fixed coordinates is violated")
    keep = ~zero_rows
    lo_j, hi_j = lo[J], hi[J]
    has_hi = np.isfinite(hi_j)
    has_lo = np.isfinite(lo_j)
    nj = J.size
    Gfull = np.vstack([Gj[keep], np.eye(nj)[has_hi], -np.eye(nj)[has_lo]])
    hfull = np.concatenate([hj[keep], hi_j[has_hi], -lo_j[has_lo]])

    try:
        xj, y, zfull, iters, res = _mehrotra(Pj, qj, Aj, bj, Gfull, hfull, eps, max_iter, reg)
    except IterationLimitError:
        if check_infeasible:
            _elastic_check(Aj, bj, Gfull, hfull, eps, max_iter, reg)
        raise

    x = np.empty(n)
    x[fixed] = xf
    x[J] = xj
    k = int(keep.sum())
    z = np.zeros(G.shape[0])
    z[np.flatnonzero(keep)] = zfull[:k]
    z_hi_j = np.zeros(nj)
    z_hi_j[has_hi] = zfull[k:k + has_hi.sum()]
    z_lo_j = np.zeros(nj)
    z_lo_j[has_lo] = zfull[k + has_hi.sum():]
    # multipliers of fixed coordinates absorb the full gradient
    grad = P @ x + q + A.T @ y + G.T @ z
    z_lo = np.zeros(n)
    z_hi = np.zeros(n)
    z_lo[J], z_hi[J] = z_lo_j, z_hi_j
    gf = grad[fixed]
    z_lo[fixed] = np.maximum(gf, 0.0)
    z_hi[fixed] = np.maximum(-gf, 0.0)
    return QpResult(x=x, y=y, z=z, z_lo=z_lo, z_hi=z_hi,
                    objective=float(0.5 * x @ P @ x + q @ x),
                    iterations=iters, residuals=res)


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


class _Kkt:
    """Factorised augmented Newton system with iterative refinement.

    ``[[P, A', G'], [A, 0, 0], [G, 0, -D]]`` with ``D = diag(s / z)``; keeping
    the inequality block explicit avoids squaring its conditioning.
    """

    def __init__(self, P, A, G, d, reg):
        n, p, m = P.shape[0], A.shape[0], G.shape[0]
        self.n, self.p = n, p
        self.K = np.block([
            [P, A.T, G.T],
            [A, np.zeros((p, p)), np.zeros((p, m))],
            [G, np.zeros((m, p)), -np.diag(d)],
        ])
        Kreg = self.K.copy()
        idx = np.arange(n + p + m)
        Kreg[idx[:n], idx[:n]] += reg
        Kreg[idx[n:], idx[n:]] -= reg
        self.lu = lu_factor(Kreg, check_finite=False)

    def solve(self, r1, r2, r3, refine=3):
        rhs = np.concatenate([r1, r2, r3])
        sol = lu_solve(self.lu, rhs, check_finite=False)
        for _ in range(refine):
            sol = sol + lu_solve(self.lu, rhs - self.K @ sol, check_finite=False)
        n, p = self.n, self.p
        return sol[:n], sol[n:n + p], sol[n + p:]


def _direction(kkt, rd, rp, ri, s, z, rc):
    """Newton step for the residuals with complementarity target ``rc``."""
    dx, dy, dz = kkt.solve(-rd, -rp, -ri + rc / z)
    ds = -(rc + s * dz) / z
    return dx, dy, dz, ds


def _mehrotra(P, q, A, b, G, h, eps, max_iter, reg):
    m = G.shape[0]
    # initial point: minimise 0.5x'Px + q'x + 0.5|Gx - h|^2 subject to Ax = b
    kkt = _Kkt(P, A, G, np.ones(m), reg)
    x, y, z = kkt.solve(-q, b, h)
    s = -z.copy()
    if m:
        for v in (s, z):
            shift = -np.min(v)
            if shift >= 0.0:
                v += 1.0 + shift
    scale_q = 1.0 + np.max(np.abs(q), initial=0.0)
    scale_b = 1.0 + np.max(np.abs(b), initial=0.0)
    scale_h = 1.0 + np.max(np.abs(h), initial=0.0)

    for it in range(max_iter + 1):
        rd = P @ x + q + A.T @ y + G.T @ z
        rp = A @ x - b
        ri = G @ x + s - h
        mu = float(s @ z / m) if m else 0.0
        res = {
            "dual": float(np.max(np.abs(rd), initial=0.0) / scale_q),
            "eq": float(np.max(np.abs(rp), initial=0.0) / scale_b),
            "ineq": float(np.max(np.abs(ri), initial=0.0) / scale_h),
            "gap": mu,
        }
        if max(res.values()) <= eps:
            return x, y, z, it, res
        if it == max_iter or not np.all(np.isfinite(x)):
            break
        kkt = _Kkt(P, A, G, s / z, reg)
        dx, dy, dz, ds = _direction(kkt, rd, rp, ri, s, z, s * z)
        a_aff = min(_max_step(s, ds), _max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz) / m) if m else 0.0
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, dz, ds = _direction(kkt, rd, rp, ri, s, z, s * z + ds * dz - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(z, dz)))
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
    raise IterationLimitError(f"interior-point method stopped after {max_iter} iterations "
                              f"(residuals {res})")


def _elastic_check(A, b, G, h, eps, max_iter, reg):
    """Raise InfeasibleError if the smallest constraint violation is positive.

    Minimises ``sum(u + w + t)`` subject to ``Ax + u - w = b``,
    ``Gx - t <= h`` and ``u, w, t >= 0``, a program that is always
    feasible. Its optimal value is zero exactly when the original
    constraints are consistent.
    """
    n, p, m = A.shape[1], A.shape[0], G.shape[0]
    N = n + 2 * p + m
    c = np.concatenate([np.zeros(n), np.ones(2 * p + m)])
    Ael = np.hstack([A, np.eye(p), -np.eye(p), np.zeros((p, m))])
    Gel = np.hstack([G, np.zeros((m, 2 * p)), -np.eye(m)])
    lo = np.concatenate([np.full(n, -np.inf), np.zeros(2 * p + m)])
    # the elastic program is a pure LP; a tiny proximal term keeps the
    # Newton systems well posed without changing the optimal value materially
    Pel = np.zeros((N, N))
    Pel[np.arange(n), np.arange(n)] = 1e-10
    try:
        r = solve_qp(Pel, c, Ael, b, Gel, h, lo=lo, eps=eps, max_iter=max_iter,
                     reg=reg, check_infeasible=False)
    except IterationLimitError:
        return
    violation = float(c @ r.x)
    scale = 1.0 + max(np.max(np.abs(b), initial=0.0), np.max(np.abs(h), initial=0.0))
    if violation > 1e-7 * scale:
        raise InfeasibleError(
            f"constraints are inconsistent: minimum total violation {violation:.6g}",
            certificate={"y": r.y, "z": r.z, "violation": violation},
        )
