"""Brute-force QP solution by enumerating active sets.

Every inequality is grouped with its mirror image (``a'x <= c1`` and
``-a'x <= c2``) where one exists, so a two-sided limit has three states:
free, upper bound active, lower bound active. One-sided rows have two.
Each pattern fixes an equality-constrained QP whose KKT system is solved
directly; the pattern is valid when its solution is primal feasible with
nonnegative multipliers, and the cheapest valid pattern wins.

The cost grows as ``3^m``, so this is only for tiny instances. It shares
no code with the interior-point solver and serves to cross-check it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

__all__ = ["EnumerationResult", "count_patterns", "enumerate_active_sets", "enumerate_compact"]


@dataclass(frozen=True)
class EnumerationResult:
    x: np.ndarray
    objective: float
    patterns: int
    valid: int


def _constraint_pairs(G, h, lo, hi, free):
    """List of ``(a, c_upper, c_lower_or_None)`` over the free coordinates."""
    pairs = []
    rows = [(G[i, free], h[i]) for i in range(G.shape[0]) if np.any(G[i, free] != 0)]
    used = [False] * len(rows)
    for i, (a, c) in enumerate(rows):
        if used[i]:
            continue
        used[i] = True
        mate = None
        for j in range(i + 1, len(rows)):
            if not used[j] and np.array_equal(rows[j][0], -a):
                mate = j
                break
        if mate is None:
            pairs.append((a, c, None))
        else:
            used[mate] = True
            pairs.append((a, c, rows[mate][1]))
    nf = int(free.sum())
    for k, (l, u) in enumerate(zip(lo[free], hi[free])):
        e = np.zeros(nf)
        e[k] = 1.0
        if np.isfinite(u) or np.isfinite(l):
            if np.isfinite(u) and np.isfinite(l):
                pairs.append((e, u, -l))
            elif np.isfinite(u):
                pairs.append((e, u, None))
            else:
                pairs.append((-e, -l, None))
    return pairs


def count_patterns(G, h, lo, hi):
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    free = lo != hi
    pairs = _constraint_pairs(np.asarray(G, dtype=float), np.asarray(h, dtype=float), lo, hi, free)
    return int(np.prod([2 if c2 is None else 3 for _, _, c2 in pairs]))


def enumerate_active_sets(P, q, A, b, G, h, lo, hi, feas_tol=1e-9, max_patterns=2_000_000,
                          chunk=4096):
    """Minimise ``0.5x'Px + q'x`` s.t. ``Ax = b``, ``Gx <= h``, ``lo <= x <= hi``.

    Raises
    ------
    ValueError
        If the number of patterns exceeds ``max_patterns`` or no pattern is
        valid.
    """
    P = np.asarray(P, dtype=float)
    q = np.asarray(q, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, P.shape[0])
    b = np.asarray(b, dtype=float)
    G = np.asarray(G, dtype=float).reshape(-1, P.shape[0])
    h = np.asarray(h, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    fixed = lo == hi
    free = ~fixed
    xf = lo[fixed]
    Pf = P[np.ix_(free, free)]
    qf = q[free] + P[np.ix_(free, fixed)] @ xf
    Af = A[:, free]
    bf = b - A[:, fixed] @ xf
    Gfix = G[:, fixed] @ xf
    hf = h - Gfix
    zero = ~np.any(G[:, free] != 0, axis=1)
    if np.any(hf[zero] < -feas_tol):
        raise ValueError("infeasible: a constraint on fixed coordinates is violated")
    pairs = _constraint_pairs(G, hf, lo, hi, free)
    n, p, m = int(free.sum()), Af.shape[0], len(pairs)
    states = [2 if c2 is None else 3 for _, _, c2 in pairs]
    total = int(np.prod(states))
    if total > max_patterns:
        raise ValueError(f"{total} active-set patterns exceed the limit {max_patterns}")

    a_mat = np.array([a for a, _, _ in pairs]).reshape(m, n)
    c_up = np.array([c for _, c, _ in pairs], dtype=float)
    c_dn = np.array([np.nan if c2 is None else c2 for _, _, c2 in pairs], dtype=float)
    # all inequality rows for the feasibility test
    rows = [a_mat, -a_mat[~np.isnan(c_dn)]]
    G_all = np.vstack(rows)
    h_all = np.concatenate([c_up, c_dn[~np.isnan(c_dn)]])
    scale = 1.0 + max(np.max(np.abs(bf), initial=0.0), np.max(np.abs(h_all), initial=0.0))

    dim = n + p + m
    base = np.zeros((dim, dim))
    base[:n, :n] = Pf
    base[:n, n:n + p] = Af.T
    base[n:n + p, :n] = Af
    rhs0 = np.concatenate([-qf, bf, np.zeros(m)])

    best_obj, best_x, valid = np.inf, None, 0
    patterns = itertools.product(*[range(s) for s in states])
    while True:
        batch = np.array(list(itertools.islice(patterns, chunk)), dtype=int).reshape(-1, m)
        if batch.size == 0 and m > 0:
            break
        nb = batch.shape[0] if m > 0 else 1
        K = np.repeat(base[None], nb, axis=0)
        rhs = np.repeat(rhs0[None], nb, axis=0)
        sign = np.where(batch == 2, -1.0, 1.0)  # state 2 activates the mirror row
        active = batch > 0
        for k in range(m):
            col = n + p + k
            act = active[:, k]
            sa = sign[act, k][:, None] * a_mat[k][None, :]
            K[act, col, :n] = sa
            K[act, :n, col] = sa
            rhs[act, col] = np.where(batch[act, k] == 2, c_dn[k], c_up[k])
            K[~act, col, col] = 1.0
        sol = np.einsum("bij,bj->bi", np.linalg.pinv(K), rhs)
        consistent = np.max(np.abs(np.einsum("bij,bj->bi", K, sol) - rhs), axis=1) <= feas_tol * scale
        x = sol[:, :n]
        mult = sol[:, n + p:]
        prim = np.max(np.abs(x @ Af.T - bf), axis=1, initial=0.0) <= feas_tol * scale
        ineq = np.max(x @ G_all.T - h_all, axis=1, initial=-np.inf) <= feas_tol * scale
        dual = np.min(np.where(active, mult, 0.0), axis=1, initial=0.0) >= -feas_tol * scale
        ok = consistent & prim & ineq & dual
        if np.any(ok):
            valid += int(ok.sum())
            xs = x[ok]
            obj = 0.5 * np.einsum("bi,ij,bj->b", xs, Pf, xs) + xs @ qf
            j = int(np.argmin(obj))
            if obj[j] < best_obj:
                best_obj, best_x = float(obj[j]), xs[j]
        if m == 0:
            break
    if best_x is None:
        raise ValueError("no active-set pattern yields a KKT point")
    x = np.empty(P.shape[0])
    x[fixed] = xf
    x[free] = best_x
    return EnumerationResult(x=x, objective=float(0.5 * x @ P @ x + q @ x),
                             patterns=total, valid=valid)


def enumerate_compact(compact, **kwargs):
    """:func:`enumerate_active_sets` applied to a stacked dispatch problem."""
    return enumerate_active_sets(compact.A, compact.Bvec, compact.C, compact.D, compact.E,
                                 compact.F, compact.omega.lo, compact.omega.hi, **kwargs)
