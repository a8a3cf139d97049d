"""Projections onto boxes and the nonnegative orthant.

Every set the dispatch dynamics project onto is a box (possibly with
infinite or coincident bounds) or an orthant, so projections reduce to
elementwise clamps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Box", "envelope_gap", "in_box", "project_box", "project_nonneg"]


@dataclass(frozen=True)
class Box:
    """Product of intervals ``[lo_k, hi_k]``.

    Bounds may be infinite; ``lo == hi`` encodes a singleton (absent devices
    are pinned to zero this way).
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape:
            raise ValueError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def shape(self):
        return self.lo.shape

    def midpoint(self):
        """Centre of the box; unbounded coordinates map to 0 (or the finite bound)."""
        lo, hi = self.lo, self.hi
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        mid = np.zeros(lo.shape)
        both = fin_lo & fin_hi
        mid[both] = 0.5 * (lo[both] + hi[both])
        mid[fin_lo & ~fin_hi] = lo[fin_lo & ~fin_hi]
        mid[~fin_lo & fin_hi] = hi[~fin_lo & fin_hi]
        return mid


def project_box(x, box):
    """Euclidean projection of ``x`` onto ``box`` (an elementwise clamp)."""
    x = np.asarray(x, dtype=float)
    if x.shape != box.shape:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, box {box.shape}")
    return np.minimum(np.maximum(x, box.lo), box.hi)


def project_nonneg(x):
    """Projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def in_box(x, box, tol=0.0):
    return bool(np.all(x >= box.lo - tol) and np.all(x <= box.hi + tol))


def envelope_gap(x, y, box):
    """``0.5 (|x - y|^2 - |x - P(x)|^2)`` for ``y`` in the box.

    Differentiable in ``x`` with gradient ``P(x) - y`` and bounded below by
    ``0.5 |P(x) - y|^2``; the x-part of the convergence certificate is built
    from it.
    """
    p = project_box(x, box)
    return 0.5 * (np.sum((x - y) ** 2) - np.sum((x - p) ** 2))
