"""Energy function certifying convergence of the dispatch dynamics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..dynamics import split_zeta

__all__ = ["LyapunovValue", "lyapunov"]


@dataclass(frozen=True)
class LyapunovValue:
    """``value = W + 0.5 (|y - y*|^2 + |z - z*|^2 + |rho - rho*|^2)``.

    ``W = 0.5 |x - x~*|^2 - 0.5 |x - x~|^2`` with ``x~ = P(x)`` and
    ``x~* = P(x*)``. ``lower`` and ``upper`` are ``0.5 |x~ - x~*|^2`` and
    ``0.5 |x - x~*|^2``, which bracket ``W``.
    """

    value: float
    W: float
    lower: float
    upper: float

    @property
    def sandwich_ok(self):
        slack = 1e-12 * max(1.0, self.upper)
        return self.lower - slack <= self.W <= self.upper + slack

    def __float__(self):
        return self.value


def lyapunov(zeta, zeta_star, compact):
    """Evaluate the energy function at ``zeta`` relative to ``zeta_star``."""
    n, tau = compact.n, compact.tau
    x, y, z, rho = split_zeta(zeta, n, tau)
    xs, ys, zs, rhos = split_zeta(zeta_star, n, tau)
    lo, hi = compact.omega.lo, compact.omega.hi
    xt = np.minimum(np.maximum(x, lo), hi)
    xt_star = np.minimum(np.maximum(xs, lo), hi)
    upper = 0.5 * float(np.sum((x - xt_star) ** 2))
    W = upper - 0.5 * float(np.sum((x - xt) ** 2))
    lower = 0.5 * float(np.sum((xt - xt_star) ** 2))
    rest = 0.5 * float(np.sum((y - ys) ** 2) + np.sum((z - zs) ** 2) + np.sum((rho - rhos) ** 2))
    return LyapunovValue(value=W + rest, W=W, lower=lower, upper=upper)
