"""Feasibility and optimality certificates for dispatch solutions."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..problem import PRIMAL_FIELDS, DispatchSolution

__all__ = ["FeasibilityReport", "KktReport", "check_feasibility", "check_kkt"]


@dataclass(frozen=True)
class KktReport:
    """Raw and scaled optimality residuals of a primal-dual point.

    Raw fields are in internal units (p.u., p.u. h, scaled cost). Scaled
    residuals divide by ``1 + |D|``, ``1 + |F|`` and ``1 + |g|`` (max-norms)
    for the equality, inequality/complementarity and stationarity checks.
    ``certified`` is true when every scaled residual and the raw box
    violation and dual negativity are at most ``tol``.
    """

    eq_residual: float
    ineq_violation: float
    box_violation: float
    dual_negativity: float
    complementarity: float
    stationarity: float
    simultaneous_charge_discharge: float
    scaled_eq: float
    scaled_ineq: float
    scaled_complementarity: float
    scaled_stationarity: float
    tol: float
    certified: bool

    @property
    def primal_feasible(self):
        return max(self.scaled_eq, self.scaled_ineq, self.box_violation) <= self.tol

    @property
    def worst(self):
        return max(self.scaled_eq, self.scaled_ineq, self.box_violation,
                   self.dual_negativity, self.scaled_complementarity, self.scaled_stationarity)

    def as_dict(self):
        return asdict(self)


def _inf(v):
    return float(np.max(np.abs(v), initial=0.0))


def check_kkt(x, y, z, compact, tol=1e-4):
    """Residuals of the optimality conditions at ``(x, y, z)``.

    Stationarity is tested in projected form, ``P_omega(x - g) = x`` with
    ``g = A x + Bvec + C'y + E'z``, which covers box multipliers implicitly.

    Parameters
    ----------
    x : (6 n tau,) array
    y : (2 n tau,) array
    z : (4 n tau,) array
    compact : CompactProblem
    tol : float
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    for name, v, m in (("x", x, compact.A.shape[0]), ("y", y, compact.C.shape[0]),
                       ("z", z, compact.E.shape[0])):
        if v.shape != (m,):
            raise ValueError(f"{name} has shape {v.shape}, expected ({m},)")
    lo, hi = compact.omega.lo, compact.omega.hi
    eq = compact.C @ x - compact.D
    slack = compact.E @ x - compact.F
    g = compact.A @ x + compact.Bvec + compact.C.T @ y + compact.E.T @ z
    proj = np.minimum(np.maximum(x - g, lo), hi)
    N = compact.n * compact.tau
    pc = x[2 * N:3 * N]
    pd = x[3 * N:4 * N]

    eq_res = _inf(eq)
    ineq = float(np.max(np.maximum(slack, 0.0), initial=0.0))
    box = float(max(np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0), 0.0))
    neg = float(np.max(np.maximum(-z, 0.0), initial=0.0))
    comp = _inf(z * slack)
    stat = _inf(proj - x)
    sc = float(np.max(np.maximum(pc, 0.0) * np.maximum(pd, 0.0), initial=0.0))
    s_eq = eq_res / (1.0 + _inf(compact.D))
    s_ineq = ineq / (1.0 + _inf(compact.F))
    s_comp = comp / (1.0 + _inf(compact.F))
    s_stat = stat / (1.0 + _inf(g))
    certified = max(s_eq, s_ineq, box, neg, s_comp, s_stat) <= tol
    return KktReport(
        eq_residual=eq_res, ineq_violation=ineq, box_violation=box, dual_negativity=neg,
        complementarity=comp, stationarity=stat, simultaneous_charge_discharge=sc,
        scaled_eq=s_eq, scaled_ineq=s_ineq, scaled_complementarity=s_comp,
        scaled_stationarity=s_stat, tol=float(tol), certified=bool(certified),
    )


@dataclass(frozen=True)
class FeasibilityReport:
    """Worst violation of each constraint family in physical units.

    Powers in MW / MVAr, ramps in MW per slot, energies in MWh, voltages in
    p.u. ``pu`` gives the same numbers on the per-unit base.
    """

    p_balance: float
    q_balance: float
    p_g_box: float
    q_g_box: float
    p_c_box: float
    p_d_box: float
    v_box: float
    ramp: float
    energy: float
    base_mva: float
    tol: float = 1e-6

    FAMILIES = ("p_balance", "q_balance", "p_g_box", "q_g_box", "p_c_box", "p_d_box",
                "v_box", "ramp", "energy")

    def pu(self):
        out = {f: getattr(self, f) / self.base_mva for f in self.FAMILIES}
        out["v_box"] = self.v_box
        return out

    @property
    def worst_pu(self):
        return max(self.pu().values())

    @property
    def feasible(self):
        """Every violation is at most ``tol`` on the per-unit base."""
        return self.worst_pu <= self.tol

    def as_dict(self):
        return {f: getattr(self, f) for f in self.FAMILIES}


def _over(x, lo, hi):
    return float(max(np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0), 0.0))


def check_feasibility(solution, problem, tol=1e-6):
    """Worst violation of every constraint family for a p.u. solution.

    Balances use the linearised flow model; ramps compare consecutive slot
    outputs (starting from ``p0``) against the ramp bounds times the slot
    length; energies are the telescoped storage levels after each slot.
    ``tol`` (per unit) sets :attr:`FeasibilityReport.feasible`.
    """
    if not isinstance(solution, DispatchSolution):
        solution = DispatchSolution.from_vector(solution, problem.n, problem.tau)
    shape = (problem.n, problem.tau)
    for f in PRIMAL_FIELDS:
        if getattr(solution, f).shape != shape:
            raise ValueError(f"{f} has shape {getattr(solution, f).shape}, expected {shape}")
    base = problem.base_mva
    s = solution
    G, B, Bp = problem.G, problem.B, problem.Bp
    bal_p = s.p_g - problem.d_p - s.p_c + s.p_d - (G @ s.v - Bp @ s.theta)
    bal_q = s.q_g - problem.d_q + (B @ s.v + G @ s.theta)
    boxes = problem.boxes
    T = problem.T
    steps = np.diff(np.concatenate([problem.p0[:, None], s.p_g], axis=1), axis=1)
    ramp_lo = (problem.r_down * T)[:, None]
    ramp_hi = (problem.r_up * T)[:, None]
    levels = problem.energy_levels(s)[:, 1:]
    return FeasibilityReport(
        p_balance=base * _inf(bal_p),
        q_balance=base * _inf(bal_q),
        p_g_box=base * _over(s.p_g, boxes["p_g"].lo, boxes["p_g"].hi),
        q_g_box=base * _over(s.q_g, boxes["q_g"].lo, boxes["q_g"].hi),
        p_c_box=base * _over(s.p_c, boxes["p_c"].lo, boxes["p_c"].hi),
        p_d_box=base * _over(s.p_d, boxes["p_d"].lo, boxes["p_d"].hi),
        v_box=_over(s.v, boxes["v"].lo, boxes["v"].hi),
        ramp=base * _over(steps, ramp_lo, ramp_hi),
        energy=base * _over(levels, problem.c_min[:, None], problem.c_max[:, None]),
        base_mva=base,
        tol=float(tol),
    )
