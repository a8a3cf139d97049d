"""Right-hand side of the projected primal-dual dispatch dynamics.

Each bus ``i`` owns fourteen length-``tau`` state vectors. The per-bus rule
(:func:`projected_view` + :func:`agent_rhs`) reads only its own state, its
own parameters and one :class:`NeighborMessage` from each adjacent bus.
:class:`BatchedDynamics` evaluates the same rule for all buses at once, and
:func:`compact_rhs` is the stacked matrix form used to cross-check both.

State layout: the multi-agent state is an array ``S`` of shape
``(14, n, tau)`` whose first axis follows :data:`FIELDS`, so ``S.ravel()``
is the stacked vector ``col(x, y, z, rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

__all__ = [
    "FIELDS",
    "MESSAGE_FIELDS",
    "AgentDynamics",
    "AgentState",
    "BatchedDynamics",
    "LocalProblem",
    "MessageError",
    "NeighborMessage",
    "ProjectedView",
    "agent_rhs",
    "compact_rhs",
    "local_problem",
    "projected_view",
    "publish",
    "split_zeta",
]

FIELDS = (
    "p_g", "q_g", "p_c", "p_d", "v", "theta",
    "lambda_p", "lambda_q",
    "mu_M", "mu_m", "gamma_M", "gamma_m",
    "rho_p", "rho_q",
)
_IDX = {name: k for k, name in enumerate(FIELDS)}
PG, QG, PC, PD, V, TH, LP, LQ, MUM, MUm, GAM, GAm, RP, RQ = range(14)

MESSAGE_FIELDS = ("v", "theta", "lambda_p", "lambda_q", "rho_p", "rho_q")
_MSG_ROWS = [_IDX[f] for f in MESSAGE_FIELDS]


class MessageError(ValueError):
    """Neighbor messages do not match the communication graph."""


class _Fields:
    __slots__ = ("data",)
    _names: ClassVar[dict] = {}

    def __getattr__(self, name):
        try:
            return self.data[self._names[name]]
        except KeyError:
            raise AttributeError(name) from None


class AgentState(_Fields):
    """The fourteen state vectors of one bus, backed by a ``(14, tau)`` array."""

    _names: ClassVar[dict] = _IDX

    def __init__(self, data):
        data = np.asarray(data, dtype=float)
        if data.ndim != 2 or data.shape[0] != len(FIELDS):
            raise ValueError(f"agent state must have shape (14, tau), got {data.shape}")
        self.data = data

    @classmethod
    def from_fields(cls, **vectors):
        missing = set(FIELDS) - set(vectors)
        if missing:
            raise ValueError(f"missing fields {sorted(missing)}")
        return cls(np.stack([np.asarray(vectors[f], dtype=float) for f in FIELDS]))


class NeighborMessage(_Fields):
    """What bus ``sender`` publishes each round: raw ``v``, ``theta``, ``lambda`` and ``rho``."""

    __slots__ = ("sender",)
    _names: ClassVar[dict] = {name: k for k, name in enumerate(MESSAGE_FIELDS)}

    def __init__(self, sender, data):
        self.sender = sender
        self.data = np.asarray(data, dtype=float)


def publish(sender, state):
    """Message carrying the neighbor-visible part of ``state``."""
    return NeighborMessage(sender, state.data[_MSG_ROWS])


@dataclass(frozen=True)
class ProjectedView:
    pt_g: np.ndarray
    qt_g: np.ndarray
    pt_c: np.ndarray
    pt_d: np.ndarray
    vt: np.ndarray
    lt_p: np.ndarray
    lt_q: np.ndarray
    mt_M: np.ndarray
    mt_m: np.ndarray
    gt_M: np.ndarray
    gt_m: np.ndarray


@dataclass(frozen=True)
class LocalProblem:
    """Everything bus ``index`` knows: its own data plus neighbor line coefficients.

    ``nbr_v_lo``/``nbr_v_hi`` are the neighbors' voltage boxes, exchanged
    once before the run so that raw neighbor voltages can be projected on
    receipt.
    """

    index: int
    bus_id: int
    lo: np.ndarray  # (5, tau) bounds for p_g, q_g, p_c, p_d, v
    hi: np.ndarray
    a_g: float
    b_g: float
    a_s: float
    eta_c: float
    eta_d_inv: float
    p0: float
    r_up: float
    r_down: float
    c0: float
    c_min: float
    c_max: float
    T: float
    d_p: np.ndarray
    d_q: np.ndarray
    Hg: np.ndarray
    Hs: np.ndarray
    hg0: np.ndarray
    g_self: float
    b_self: float
    bp_self: float
    nbrs: tuple
    g_nbr: np.ndarray
    b_nbr: np.ndarray
    bp_nbr: np.ndarray
    nbr_v_lo: np.ndarray
    nbr_v_hi: np.ndarray


def local_problem(problem, i):
    """Local view of bus position ``i``; neighbors are positions sharing a branch."""
    case = problem.case
    bus_id = case.bus_ids[i]
    nbrs = tuple(sorted(case.index(j) for j in _adjacent(case, bus_id)))
    lo, hi = problem.box_bounds()
    idx = list(nbrs)
    return LocalProblem(
        index=i, bus_id=bus_id, lo=lo[:, i, :].copy(), hi=hi[:, i, :].copy(),
        a_g=problem.a_g[i], b_g=problem.b_g[i], a_s=problem.a_s[i],
        eta_c=problem.eta_c[i], eta_d_inv=problem.eta_d_inv[i],
        p0=problem.p0[i], r_up=problem.r_up[i], r_down=problem.r_down[i],
        c0=problem.c0[i], c_min=problem.c_min[i], c_max=problem.c_max[i],
        T=problem.T, d_p=problem.d_p[i].copy(), d_q=problem.d_q[i].copy(),
        Hg=problem.hm.Hg, Hs=problem.hm.Hs, hg0=problem.hm.hg0,
        g_self=problem.G[i, i], b_self=problem.B[i, i], bp_self=problem.Bp[i, i],
        nbrs=nbrs, g_nbr=problem.G[i, idx], b_nbr=problem.B[i, idx],
        bp_nbr=problem.Bp[i, idx],
        nbr_v_lo=lo[4, idx, :].copy(), nbr_v_hi=hi[4, idx, :].copy(),
    )


def _adjacent(case, bus_id):
    out = set()
    for br in case.branches:
        if br.from_bus == bus_id:
            out.add(br.to_bus)
        elif br.to_bus == bus_id:
            out.add(br.from_bus)
    return out


def _stack_messages(local, msgs):
    if isinstance(msgs, dict):
        got = msgs
    else:
        got = {m.sender: m for m in msgs}
    if set(got) != set(local.nbrs):
        missing = sorted(set(local.nbrs) - set(got))
        extra = sorted(set(got) - set(local.nbrs))
        raise MessageError(
            f"bus {local.bus_id}: missing messages from {missing}, unexpected from {extra}"
        )
    tau = local.d_p.shape[0]
    if not local.nbrs:
        return np.zeros((len(MESSAGE_FIELDS), 0, tau))
    data = np.stack([got[j].data for j in local.nbrs], axis=1)
    if data.shape[2] != tau:
        raise ValueError(f"message vectors have length {data.shape[2]}, expected {tau}")
    return data


def projected_view(state, local, msgs):
    """Box projections and the auxiliary multiplier updates of one bus."""
    s = state.data
    if s.shape[1] != local.d_p.shape[0]:
        raise ValueError(f"state vectors have length {s.shape[1]}, expected {local.d_p.shape[0]}")
    m = _stack_messages(local, msgs)
    return _view(s, local, m)


def _view(s, local, m):
    pt = np.minimum(np.maximum(s[:5], local.lo), local.hi)
    pt_g, qt_g, pt_c, pt_d, vt = pt
    theta = s[TH]
    vt_n = np.minimum(np.maximum(m[0], local.nbr_v_lo), local.nbr_v_hi)
    th_n = m[1]
    net_p = local.g_self * vt + local.g_nbr @ vt_n - (local.bp_self * theta + local.bp_nbr @ th_n)
    net_q = local.b_self * vt + local.b_nbr @ vt_n + local.g_self * theta + local.g_nbr @ th_n
    lt_p = pt_g - local.d_p - pt_c + pt_d - net_p
    lt_q = qt_g - local.d_q + net_q
    T = local.T
    ramp = pt_g - local.Hg.T @ pt_g - local.p0 * local.hg0
    mt_M = np.maximum(s[MUM] + ramp - local.r_up * T, 0.0)
    mt_m = np.maximum(s[MUm] + local.r_down * T - ramp, 0.0)
    stored = T * (local.eta_c * (local.Hs.T @ pt_c) - local.eta_d_inv * (local.Hs.T @ pt_d))
    gt_M = np.maximum(s[GAM] + (local.c0 - local.c_max) + stored, 0.0)
    gt_m = np.maximum(s[GAm] + (local.c_min - local.c0) - stored, 0.0)
    return ProjectedView(pt_g, qt_g, pt_c, pt_d, vt, lt_p, lt_q, mt_M, mt_m, gt_M, gt_m)


def agent_rhs(state, view, local, msgs):
    """Time derivative of one bus's fourteen state vectors, shape ``(14, tau)``."""
    s = state.data
    m = _stack_messages(local, msgs)
    return _rhs(s, view, local, m)


def _rhs(s, w, local, m):
    T = local.T
    tau = s.shape[1]
    lam_p = s[LP] + s[RP]
    lam_q = s[LQ] + s[RQ]
    nbr_p = m[2] + m[4]
    nbr_q = m[3] + m[5]
    out = np.empty_like(s)
    ramp_dual = w.mt_M - w.mt_m
    energy_dual = local.Hs @ (w.gt_M - w.gt_m)
    out[PG] = (w.pt_g - s[PG] - local.a_g * w.pt_g - local.b_g - lam_p
               + (local.Hg - np.eye(tau)) @ ramp_dual)
    out[QG] = w.qt_g - s[QG] - lam_q
    out[PC] = w.pt_c - s[PC] - local.a_s + lam_p - local.eta_c * T * energy_dual
    out[PD] = w.pt_d - s[PD] - local.a_s - lam_p + local.eta_d_inv * T * energy_dual
    out[V] = (w.vt - s[V] + local.g_self * lam_p + local.g_nbr @ nbr_p
              - (local.b_self * lam_q + local.b_nbr @ nbr_q))
    out[TH] = -(local.bp_self * lam_p + local.bp_nbr @ nbr_p
                + local.g_self * lam_q + local.g_nbr @ nbr_q)
    out[LP] = w.lt_p
    out[LQ] = w.lt_q
    out[MUM] = w.mt_M - s[MUM]
    out[MUm] = w.mt_m - s[MUm]
    out[GAM] = w.gt_M - s[GAM]
    out[GAm] = w.gt_m - s[GAm]
    out[RP] = -s[RP] + w.lt_p
    out[RQ] = -s[RQ] + w.lt_q
    return out


class AgentDynamics:
    """Message-passing evaluation: every bus runs :func:`agent_rhs` on its own.

    Parameters
    ----------
    problem : MtsedProblem
    executor : concurrent.futures.Executor, optional
        When given, agents are evaluated concurrently. Results are
        independent of scheduling since each agent reads only the published
        snapshot.
    """

    def __init__(self, problem, executor=None):
        self.problem = problem
        self.locals = [local_problem(problem, i) for i in range(problem.n)]
        self.executor = executor

    def messages(self, S):
        return [NeighborMessage(j, S[_MSG_ROWS, j, :]) for j in range(S.shape[1])]

    def _one(self, i, S, outbox):
        local = self.locals[i]
        inbox = {j: outbox[j] for j in local.nbrs}
        m = _stack_messages(local, inbox)
        s = S[:, i, :]
        return _rhs(s, _view(s, local, m), local, m)

    def __call__(self, S):
        outbox = self.messages(S)  # published snapshot, read-only for this round
        n = S.shape[1]
        if self.executor is None:
            parts = [self._one(i, S, outbox) for i in range(n)]
        else:
            parts = list(self.executor.map(lambda i: self._one(i, S, outbox), range(n)))
        return np.stack(parts, axis=1)


class BatchedDynamics:
    """The per-bus rule evaluated for all buses at once.

    Network sums use the rows of ``G``, ``B`` and ``B'``, which are zero
    outside each bus's neighborhood, so bus ``i`` still only combines its
    own data with values published by adjacent buses. The arithmetic is
    grouped into a few stacked operations for speed.
    """

    def __init__(self, problem):
        self.problem = problem
        n, tau = problem.n, problem.tau
        self.n, self.tau = n, tau
        lo, hi = problem.box_bounds()
        inf = np.full((1, n, tau), np.inf)
        self.lo6 = np.concatenate([lo, -inf])
        self.hi6 = np.concatenate([hi, inf])
        G, B, Bp = problem.G, problem.B, problem.Bp
        # [-G v + B' theta ; B v + G theta] for the balance residuals
        self.M_bal = np.block([[-G, Bp], [B, G]])
        # [G (lp) - B (lq) ; -(B' (lp) + G (lq))] for the v and theta rates
        self.M_rate = np.block([[G, -B], [-Bp, -G]])
        col = lambda a: np.asarray(a, dtype=float)[:, None]
        self.a_g = col(problem.a_g)
        self.b_g, self.a_s = col(problem.b_g), col(problem.a_s)
        T = problem.T
        self.eta_c, self.eta_d_inv = col(problem.eta_c), col(problem.eta_d_inv)
        self.eta_cT, self.eta_dT = T * self.eta_c, T * self.eta_d_inv
        hm = problem.hm
        self.d = np.stack([problem.d_p, problem.d_q])
        p0h = col(problem.p0) * hm.hg0[None, :]
        ones = np.ones((1, tau))
        self.z_const = np.stack([
            -p0h - col(problem.r_up) * T * ones,
            p0h + col(problem.r_down) * T * ones,
            col(problem.c0 - problem.c_max) * ones,
            col(problem.c_min - problem.c0) * ones,
        ])
        # row-vector forms: (x @ M)[i] == M.T @ x[i]
        self.R_ramp = np.eye(tau) - hm.Hg  # x @ R == x - Hg' x
        self.R_store = T * hm.Hs  # x @ R == T Hs' x
        self.R_ramp_dual = (hm.Hg - np.eye(tau)).T
        self.R_energy_dual = hm.Hs.T

    def _parts(self, S):
        n, tau = self.n, self.tau
        X = np.minimum(np.maximum(S[:6], self.lo6), self.hi6)
        net = (self.M_bal @ X[4:6].reshape(2 * n, tau)).reshape(2, n, tau)
        lt = X[0:2] - self.d + net
        lt[0] += X[3] - X[2]
        ramp = X[0] @ self.R_ramp
        stored = (self.eta_c * X[2] - self.eta_d_inv * X[3]) @ self.R_store
        Zp = np.empty((4, n, tau))
        Zp[0] = ramp
        Zp[1] = -ramp
        Zp[2] = stored
        Zp[3] = -stored
        Zp += S[8:12]
        Zp += self.z_const
        np.maximum(Zp, 0.0, out=Zp)
        return X, lt, Zp

    def view(self, S):
        X, lt, Zp = self._parts(S)
        return ProjectedView(X[0], X[1], X[2], X[3], X[4], lt[0], lt[1], Zp[0], Zp[1], Zp[2], Zp[3])

    def __call__(self, S):
        n, tau = self.n, self.tau
        X, lt, Zp = self._parts(S)
        out = np.empty_like(S)
        lam = S[6:8] + S[12:14]
        out[:5] = X[:5] - S[:5]
        out[4:6] = (self.M_rate @ lam.reshape(2 * n, tau)).reshape(2, n, tau)
        out[4] += X[4] - S[4]
        ramp_dual = (Zp[0] - Zp[1]) @ self.R_ramp_dual
        energy_dual = (Zp[2] - Zp[3]) @ self.R_energy_dual
        out[PG] -= self.a_g * X[0] + self.b_g + lam[0] - ramp_dual
        out[QG] -= lam[1]
        out[PC] += lam[0] - self.a_s - self.eta_cT * energy_dual
        out[PD] += self.eta_dT * energy_dual - self.a_s - lam[0]
        out[6:8] = lt
        out[8:12] = Zp - S[8:12]
        out[12:14] = lt - S[12:14]
        return out

    def rhs(self, S, view=None):
        return self(S)


def split_zeta(zeta, n, tau):
    """Split a stacked state into ``(x, y, z, rho)``."""
    N = n * tau
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (14 * N,):
        raise ValueError(f"expected a state of length {14 * N}, got {zeta.shape}")
    return zeta[:6 * N], zeta[6 * N:8 * N], zeta[8 * N:12 * N], zeta[12 * N:]


def compact_rhs(zeta, compact):
    """Stacked dynamics for ``zeta = col(x, y, z, rho)``.

    ``x' = -x + xt - A xt - Bvec - C'(y + rho) - E' z+``, ``y' = C xt - D``,
    ``z' = z+ - z``, ``rho' = -rho + C xt - D`` with ``xt = P_omega(x)`` and
    ``z+ = max(E xt - F + z, 0)``.
    """
    x, y, z, rho = split_zeta(zeta, compact.n, compact.tau)
    xt = np.minimum(np.maximum(x, compact.omega.lo), compact.omega.hi)
    zp = np.maximum(compact.E @ xt - compact.F + z, 0.0)
    res = compact.C @ xt - compact.D
    dx = -x + xt - compact.A @ xt - compact.Bvec - compact.C.T @ (y + rho) - compact.E.T @ zp
    return np.concatenate([dx, res, zp - z, -rho + res])
