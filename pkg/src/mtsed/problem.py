"""Multi-time-slot economic dispatch problem and its stacked matrix form.

Internally powers are per-unit on the case base, energies are p.u.-hours,
time is in hours and costs are measured in units of ``cost_scale`` $/h.
Scaling the objective by a positive constant leaves the optimiser unchanged
but keeps multipliers O(1), which the dynamics need to converge in
reasonable algorithm time.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .network import (
    DlpfMatrices,
    GeneratorParams,
    HorizonConfig,
    NetworkCase,
    StorageParams,
    build_dlpf,
)
from .projection import Box

__all__ = [
    "DEFAULT_COST_SCALE",
    "PRIMAL_FIELDS",
    "CompactProblem",
    "DispatchSolution",
    "GeneratorParams",
    "HorizonConfig",
    "HorizonMatrices",
    "MtsedProblem",
    "StorageParams",
    "assemble_problem",
    "compact_matrices",
    "gen_cost",
    "horizon_matrices",
    "storage_cost",
    "total_cost",
]

DEFAULT_COST_SCALE = 2000.0  # $/h per internal cost unit

PRIMAL_FIELDS = ("p_g", "q_g", "p_c", "p_d", "v", "theta")


@dataclass(frozen=True)
class HorizonMatrices:
    Hg: np.ndarray  # ones on the superdiagonal
    Hs: np.ndarray  # upper-triangular ones
    hg0: np.ndarray  # first unit vector


def horizon_matrices(tau):
    """Shift, cumulative-sum and first-slot selectors for a window of ``tau`` slots."""
    if int(tau) != tau or tau < 1:
        raise ValueError(f"tau must be a positive integer, got {tau!r}")
    tau = int(tau)
    hg0 = np.zeros(tau)
    hg0[0] = 1.0
    return HorizonMatrices(
        Hg=np.eye(tau, k=1), Hs=np.triu(np.ones((tau, tau))), hg0=hg0
    )


def gen_cost(params, p):
    """Generator cost in $/h at output ``p`` MW."""
    return 0.5 * params.a * p * p + params.b * p + params.c


def storage_cost(params, pc, pd):
    """Storage operating cost in $/h for charging ``pc`` and discharging ``pd`` MW."""
    if np.any(np.asarray(pc) < 0) or np.any(np.asarray(pd) < 0):
        raise ValueError("charging and discharging powers must be nonnegative")
    return params.a * (pc + pd) + params.b


@dataclass
class DispatchSolution:
    """Primal values per bus and slot, each of shape ``(n, tau)`` in p.u.

    ``theta`` is in radians, ``v`` in p.u.
    """

    p_g: np.ndarray
    q_g: np.ndarray
    p_c: np.ndarray
    p_d: np.ndarray
    v: np.ndarray
    theta: np.ndarray

    def to_vector(self):
        """Stacked ``col(p_g, q_g, p_c, p_d, v, theta)``."""
        return np.concatenate([getattr(self, f).ravel() for f in PRIMAL_FIELDS])

    @classmethod
    def from_vector(cls, x, n, tau):
        x = np.asarray(x, dtype=float)
        if x.shape != (6 * n * tau,):
            raise ValueError(f"expected a vector of length {6 * n * tau}, got {x.shape}")
        parts = x.reshape(6, n, tau)
        return cls(*(parts[k].copy() for k in range(6)))

    @classmethod
    def zeros(cls, n, tau):
        return cls(*(np.zeros((n, tau)) for _ in PRIMAL_FIELDS))


@dataclass
class MtsedProblem:
    """Per-bus parameterisation of one dispatch window in internal units.

    Every per-bus array has length ``n``. Buses without a generator carry
    zero cost and zero power/ramp bounds; buses without storage carry zero
    efficiencies (``eta_d_inv`` is the reciprocal discharge efficiency),
    zero power limits and a zero energy range.
    """

    case: NetworkCase
    dlpf: DlpfMatrices
    horizon: HorizonConfig
    hm: HorizonMatrices
    cost_scale: float
    has_gen: np.ndarray
    has_storage: np.ndarray
    a_g: np.ndarray
    b_g: np.ndarray
    c_g: np.ndarray  # $/h, constant offset only
    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    r_up: np.ndarray  # p.u./h
    r_down: np.ndarray  # signed lower ramp bound, p.u./h (<= 0)
    p0: np.ndarray
    a_s: np.ndarray
    b_s: np.ndarray  # $/h, constant offset only
    pc_max: np.ndarray
    pd_max: np.ndarray
    eta_c: np.ndarray
    eta_d_inv: np.ndarray
    c_min: np.ndarray  # p.u. h
    c_max: np.ndarray
    c0: np.ndarray
    v_min: np.ndarray
    v_max: np.ndarray
    d_p: np.ndarray  # (n, tau)
    d_q: np.ndarray

    @property
    def n(self):
        return self.case.n

    @property
    def tau(self):
        return self.horizon.tau

    @property
    def T(self):
        """Slot length in hours."""
        return self.horizon.slot_hours

    @property
    def base_mva(self):
        return self.case.base_mva

    @property
    def bus_ids(self):
        return self.case.bus_ids

    @property
    def G(self):
        return self.dlpf.G

    @property
    def B(self):
        return self.dlpf.B

    @property
    def Bp(self):
        return self.dlpf.Bp

    def _tile(self, values):
        return np.repeat(np.asarray(values, dtype=float)[:, None], self.tau, axis=1)

    @property
    def boxes(self):
        """Boxes for ``p_g, q_g, p_c, p_d, v``, each with ``(n, tau)`` bounds."""
        zero = np.zeros(self.n)
        return {
            "p_g": Box(self._tile(self.p_min), self._tile(self.p_max)),
            "q_g": Box(self._tile(self.q_min), self._tile(self.q_max)),
            "p_c": Box(self._tile(zero), self._tile(self.pc_max)),
            "p_d": Box(self._tile(zero), self._tile(self.pd_max)),
            "v": Box(self._tile(self.v_min), self._tile(self.v_max)),
        }

    def box_bounds(self):
        """Lower and upper bounds stacked as ``(5, n, tau)`` arrays."""
        boxes = self.boxes
        lo = np.stack([boxes[k].lo for k in ("p_g", "q_g", "p_c", "p_d", "v")])
        hi = np.stack([boxes[k].hi for k in ("p_g", "q_g", "p_c", "p_d", "v")])
        return lo, hi

    def omega(self):
        """Box over all ``6 n tau`` primal coordinates; angles are unbounded."""
        lo, hi = self.box_bounds()
        N = self.n * self.tau
        lo = np.concatenate([lo.ravel(), np.full(N, -np.inf)])
        hi = np.concatenate([hi.ravel(), np.full(N, np.inf)])
        return Box(lo, hi)

    def cost_offset(self):
        """Constant part of the window cost in $/h (fixed generator and storage terms)."""
        return self.tau * (float(np.sum(self.c_g)) + float(np.sum(self.b_s)))

    def energy_levels(self, solution):
        """Stored energy ``c[k]`` for ``k = 0..tau`` in p.u. h, shape ``(n, tau + 1)``."""
        flow = self.eta_c[:, None] * solution.p_c - self.eta_d_inv[:, None] * solution.p_d
        levels = self.c0[:, None] + self.T * np.cumsum(flow, axis=1)
        return np.concatenate([self.c0[:, None], levels], axis=1)

    def ramps(self, solution):
        """Slot-to-slot active power change of each generator, in p.u. per hour."""
        prev = np.concatenate([self.p0[:, None], solution.p_g[:, :-1]], axis=1)
        return (solution.p_g - prev) / self.T

    def with_initial_conditions(self, p0_mw=None, c0_mwh=None, demand_p=None, demand_q=None):
        """Problem for the next window: new start-of-window state and demand.

        ``p0_mw`` and ``c0_mwh`` map bus id to the new value; demand arrays are
        in MW/MVar with shape ``(n, tau)``.
        """
        import dataclasses

        case = self.case
        gens = case.generators
        stos = case.storages
        if p0_mw is not None:
            gens = [dataclasses.replace(g, p0=float(p0_mw.get(g.bus, g.p0))) for g in gens]
        if c0_mwh is not None:
            stos = [dataclasses.replace(s, c0=float(c0_mwh.get(s.bus, s.c0))) for s in stos]
        changes = {"generators": gens, "storages": stos}
        if demand_p is not None:
            changes["demand_p"] = np.array(demand_p, dtype=float)
        if demand_q is not None:
            changes["demand_q"] = np.array(demand_q, dtype=float)
        new_case = case.replace(**changes)
        return assemble_problem(new_case, self.dlpf, self.horizon, cost_scale=self.cost_scale)


def assemble_problem(case, dlpf=None, horizon=None, cost_scale=DEFAULT_COST_SCALE):
    """Build the dispatch problem for one window of ``case``.

    Parameters
    ----------
    case : NetworkCase
    dlpf : DlpfMatrices, optional
        Network matrices; built from ``case`` when omitted.
    horizon : HorizonConfig, optional
        Defaults to the case horizon. Its ``tau`` must match the demand arrays.
    cost_scale : float
        $/h represented by one internal cost unit.
    """
    if horizon is None:
        horizon = case.horizon
    if dlpf is None:
        dlpf = build_dlpf(case)
    if case.demand_p.shape[1] != horizon.tau or case.demand_q.shape[1] != horizon.tau:
        raise ValueError(
            f"inconsistent tau: horizon has {horizon.tau} slots, demand has "
            f"{case.demand_p.shape[1]}"
        )
    if not cost_scale > 0:
        raise ValueError("cost_scale must be positive")
    n = case.n
    if dlpf.G.shape != (n, n):
        raise ValueError(f"network matrices have shape {dlpf.G.shape}, expected {(n, n)}")
    base = case.base_mva
    z = np.zeros

    has_gen = z(n, dtype=bool)
    a_g, b_g, c_g = z(n), z(n), z(n)
    p_min, p_max, q_min, q_max = z(n), z(n), z(n), z(n)
    r_up, r_down, p0 = z(n), z(n), z(n)
    for g in case.generators:
        try:
            i = case.index(g.bus)
        except KeyError:
            raise ValueError(f"generator attached to unknown bus {g.bus}") from None
        has_gen[i] = True
        a_g[i] = g.a * base**2 / cost_scale
        b_g[i] = g.b * base / cost_scale
        c_g[i] = g.c
        p_min[i], p_max[i] = g.p_min / base, g.p_max / base
        q_min[i], q_max[i] = g.q_min / base, g.q_max / base
        r_up[i] = g.ramp_up / base
        r_down[i] = -g.ramp_down / base
        p0[i] = g.p0 / base

    has_storage = z(n, dtype=bool)
    a_s, b_s = z(n), z(n)
    pc_max, pd_max, eta_c, eta_d_inv = z(n), z(n), z(n), z(n)
    c_min, c_max, c0 = z(n), z(n), z(n)
    for s in case.storages:
        try:
            i = case.index(s.bus)
        except KeyError:
            raise ValueError(f"storage attached to unknown bus {s.bus}") from None
        has_storage[i] = True
        a_s[i] = s.a * base / cost_scale
        b_s[i] = s.b
        pc_max[i], pd_max[i] = s.pc_max / base, s.pd_max / base
        eta_c[i], eta_d_inv[i] = s.eta_c, 1.0 / s.eta_d
        c_min[i], c_max[i], c0[i] = s.c_min / base, s.c_max / base, s.c0 / base

    v_min = np.array([b.v_min for b in case.buses])
    v_max = np.array([b.v_max for b in case.buses])
    d_p, d_q = case.demand_pu()
    return MtsedProblem(
        case=case, dlpf=dlpf, horizon=horizon, hm=horizon_matrices(horizon.tau),
        cost_scale=float(cost_scale), has_gen=has_gen, has_storage=has_storage,
        a_g=a_g, b_g=b_g, c_g=c_g, p_min=p_min, p_max=p_max, q_min=q_min,
        q_max=q_max, r_up=r_up, r_down=r_down, p0=p0, a_s=a_s, b_s=b_s,
        pc_max=pc_max, pd_max=pd_max, eta_c=eta_c, eta_d_inv=eta_d_inv,
        c_min=c_min, c_max=c_max, c0=c0, v_min=v_min, v_max=v_max,
        d_p=d_p.copy(), d_q=d_q.copy(),
    )


def _clip_roundoff(values, tol=1e-7):
    return np.where((values < 0) & (values >= -tol), 0.0, values)


def total_cost(problem, solution):
    """Window cost in $/h: generator and storage costs summed over buses and slots.

    ``solution`` is a :class:`DispatchSolution` (p.u.) or a stacked vector.
    """
    if not isinstance(solution, DispatchSolution):
        solution = DispatchSolution.from_vector(solution, problem.n, problem.tau)
    shape = (problem.n, problem.tau)
    for f in PRIMAL_FIELDS:
        if getattr(solution, f).shape != shape:
            raise ValueError(f"{f} has shape {getattr(solution, f).shape}, expected {shape}")
    case = problem.case
    base = case.base_mva
    cost = 0.0
    for g in case.generators:
        cost += float(np.sum(gen_cost(g, base * solution.p_g[case.index(g.bus)])))
    for s in case.storages:
        i = case.index(s.bus)
        # solver round-off may leave values a hair below zero
        pc = _clip_roundoff(base * solution.p_c[i])
        pd = _clip_roundoff(base * solution.p_d[i])
        cost += float(np.sum(storage_cost(s, pc, pd)))
    return cost


@dataclass(frozen=True)
class CompactProblem:
    """Stacked form: minimise ``x'Ax/2 + Bvec'x`` s.t. ``Cx = D``, ``Ex <= F``, ``x in omega``.

    ``x = col(p_g, q_g, p_c, p_d, v, theta)``, each block ordered bus-major
    (all slots of bus 1, then bus 2, ...).
    """

    n: int
    tau: int
    A: np.ndarray
    Bvec: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    omega: Box
    cost_scale: float
    cost_offset: float

    @property
    def nx(self):
        return self.A.shape[0]

    def objective(self, x):
        """Objective in internal cost units (no constant offset)."""
        return 0.5 * x @ self.A @ x + self.Bvec @ x

    def cost(self, x):
        """Objective converted to $/h, including the constant offset."""
        return self.cost_scale * self.objective(x) + self.cost_offset

    def gradient(self, x):
        return self.A @ x + self.Bvec

    def block(self, x, name):
        """View of one primal block of a stacked vector, shape ``(n, tau)``."""
        k = PRIMAL_FIELDS.index(name)
        N = self.n * self.tau
        return np.asarray(x)[k * N:(k + 1) * N].reshape(self.n, self.tau)

    def to_matrix_market(self):
        """Text dump of all matrices in coordinate (Matrix Market) format."""
        out = io.StringIO()
        out.write(f"% compact dispatch problem n={self.n} tau={self.tau}\n")
        arrays = {"A": self.A, "Bvec": self.Bvec[:, None], "C": self.C,
                  "D": self.D[:, None], "E": self.E, "F": self.F[:, None],
                  "lo": self.omega.lo[:, None], "hi": self.omega.hi[:, None]}
        for name, M in arrays.items():
            rows, cols = np.nonzero(M)
            out.write("%%MatrixMarket matrix coordinate real general\n")
            out.write(f"% {name}\n{M.shape[0]} {M.shape[1]} {len(rows)}\n")
            for r, c in zip(rows, cols):
                out.write(f"{r + 1} {c + 1} {M[r, c]!r}\n")
        return out.getvalue()


def compact_matrices(problem):
    """Stacked matrices ``A, Bvec, C, D, E, F`` and the box ``omega``."""
    n, tau, T = problem.n, problem.tau, problem.T
    N = n * tau
    I_tau = np.eye(tau)
    I_N = np.eye(N)
    Z = np.zeros((N, N))
    one = np.ones(tau)
    hm = problem.hm
    G, B, Bp = problem.G, problem.B, problem.Bp

    A = np.zeros((6 * N, 6 * N))
    A[:N, :N] = np.kron(np.diag(problem.a_g), I_tau)
    Bvec = np.concatenate([
        np.kron(problem.b_g, one), np.zeros(N),
        np.kron(problem.a_s, one), np.kron(problem.a_s, one),
        np.zeros(2 * N),
    ])
    C = np.block([
        [I_N, Z, -I_N, I_N, -np.kron(G, I_tau), np.kron(Bp, I_tau)],
        [Z, I_N, Z, Z, np.kron(B, I_tau), np.kron(G, I_tau)],
    ])
    D = np.concatenate([problem.d_p.ravel(), problem.d_q.ravel()])

    R = I_N - np.kron(np.eye(n), hm.Hg.T)
    Ec = T * np.kron(np.diag(problem.eta_c), hm.Hs.T)
    Ed = T * np.kron(np.diag(problem.eta_d_inv), hm.Hs.T)
    E = np.block([
        [R, Z, Z, Z, Z, Z],
        [-R, Z, Z, Z, Z, Z],
        [Z, Z, Ec, -Ed, Z, Z],
        [Z, Z, -Ec, Ed, Z, Z],
    ])
    p0h = np.kron(problem.p0, hm.hg0)
    F = np.concatenate([
        p0h + T * np.kron(problem.r_up, one),
        -p0h - T * np.kron(problem.r_down, one),
        np.kron(problem.c_max - problem.c0, one),
        np.kron(problem.c0 - problem.c_min, one),
    ])
    return CompactProblem(
        n=n, tau=tau, A=A, Bvec=Bvec, C=C, D=D, E=E, F=F, omega=problem.omega(),
        cost_scale=problem.cost_scale, cost_offset=problem.cost_offset(),
    )
