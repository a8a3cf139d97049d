"""Fixed-step integration of the multi-agent dispatch dynamics.

A run advances all buses in synchronous rounds: each round every bus
publishes its message from one snapshot, every bus evaluates its local rule
against that snapshot, and all states are committed together. Runge-Kutta
stages repeat the exchange on each stage snapshot.
"""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    FIELDS,
    LP,
    LQ,
    AgentDynamics,
    BatchedDynamics,
    compact_rhs,
)
from .problem import DispatchSolution, assemble_problem, compact_matrices, total_cost

__all__ = [
    "TRACE_HEADER",
    "IntegratorConfig",
    "NonFiniteStateError",
    "RunTrace",
    "Schedule",
    "WindowResult",
    "init_state",
    "make_rhs",
    "receding_horizon",
    "residual",
    "run_window",
    "step",
]

TRACE_HEADER = ("t", "residual", "lambda_p_norm", "lambda_q_norm", "cost")


class NonFiniteStateError(FloatingPointError):
    """The state or its derivative became NaN or infinite."""

    def __init__(self, bus, field_name, t):
        self.bus = bus
        self.field = field_name
        self.t = t
        super().__init__(f"non-finite value at bus {bus}, field {field_name}, t={t:g}")


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration and stopping options.

    Parameters
    ----------
    method : {"rk4", "euler"}
    dt : float
        Step in algorithm time.
    tol : float
        Stop once the max-norm of the state derivative is at most ``tol``.
    max_wall_seconds : float or None
        Wall-clock budget. Runs cut short by it are not reproducible.
    max_steps : int or None
    trace_every : int
        Steps between trace samples.
    evaluation : {"batched", "agents"}
        ``"agents"`` runs the per-bus rule once per bus with explicit
        messages; ``"batched"`` evaluates the same rule for all buses at once.
    workers : int
        Thread count for ``evaluation="agents"``; 1 means serial.
    snapshot_every : int or None
        Keep a full-state copy every this many steps.
    """

    method: str = "rk4"
    dt: float = 1e-3
    tol: float = 1e-5
    max_wall_seconds: float | None = 180.0
    max_steps: int | None = None
    trace_every: int = 100
    evaluation: str = "batched"
    workers: int = 1
    snapshot_every: int | None = None

    def __post_init__(self):
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"method must be 'rk4' or 'euler', got {self.method!r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_wall_seconds is not None and not self.max_wall_seconds > 0:
            raise ValueError("max_wall_seconds must be positive")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")
        if self.trace_every < 1:
            raise ValueError("trace_every must be at least 1")
        if self.evaluation not in ("batched", "agents"):
            raise ValueError(f"unknown evaluation mode {self.evaluation!r}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class RunTrace:
    times: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    lambda_p_norm: list = field(default_factory=list)
    lambda_q_norm: list = field(default_factory=list)
    cost: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (t, state) pairs

    def append(self, t, res, lp, lq, cost):
        if self.times and t <= self.times[-1]:
            raise ValueError("trace times must be strictly increasing")
        self.times.append(float(t))
        self.residual.append(float(res))
        self.lambda_p_norm.append(float(lp))
        self.lambda_q_norm.append(float(lq))
        self.cost.append(float(cost))

    def __len__(self):
        return len(self.times)

    def rows(self):
        return zip(self.times, self.residual, self.lambda_p_norm, self.lambda_q_norm, self.cost)

    def to_csv(self, path=None):
        """CSV text (``repr`` floats, so identical runs give identical bytes)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in self.rows():
            w.writerow([repr(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


@dataclass
class WindowResult:
    """Outcome of one window solve.

    ``solution`` holds the projected primal iterate in p.u.; ``y`` and ``z``
    are the stacked equality multipliers and the projected inequality
    multipliers ``z+``.
    """

    converged: bool
    state: np.ndarray
    solution: DispatchSolution
    y: np.ndarray
    z: np.ndarray
    kkt: object
    trace: RunTrace
    steps: int
    t: float
    residual: float
    cost: float
    wall_seconds: float
    stop_reason: str


def init_state(problem, seed=None):
    """Starting state of shape ``(14, n, tau)``.

    Without a seed the primal variables sit at their box midpoints, angles
    at zero and every multiplier at zero. With a seed the primal variables
    are drawn uniformly from their boxes and angles from ``[-0.1, 0.1]``.
    """
    n, tau = problem.n, problem.tau
    S = np.zeros((len(FIELDS), n, tau))
    lo, hi = problem.box_bounds()
    if seed is None:
        S[:5] = 0.5 * (lo + hi)
    else:
        rng = np.random.default_rng(seed)
        S[:5] = lo + (hi - lo) * rng.random(lo.shape)
        S[5] = rng.uniform(-0.1, 0.1, size=(n, tau))
    return S


def make_rhs(problem, config=None, executor=None):
    """State-derivative callable for ``config.evaluation``."""
    config = config or IntegratorConfig()
    if config.evaluation == "agents":
        return AgentDynamics(problem, executor=executor)
    return BatchedDynamics(problem)


def _advance(S, f, method, dt, k1=None):
    if k1 is None:
        k1 = f(S)
    if method == "euler":
        return S + dt * k1
    k2 = f(S + (0.5 * dt) * k1)
    k3 = f(S + (0.5 * dt) * k2)
    k4 = f(S + dt * k3)
    return S + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(states, problem, config=None, rhs=None):
    """One synchronous round of the chosen integrator; returns the new state."""
    config = config or IntegratorConfig()
    f = rhs if rhs is not None else make_rhs(problem, config)
    return _advance(np.asarray(states, dtype=float), f, config.method, config.dt)


def residual(states, problem, compact=None):
    """Max-norm of the stacked derivative computed by :func:`compact_rhs`."""
    compact = compact if compact is not None else compact_matrices(problem)
    return float(np.max(np.abs(compact_rhs(np.asarray(states).ravel(), compact))))


def _check_finite(S, dS, problem, t):
    for arr in (S, dS):
        bad = ~np.isfinite(arr)
        if bad.any():
            f, i, _ = np.argwhere(bad)[0]
            raise NonFiniteStateError(problem.bus_ids[i], FIELDS[f], t)


def _dual_parts(S, view):
    y = np.concatenate([S[LP].ravel(), S[LQ].ravel()])
    z = np.concatenate([view.mt_M.ravel(), view.mt_m.ravel(), view.gt_M.ravel(), view.gt_m.ravel()])
    return y, z


def _solution(view, S):
    return DispatchSolution(
        p_g=view.pt_g.copy(), q_g=view.qt_g.copy(), p_c=view.pt_c.copy(),
        p_d=view.pt_d.copy(), v=view.vt.copy(), theta=S[5].copy(),
    )


def run_window(problem, config=None, init=None, callback=None, certify_tol=1e-4):
    """Integrate one window until the residual drops to ``config.tol``.

    Parameters
    ----------
    problem : MtsedProblem
    config : IntegratorConfig, optional
    init : ndarray, optional
        Starting state; defaults to :func:`init_state` without a seed.
    callback : callable, optional
        Called as ``callback(step_index, t, state)`` before every step and
        once on the final state.
    certify_tol : float
        Tolerance for the attached KKT report.

    Returns
    -------
    WindowResult
        On non-convergence the iterate with the smallest sampled residual is
        returned with ``converged=False``.
    """
    from .verify.kkt import check_kkt

    config = config or IntegratorConfig()
    S = init_state(problem) if init is None else np.array(init, dtype=float)
    expected = (len(FIELDS), problem.n, problem.tau)
    if S.shape != expected:
        raise ValueError(f"initial state has shape {S.shape}, expected {expected}")

    batched = BatchedDynamics(problem)
    executor = None
    if config.evaluation == "agents" and config.workers > 1:
        executor = ThreadPoolExecutor(max_workers=config.workers)
    f = make_rhs(problem, config, executor)
    trace = RunTrace()
    dt = config.dt
    start = time.perf_counter()
    best = (np.inf, None, 0, 0.0)
    k = 0
    stop = "max_steps"
    try:
        while True:
            t = k * dt
            dS = f(S)
            res = float(np.max(np.abs(dS)))
            if not np.isfinite(res):
                _check_finite(S, dS, problem, t)
            done = res <= config.tol
            if callback is not None:
                callback(k, t, S)
            if k % config.trace_every == 0 or done:
                view = batched.view(S)
                cost = total_cost(problem, _solution(view, S))
                trace.append(t, res, np.max(np.abs(view.lt_p)), np.max(np.abs(view.lt_q)), cost)
                if res < best[0]:
                    best = (res, S.copy(), k, t)
            if config.snapshot_every and k % config.snapshot_every == 0:
                trace.snapshots.append((t, S.copy()))
            if done:
                stop = "converged"
                break
            if config.max_steps is not None and k >= config.max_steps:
                break
            if (config.max_wall_seconds is not None and k % 256 == 0
                    and time.perf_counter() - start > config.max_wall_seconds):
                stop = "wall_time"
                break
            S = _advance(S, f, config.method, dt, k1=dS)
            k += 1
    finally:
        if executor is not None:
            executor.shutdown()
    wall = time.perf_counter() - start

    converged = stop == "converged"
    if not converged:
        if trace.times[-1] != t:
            view = batched.view(S)
            trace.append(t, res, np.max(np.abs(view.lt_p)), np.max(np.abs(view.lt_q)),
                         total_cost(problem, _solution(view, S)))
            if res < best[0]:
                best = (res, S.copy(), k, t)
        res, S, k, t = best
    view = batched.view(S)
    sol = _solution(view, S)
    y, z = _dual_parts(S, view)
    compact = compact_matrices(problem)
    report = check_kkt(sol.to_vector(), y, z, compact, tol=certify_tol)
    return WindowResult(
        converged=converged, state=S, solution=sol, y=y, z=z, kkt=report, trace=trace,
        steps=k, t=t, residual=res, cost=total_cost(problem, sol), wall_seconds=wall,
        stop_reason=stop,
    )


@dataclass
class Schedule:
    """Setpoints applied by the receding-horizon driver, in MW / MVAr / p.u.

    ``applied[h]`` maps a field name to the length-``n`` vector applied in
    window ``h``; ``p0`` and ``c0`` hold the start-of-window generator
    outputs (MW) and storage energies (MWh) before each window and after the
    last one.
    """

    bus_ids: list
    applied: list = field(default_factory=list)
    p0: list = field(default_factory=list)
    c0: list = field(default_factory=list)
    windows: list = field(default_factory=list)
    fallback: list = field(default_factory=list)


def receding_horizon(case, forecast_stream, config=None, num_windows=1, cost_scale=None,
                     warm_start=False):
    """Solve ``num_windows`` consecutive windows, applying slot 1 of each.

    Parameters
    ----------
    case : NetworkCase
    forecast_stream : iterable or callable
        Yields, or returns for window index ``h``, a ``(d_p, d_q)`` pair of
        ``(n, tau)`` arrays in MW / MVAr.
    config : IntegratorConfig, optional
    num_windows : int
    cost_scale : float, optional
    warm_start : bool
        Start each window from the previous final state instead of the
        default initial state.

    Returns
    -------
    Schedule
        If a window fails to converge its setpoints are not applied; the
        previous window's setpoints are held instead (generators hold
        ``p0`` and storage idles if there is no previous window). Stored
        energy rolls forward by the applied charge and discharge and is
        clamped to the device's energy limits.
    """
    config = config or IntegratorConfig()
    kwargs = {} if cost_scale is None else {"cost_scale": cost_scale}
    problem = assemble_problem(case, **kwargs)
    n, base, T = problem.n, problem.base_mva, problem.T
    if callable(forecast_stream):
        forecasts = (forecast_stream(h) for h in range(num_windows))
    else:
        forecasts = iter(forecast_stream)

    gen_buses = [g.bus for g in case.generators]
    p0 = {g.bus: float(g.p0) for g in case.generators}
    c0 = {s.bus: float(s.c0) for s in case.storages}
    sched = Schedule(bus_ids=list(case.bus_ids))
    prev = None
    state = None
    for h in range(num_windows):
        try:
            d_p, d_q = next(forecasts)
        except StopIteration:
            raise ValueError(f"forecast stream ended after {h} windows") from None
        sched.p0.append(dict(p0))
        sched.c0.append(dict(c0))
        problem = problem.with_initial_conditions(p0_mw=p0, c0_mwh=c0, demand_p=d_p, demand_q=d_q)
        init = state if (warm_start and state is not None) else None
        result = run_window(problem, config, init=init)
        sched.windows.append(result)
        if result.converged:
            sol = result.solution
            applied = {
                "p_g": base * sol.p_g[:, 0], "q_g": base * sol.q_g[:, 0],
                "p_c": base * sol.p_c[:, 0], "p_d": base * sol.p_d[:, 0],
                "v": sol.v[:, 0].copy(),
            }
            state = result.state
            sched.fallback.append(False)
        else:
            if prev is None:
                pg = np.zeros(n)
                for b, val in p0.items():
                    pg[case.index(b)] = val
                applied = {"p_g": pg, "q_g": np.zeros(n), "p_c": np.zeros(n),
                           "p_d": np.zeros(n), "v": np.ones(n)}
            else:
                applied = {k: v.copy() for k, v in prev.items()}
            sched.fallback.append(True)
        sched.applied.append(applied)
        prev = applied
        for b in gen_buses:
            p0[b] = float(applied["p_g"][case.index(b)])
        for s in case.storages:
            i = case.index(s.bus)
            level = c0[s.bus] + T * (s.eta_c * applied["p_c"][i] - applied["p_d"][i] / s.eta_d)
            # a solution accurate to the stopping tolerance may overshoot a limit slightly
            c0[s.bus] = min(max(level, s.c_min), s.c_max)
    sched.p0.append(dict(p0))
    sched.c0.append(dict(c0))
    return sched
