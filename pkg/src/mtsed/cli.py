"""Command-line interface.

Subcommands
-----------
solve    integrate the distributed dynamics for one window
mpc      receding-horizon operation over several windows
verify   certify a solution stored in a summary document
oracle   solve the window centrally with the interior-point reference

Exit codes: 0 success, 1 input error, 2 dynamics did not converge,
3 solution not certified, 4 problem infeasible, 5 reference solver ran out
of iterations.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import sys

import numpy as np
import tomli
import tomli_w

from .dynamics import FIELDS
from .network import CaseError, cyclic_demand, load_case, with_horizon
from .problem import DispatchSolution, assemble_problem, compact_matrices
from .simulator import IntegratorConfig, init_state, receding_horizon, run_window
from .verify import (
    InfeasibleError,
    IterationLimitError,
    check_feasibility,
    check_kkt,
    oracle,
)

__all__ = ["EXIT_CODES", "build_parser", "main"]

EXIT_CODES = {
    "ok": 0,
    "input_error": 1,
    "not_converged": 2,
    "not_certified": 3,
    "infeasible": 4,
    "iteration_limit": 5,
}

CERTIFY_TOL = 1e-4


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a valid {kind.__name__}: {text!r}") from None
        if not value > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return value
    return parse


def _nonneg_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a valid int: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative: {text!r}")
    return value


def build_parser():
    parser = _Parser(prog="mtsed", description="Distributed multi-slot economic dispatch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, tol_default):
        p.add_argument("--case", required=True, help="case file or bundled case name")
        p.add_argument("--tau", type=_positive(int), help="slots per window")
        p.add_argument("--slot-minutes", type=_positive(float), help="slot length in minutes")
        p.add_argument("--summary", help="write a TOML summary here")
        p.add_argument("--tol", type=_positive(float), default=tol_default)

    def integration(p):
        p.add_argument("--dt", type=_positive(float), default=1e-3)
        p.add_argument("--max-seconds", type=_positive(float), default=180.0)
        p.add_argument("--method", choices=("euler", "rk4"), default="rk4")
        p.add_argument("--seed", type=_nonneg_int)
        p.add_argument("--trace", help="write the convergence trace CSV here")

    p = sub.add_parser("solve", help="run the distributed dynamics for one window")
    common(p, 1e-5)
    integration(p)

    p = sub.add_parser("mpc", help="receding-horizon operation")
    common(p, 1e-5)
    integration(p)
    p.add_argument("--windows", type=_positive(int), default=1)

    p = sub.add_parser("verify", help="certify a stored solution")
    common(p, CERTIFY_TOL)
    p.add_argument("--solution", required=True, help="summary document to check")

    p = sub.add_parser("oracle", help="solve the window centrally")
    common(p, 1e-6)
    return parser


def _load(args):
    try:
        case = load_case(args.case)
    except FileNotFoundError as exc:
        raise InputError(f"case file not found: {args.case}") from exc
    except CaseError as exc:
        raise InputError(f"invalid case {args.case}: {exc}") from exc
    if args.tau is not None or args.slot_minutes is not None:
        case = with_horizon(case, args.tau, args.slot_minutes)
    return case


def _config(args):
    return IntegratorConfig(method=args.method, dt=args.dt, tol=args.tol,
                            max_wall_seconds=args.max_seconds)


def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def _dispatch_tables(problem, sol, y):
    """Per-bus, per-slot tables in physical units plus internal duals."""
    base, K = problem.base_mva, problem.cost_scale
    n, tau = problem.n, problem.tau
    N = n * tau
    lam_p = y[:N].reshape(n, tau)
    return {
        "bus_ids": list(problem.bus_ids),
        "slots": list(range(1, tau + 1)),
        "slot_minutes": problem.horizon.slot_minutes,
        "p_g": _floats(base * sol.p_g),
        "q_g": _floats(base * sol.q_g),
        "p_c": _floats(base * sol.p_c),
        "p_d": _floats(base * sol.p_d),
        "v": _floats(sol.v),
        "theta": _floats(sol.theta),
        "ramp": _floats(base * problem.ramps(sol)),
        "energy": _floats(base * problem.energy_levels(sol)),
        "price": _floats(-K / base * lam_p),
    }


def _duals(problem, y, z):
    n, tau = problem.n, problem.tau
    yy = y.reshape(2, n, tau)
    zz = z.reshape(4, n, tau)
    out = {name: _floats(yy[k]) for k, name in enumerate(FIELDS[6:8])}
    out.update({name: _floats(zz[k]) for k, name in enumerate(FIELDS[8:12])})
    return out


def _summary(command, args, problem, sol, y, z, run, extra_info=None):
    compact = compact_matrices(problem)
    x = sol.to_vector()
    kkt = check_kkt(x, y, z, compact, tol=CERTIFY_TOL)
    feas = check_feasibility(sol, problem)
    doc = {
        "run": {"command": command, "case": str(args.case), "tau": problem.tau,
                "cost_scale": problem.cost_scale, **run},
        "kkt": kkt.as_dict(),
        "feasibility": feas.as_dict(),
        "dispatch": _dispatch_tables(problem, sol, y),
        "duals": _duals(problem, y, z),
        "solution": {"x": _floats(x), "y": _floats(y), "z": _floats(z)},
    }
    info = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    info.update(extra_info or {})
    doc["run_info"] = info
    return doc, kkt


def _write_summary(path, doc):
    if path:
        with open(path, "wb") as fh:
            tomli_w.dump(doc, fh)


def _cmd_solve(args):
    case = _load(args)
    problem = assemble_problem(case)
    config = _config(args)
    init = init_state(problem, args.seed)
    result = run_window(problem, config, init=init, certify_tol=CERTIFY_TOL)
    if args.trace:
        result.trace.to_csv(args.trace)
    run = {"converged": result.converged, "stop_reason": result.stop_reason,
           "steps": result.steps, "algorithm_time": result.t, "residual": result.residual,
           "cost": result.cost, "method": args.method, "dt": args.dt, "tol": args.tol}
    if args.seed is not None:
        run["seed"] = args.seed
    doc, kkt = _summary("solve", args, problem, result.solution, result.y, result.z, run,
                        {"wall_seconds": result.wall_seconds})
    _write_summary(args.summary, doc)
    print(f"solve: converged={result.converged} steps={result.steps} "
          f"residual={result.residual:.3e} cost={result.cost:.4f} $/h "
          f"certified={kkt.certified}")
    if not result.converged:
        print(f"not converged ({result.stop_reason}); best iterate reported", file=sys.stderr)
        return EXIT_CODES["not_converged"]
    return EXIT_CODES["ok"] if kkt.certified else EXIT_CODES["not_certified"]


def _cmd_oracle(args):
    case = _load(args)
    problem = assemble_problem(case)
    compact = compact_matrices(problem)
    try:
        res = oracle(compact, tol=args.tol)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_CODES["infeasible"]
    except IterationLimitError as exc:
        print(f"reference solver failed: {exc}", file=sys.stderr)
        return EXIT_CODES["iteration_limit"]
    sol = DispatchSolution.from_vector(res.x, problem.n, problem.tau)
    run = {"converged": True, "stop_reason": "optimal", "steps": res.qp.iterations,
           "cost": res.cost, "tol": args.tol}
    doc, _kkt = _summary("oracle", args, problem, sol, res.y, res.z, run)
    _write_summary(args.summary, doc)
    print(f"oracle: cost={res.cost:.4f} $/h iterations={res.qp.iterations} "
          f"certified={res.kkt.certified}")
    return EXIT_CODES["ok"]


def _cmd_verify(args):
    case = _load(args)
    problem = assemble_problem(case)
    compact = compact_matrices(problem)
    try:
        with open(args.solution, "rb") as fh:
            doc = tomli.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"solution file not found: {args.solution}") from exc
    except tomli.TOMLDecodeError as exc:
        raise InputError(f"solution file {args.solution} is not valid TOML: {exc}") from exc
    try:
        part = doc["solution"]
        x, y, z = (np.asarray(part[k], dtype=float) for k in ("x", "y", "z"))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"solution file {args.solution} lacks a [solution] table "
                         f"with x, y and z") from exc
    sizes = (compact.A.shape[0], compact.C.shape[0], compact.E.shape[0])
    if (x.size, y.size, z.size) != sizes:
        raise InputError(f"solution in {args.solution} has sizes {(x.size, y.size, z.size)}, "
                         f"case expects {sizes}")
    kkt = check_kkt(x, y, z, compact, tol=args.tol)
    feas = check_feasibility(x, problem, tol=args.tol)
    for name, value in kkt.as_dict().items():
        print(f"{name:32s} {value}")
    for name, value in feas.pu().items():
        print(f"feasibility.{name:20s} {value:.3e}")
    if args.summary:
        _write_summary(args.summary, {"kkt": kkt.as_dict(), "feasibility": feas.as_dict()})
    ok = kkt.certified and feas.feasible
    print(f"verify: certified={ok}")
    return EXIT_CODES["ok"] if ok else EXIT_CODES["not_certified"]


def _cmd_mpc(args):
    case = _load(args)
    config = _config(args)
    tau = case.tau
    sched = receding_horizon(case, lambda h: cyclic_demand(case, h, tau), config,
                             num_windows=args.windows)
    windows = []
    offset = 0.0
    rows = []
    for h, res in enumerate(sched.windows):
        windows.append({
            "index": h, "converged": res.converged, "certified": res.kkt.certified,
            "fallback": sched.fallback[h], "steps": res.steps, "cost": res.cost,
            "p0": [sched.p0[h][b] for b in case.generator_buses],
            "c0": [sched.c0[h][b] for b in case.storage_buses],
        })
        for row in res.trace.rows():
            rows.append((row[0] + offset,) + tuple(row[1:]))
        offset += res.t + args.dt
    if args.trace:
        from .simulator import RunTrace
        tr = RunTrace()
        for row in rows:
            tr.append(*row)
        tr.to_csv(args.trace)
    applied = {k: _floats(np.stack([a[k] for a in sched.applied], axis=1))
               for k in ("p_g", "q_g", "p_c", "p_d", "v")}
    doc = {
        "run": {"command": "mpc", "case": str(args.case), "windows": args.windows,
                "tau": tau, "method": args.method, "dt": args.dt, "tol": args.tol},
        "schedule": {"bus_ids": list(case.bus_ids), "generator_buses": case.generator_buses,
                     "storage_buses": case.storage_buses, **applied,
                     "final_p0": [sched.p0[-1][b] for b in case.generator_buses],
                     "final_c0": [sched.c0[-1][b] for b in case.storage_buses]},
        "windows": windows,
        "run_info": {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
                     "wall_seconds": sum(r.wall_seconds for r in sched.windows)},
    }
    _write_summary(args.summary, doc)
    n_conv = sum(w["converged"] for w in windows)
    print(f"mpc: {n_conv}/{len(windows)} windows converged")
    if n_conv < len(windows):
        return EXIT_CODES["not_converged"]
    if not all(w["certified"] for w in windows):
        return EXIT_CODES["not_certified"]
    return EXIT_CODES["ok"]


_COMMANDS = {"solve": _cmd_solve, "mpc": _cmd_mpc, "verify": _cmd_verify, "oracle": _cmd_oracle}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["input_error"]
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["input_error"]


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
