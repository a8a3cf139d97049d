"""Network cases: parsing, serialization and DLPF network matrices.

A case is a TOML document with the top-level keys ``base_mva``, ``horizon``,
``buses``, ``branches``, ``generators``, ``storages`` and ``demand``.
Device and demand data are given in physical units (MW, MVar, MWh, $);
bus shunts and branch impedances are per-unit on ``base_mva``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import tomli
import tomli_w

__all__ = [
    "Branch",
    "Bus",
    "CaseError",
    "DlpfMatrices",
    "GeneratorParams",
    "HorizonConfig",
    "NetworkCase",
    "StorageParams",
    "build_dlpf",
    "bundled_cases",
    "cyclic_demand",
    "load_case",
    "neighbors",
    "parse_case",
    "serialize_case",
    "with_horizon",
]


class CaseError(ValueError):
    """Malformed or inconsistent case document.

    ``line`` is set for syntax errors, ``field`` for errors attached to a
    particular entry (e.g. ``"branches[3].to"``).
    """

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class Bus:
    id: int
    gs: float = 0.0  # shunt conductance, p.u.
    bs: float = 0.0  # shunt susceptance, p.u.
    v_min: float = 0.9
    v_max: float = 1.1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0  # total line-charging susceptance, p.u.


@dataclass(frozen=True)
class GeneratorParams:
    """Synchronous generator at one bus.

    Costs follow ``a/2 p^2 + b p + c`` with ``p`` in MW. ``ramp_down`` is a
    magnitude: the slot-to-slot change is bounded below by
    ``-ramp_down * slot_hours``.
    """

    bus: int
    a: float  # $/(MW^2 h)
    b: float  # $/MWh
    c: float  # $/h
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    ramp_up: float  # MW/h
    ramp_down: float  # MW/h
    p0: float  # MW, output right before the window


@dataclass(frozen=True)
class StorageParams:
    """Energy storage device at one bus; cost ``a (pc + pd) + b``."""

    bus: int
    a: float  # $/MWh
    b: float  # $/h
    pc_max: float  # MW
    pd_max: float  # MW
    eta_c: float
    eta_d: float
    c_min: float  # MWh
    c_max: float  # MWh
    c0: float  # MWh, stored energy right before the window


@dataclass(frozen=True)
class HorizonConfig:
    tau: int
    slot_hours: float

    def __post_init__(self):
        if int(self.tau) != self.tau or self.tau < 1:
            raise ValueError(f"tau must be a positive integer, got {self.tau!r}")
        if not self.slot_hours > 0:
            raise ValueError(f"slot_hours must be positive, got {self.slot_hours!r}")

    @property
    def slot_minutes(self):
        return self.slot_hours * 60.0


@dataclass
class NetworkCase:
    """A validated case. Device and demand values are kept in MW/MVar/MWh.

    ``demand_p`` and ``demand_q`` have shape ``(n, tau)`` and are ordered
    like ``buses``.
    """

    base_mva: float
    horizon: HorizonConfig
    buses: list[Bus]
    branches: list[Branch]
    generators: list[GeneratorParams]
    storages: list[StorageParams]
    demand_p: np.ndarray
    demand_q: np.ndarray
    name: str = ""
    notes: str = ""
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.demand_p = np.asarray(self.demand_p, dtype=float)
        self.demand_q = np.asarray(self.demand_q, dtype=float)
        self._index = {b.id: k for k, b in enumerate(self.buses)}

    @property
    def n(self):
        return len(self.buses)

    @property
    def tau(self):
        return self.horizon.tau

    @property
    def bus_ids(self):
        return [b.id for b in self.buses]

    def index(self, bus_id):
        """Position of ``bus_id`` in the bus ordering."""
        try:
            return self._index[bus_id]
        except KeyError:
            raise KeyError(f"unknown bus {bus_id}") from None

    @property
    def generator_buses(self):
        return [g.bus for g in self.generators]

    @property
    def storage_buses(self):
        return [s.bus for s in self.storages]

    def demand_pu(self):
        """Active and reactive demand in p.u., each of shape ``(n, tau)``."""
        return self.demand_p / self.base_mva, self.demand_q / self.base_mva

    def replace(self, **changes):
        """Copy of the case with some fields replaced (validated again)."""
        kw = {f.name: getattr(self, f.name) for f in fields(self) if f.init}
        kw.update(changes)
        case = NetworkCase(**kw)
        _validate(case)
        return case

    def __eq__(self, other):
        if not isinstance(other, NetworkCase):
            return NotImplemented
        return (
            self.base_mva == other.base_mva
            and self.horizon == other.horizon
            and self.buses == other.buses
            and self.branches == other.branches
            and self.generators == other.generators
            and self.storages == other.storages
            and np.array_equal(self.demand_p, other.demand_p)
            and np.array_equal(self.demand_q, other.demand_q)
            and self.name == other.name
        )


@dataclass(frozen=True)
class DlpfMatrices:
    """Conductance ``G``, susceptance ``B`` and series-only susceptance ``Bp``."""

    G: np.ndarray
    B: np.ndarray
    Bp: np.ndarray


# -- parsing ---------------------------------------------------------------

_BUS_KEYS = {"id": int, "gs": float, "bs": float, "v_min": float, "v_max": float}
_BRANCH_KEYS = {"from": int, "to": int, "r": float, "x": float, "b": float}
_GEN_KEYS = {
    "bus": int, "a": float, "b": float, "c": float, "p_min": float,
    "p_max": float, "q_min": float, "q_max": float, "ramp_up": float,
    "ramp_down": float, "p0": float,
}
_STORAGE_KEYS = {
    "bus": int, "a": float, "b": float, "pc_max": float, "pd_max": float,
    "eta_c": float, "eta_d": float, "c_min": float, "c_max": float, "c0": float,
}
_OPTIONAL = {
    "bus": {"gs": 0.0, "bs": 0.0, "v_min": 0.9, "v_max": 1.1},
    "branch": {"b": 0.0},
}


def _number(value, where, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise CaseError(f"expected a number, got {value!r}", field=where)
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise CaseError(f"expected an integer, got {value!r}", field=where)
        return int(value)
    value = float(value)
    if not math.isfinite(value):
        raise CaseError("NaN/Inf not permitted", field=where)
    return value


def _record(entry, keys, where, optional=None):
    if not isinstance(entry, dict):
        raise CaseError("expected a table", field=where)
    optional = optional or {}
    unknown = set(entry) - set(keys)
    if unknown:
        raise CaseError(f"unknown key(s) {sorted(unknown)}", field=where)
    out = {}
    for key, kind in keys.items():
        if key not in entry:
            if key in optional:
                out[key] = optional[key]
                continue
            raise CaseError("missing required key", field=f"{where}.{key}")
        out[key] = _number(entry[key], f"{where}.{key}", kind)
    return out


def _table_list(doc, key):
    value = doc.get(key, [])
    if not isinstance(value, list):
        raise CaseError("expected an array of tables", field=key)
    return value


def parse_case(text):
    """Parse a case document into a validated :class:`NetworkCase`.

    Raises
    ------
    CaseError
        On TOML syntax errors (with the line number), on missing or
        malformed fields (with the field path) and on invariant violations
        such as duplicate bus ids, dangling branch endpoints, a disconnected
        network or demand arrays whose length differs from ``tau``.
    """
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            import re

            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise CaseError(f"syntax error: {exc}", line=line) from None

    known = {"name", "notes", "base_mva", "horizon", "buses", "branches",
             "generators", "storages", "demand"}
    unknown = set(doc) - known
    if unknown:
        raise CaseError(f"unknown top-level key(s) {sorted(unknown)}")

    if "base_mva" not in doc:
        raise CaseError("missing required key", field="base_mva")
    base_mva = _number(doc["base_mva"], "base_mva")

    hz = doc.get("horizon")
    if not isinstance(hz, dict):
        raise CaseError("missing [horizon] table", field="horizon")
    extra = set(hz) - {"tau", "slot_minutes"}
    if extra:
        raise CaseError(f"unknown key(s) {sorted(extra)}", field="horizon")
    for key in ("tau", "slot_minutes"):
        if key not in hz:
            raise CaseError("missing required key", field=f"horizon.{key}")
    tau = _number(hz["tau"], "horizon.tau", int)
    slot_minutes = _number(hz["slot_minutes"], "horizon.slot_minutes")
    if tau < 1:
        raise CaseError(f"tau must be >= 1, got {tau}", field="horizon.tau")
    if slot_minutes <= 0:
        raise CaseError("slot length must be positive", field="horizon.slot_minutes")
    horizon = HorizonConfig(tau=tau, slot_hours=slot_minutes / 60.0)

    buses = []
    for k, entry in enumerate(_table_list(doc, "buses")):
        rec = _record(entry, _BUS_KEYS, f"buses[{k}]", _OPTIONAL["bus"])
        buses.append(Bus(**rec))

    branches = []
    for k, entry in enumerate(_table_list(doc, "branches")):
        rec = _record(entry, _BRANCH_KEYS, f"branches[{k}]", _OPTIONAL["branch"])
        branches.append(Branch(rec["from"], rec["to"], rec["r"], rec["x"], rec["b"]))

    generators = [
        GeneratorParams(**_record(entry, _GEN_KEYS, f"generators[{k}]"))
        for k, entry in enumerate(_table_list(doc, "generators"))
    ]
    storages = [
        StorageParams(**_record(entry, _STORAGE_KEYS, f"storages[{k}]"))
        for k, entry in enumerate(_table_list(doc, "storages"))
    ]

    index = {}
    for k, bus in enumerate(buses):
        if bus.id in index:
            raise CaseError(f"duplicate bus id {bus.id}", field=f"buses[{k}].id")
        index[bus.id] = k

    demand_p = np.zeros((len(buses), tau))
    demand_q = np.zeros((len(buses), tau))
    seen = set()
    for k, entry in enumerate(_table_list(doc, "demand")):
        where = f"demand[{k}]"
        if not isinstance(entry, dict):
            raise CaseError("expected a table", field=where)
        extra = set(entry) - {"bus", "p", "q"}
        if extra:
            raise CaseError(f"unknown key(s) {sorted(extra)}", field=where)
        if "bus" not in entry:
            raise CaseError("missing required key", field=f"{where}.bus")
        bus = _number(entry["bus"], f"{where}.bus", int)
        if bus not in index:
            raise CaseError(f"demand refers to unknown bus {bus}", field=f"{where}.bus")
        if bus in seen:
            raise CaseError(f"duplicate demand entry for bus {bus}", field=f"{where}.bus")
        seen.add(bus)
        for key, target in (("p", demand_p), ("q", demand_q)):
            values = entry.get(key, [0.0] * tau)
            if not isinstance(values, list):
                raise CaseError("expected an array", field=f"{where}.{key}")
            if len(values) != tau:
                raise CaseError(
                    f"demand for bus {bus} has {len(values)} entries, expected tau={tau}",
                    field=f"{where}.{key}",
                )
            target[index[bus]] = [
                _number(v, f"{where}.{key}[{j}]") for j, v in enumerate(values)
            ]

    case = NetworkCase(
        base_mva=base_mva,
        horizon=horizon,
        buses=buses,
        branches=branches,
        generators=generators,
        storages=storages,
        demand_p=demand_p,
        demand_q=demand_q,
        name=str(doc.get("name", "")),
        notes=str(doc.get("notes", "")),
    )
    _validate(case)
    return case


def _validate(case):
    if not case.base_mva > 0:
        raise CaseError("base_mva must be positive", field="base_mva")
    if case.n == 0:
        raise CaseError("case has no buses", field="buses")
    ids = set()
    for k, bus in enumerate(case.buses):
        if bus.id in ids:
            raise CaseError(f"duplicate bus id {bus.id}", field=f"buses[{k}].id")
        ids.add(bus.id)
        if not bus.v_min < bus.v_max:
            raise CaseError(f"bus {bus.id}: v_min must be below v_max", field=f"buses[{k}]")
    for k, br in enumerate(case.branches):
        for end, bus in (("from", br.from_bus), ("to", br.to_bus)):
            if bus not in ids:
                raise CaseError(f"branch refers to unknown bus {bus}", field=f"branches[{k}].{end}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch connects bus {br.from_bus} to itself", field=f"branches[{k}]")
        if br.r < 0:
            raise CaseError("resistance must be >= 0", field=f"branches[{k}].r")
        if not br.x > 0:
            raise CaseError("reactance must be > 0", field=f"branches[{k}].x")
    seen = set()
    for k, g in enumerate(case.generators):
        where = f"generators[{k}]"
        if g.bus not in ids:
            raise CaseError(f"generator attached to unknown bus {g.bus}", field=f"{where}.bus")
        if g.bus in seen:
            raise CaseError(f"more than one generator at bus {g.bus}", field=f"{where}.bus")
        seen.add(g.bus)
        if g.a < 0:
            raise CaseError("quadratic cost coefficient must be >= 0", field=f"{where}.a")
        if g.p_min > g.p_max:
            raise CaseError("p_min exceeds p_max", field=where)
        if g.q_min > g.q_max:
            raise CaseError("q_min exceeds q_max", field=where)
    seen = set()
    for k, s in enumerate(case.storages):
        where = f"storages[{k}]"
        if s.bus not in ids:
            raise CaseError(f"storage attached to unknown bus {s.bus}", field=f"{where}.bus")
        if s.bus in seen:
            raise CaseError(f"more than one storage device at bus {s.bus}", field=f"{where}.bus")
        seen.add(s.bus)
        if s.a < 0:
            raise CaseError("linear cost coefficient must be >= 0", field=f"{where}.a")
        if s.pc_max < 0 or s.pd_max < 0:
            raise CaseError("power limits must be >= 0", field=where)
        if not (0 < s.eta_c <= 1 and 0 < s.eta_d <= 1):
            raise CaseError("efficiencies must lie in (0, 1]", field=where)
        if not (0 <= s.c_min <= s.c0 <= s.c_max):
            raise CaseError("need 0 <= c_min <= c0 <= c_max", field=where)
    shape = (case.n, case.tau)
    if case.demand_p.shape != shape or case.demand_q.shape != shape:
        raise CaseError(f"demand arrays must have shape {shape}", field="demand")
    if not (np.all(np.isfinite(case.demand_p)) and np.all(np.isfinite(case.demand_q))):
        raise CaseError("NaN/Inf not permitted", field="demand")
    _check_connected(case)


def _check_connected(case):
    adj = {b.id: set() for b in case.buses}
    for br in case.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    start = case.buses[0].id
    seen = {start}
    stack = [start]
    while stack:
        for j in adj[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    missing = [b for b in adj if b not in seen]
    if missing:
        raise CaseError(
            f"network is disconnected: bus(es) {missing} unreachable from bus {start}",
            field="branches",
        )


def serialize_case(case):
    """TOML text for ``case``; ``parse_case`` inverts it exactly."""
    doc = {}
    if case.name:
        doc["name"] = case.name
    if case.notes:
        doc["notes"] = case.notes
    doc["base_mva"] = float(case.base_mva)
    doc["horizon"] = {"tau": case.tau, "slot_minutes": float(case.horizon.slot_minutes)}
    doc["buses"] = [
        {"id": b.id, "gs": b.gs, "bs": b.bs, "v_min": b.v_min, "v_max": b.v_max}
        for b in case.buses
    ]
    doc["branches"] = [
        {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b}
        for br in case.branches
    ]
    doc["generators"] = [
        {f.name: getattr(g, f.name) for f in fields(g)} for g in case.generators
    ]
    doc["storages"] = [
        {f.name: getattr(s, f.name) for f in fields(s)} for s in case.storages
    ]
    doc["demand"] = [
        {"bus": b.id, "p": case.demand_p[k].tolist(), "q": case.demand_q[k].tolist()}
        for k, b in enumerate(case.buses)
    ]
    return tomli_w.dumps(doc)


def bundled_cases():
    """Names of the cases shipped with the package."""
    root = resources.files("mtsed") / "cases"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_case(source):
    """Load a case from a file path or a bundled case name."""
    path = Path(source)
    if path.is_file():
        return parse_case(path.read_text())
    name = str(source)
    name = name.removesuffix(".toml")
    res = resources.files("mtsed") / "cases" / f"{name}.toml"
    if res.is_file():
        return parse_case(res.read_text())
    raise FileNotFoundError(f"case not found: {source}")


def cyclic_demand(case, start, tau):
    """Demand for ``tau`` slots beginning at slot ``start``, repeating the case profile.

    Returns ``(d_p, d_q)`` in MW / MVAr with shape ``(n, tau)``.
    """
    cols = (int(start) + np.arange(int(tau))) % case.tau
    return case.demand_p[:, cols].copy(), case.demand_q[:, cols].copy()


def with_horizon(case, tau=None, slot_minutes=None):
    """Copy of ``case`` with a different window length or slot duration.

    A longer window repeats the demand profile cyclically; a shorter one
    truncates it.
    """
    tau = case.tau if tau is None else int(tau)
    hours = case.horizon.slot_hours if slot_minutes is None else float(slot_minutes) / 60.0
    d_p, d_q = cyclic_demand(case, 0, tau)
    return case.replace(horizon=HorizonConfig(tau=tau, slot_hours=hours),
                        demand_p=d_p, demand_q=d_q)


def _admittance(case, series_only):
    n = case.n
    Y = np.zeros((n, n), dtype=complex)
    for br in case.branches:
        i, j = case.index(br.from_bus), case.index(br.to_bus)
        y = 1.0 / complex(br.r, br.x)
        half = 0.0 if series_only else 0.5j * br.b
        Y[i, i] += y + half
        Y[j, j] += y + half
        Y[i, j] -= y
        Y[j, i] -= y
    if not series_only:
        for k, bus in enumerate(case.buses):
            Y[k, k] += complex(bus.gs, bus.bs)
    return Y


def build_dlpf(case):
    """DLPF matrices from branch pi-models (no taps or phase shifters).

    ``G`` and ``B`` come from the full bus admittance matrix; ``Bp`` is the
    susceptance of the series elements alone, so its rows sum to zero.
    """
    Y = _admittance(case, series_only=False)
    Ys = _admittance(case, series_only=True)
    return DlpfMatrices(G=Y.real.copy(), B=Y.imag.copy(), Bp=Ys.imag.copy())


def neighbors(case, bus_id):
    """Ids of buses sharing a branch with ``bus_id`` (excluding itself)."""
    case.index(bus_id)
    out = set()
    for br in case.branches:
        if br.from_bus == bus_id:
            out.add(br.to_bus)
        elif br.to_bus == bus_id:
            out.add(br.from_bus)
    return out
