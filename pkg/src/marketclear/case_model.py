"""Network case data model, case-file parsing and commitment reduction.

All quantities are stored in per-unit on ``base_mva``. Costs are rescaled so
that the objective keeps units of $/h with dispatch in per-unit:
``q_pu = q_MW * base**2`` and ``c_pu = c_MW * base``.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import BoundsError, EmptyFreeSet, ParseError, ValidationError


@dataclass(frozen=True)
class Bus:
    id: int
    load: float


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int  # internal 0-based index
    to_bus: int
    susceptance: float
    flow_limit: float  # math.inf means never binding


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int  # internal 0-based index
    quad_cost: float
    lin_cost: float
    p_min: float
    p_max: float


@dataclass(frozen=True)
class NetworkCase:
    buses: tuple
    lines: tuple
    generators: tuple
    base_mva: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        object.__setattr__(self, "generators", tuple(self.generators))
        _validate_network(self)

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_line(self):
        return len(self.lines)

    @property
    def n_gen(self):
        return len(self.generators)

    @cached_property
    def loads(self):
        return np.array([b.load for b in self.buses], dtype=float)

    @cached_property
    def bus_index(self):
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def gen_bus(self):
        return np.array([g.bus for g in self.generators], dtype=int)

    @cached_property
    def gen_map(self):
        return _distribution_matrix(self.n_bus, self.gen_bus)

    @cached_property
    def susceptance(self):
        return np.array([ln.susceptance for ln in self.lines], dtype=float)

    @cached_property
    def flow_limits(self):
        return np.array([ln.flow_limit for ln in self.lines], dtype=float)

    @cached_property
    def quad_costs(self):
        return np.array([g.quad_cost for g in self.generators], dtype=float)

    @cached_property
    def lin_costs(self):
        return np.array([g.lin_cost for g in self.generators], dtype=float)

    @cached_property
    def p_min(self):
        return np.array([g.p_min for g in self.generators], dtype=float)

    @cached_property
    def p_max(self):
        return np.array([g.p_max for g in self.generators], dtype=float)

    @property
    def network(self):
        return self


def _distribution_matrix(n_bus, gen_bus):
    D = np.zeros((n_bus, len(gen_bus)))
    D[gen_bus, np.arange(len(gen_bus))] = 1.0
    return D


def _validate_network(case):
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate bus ids")
    if not case.buses:
        raise ValidationError("case has no buses")
    nb = len(case.buses)
    line_ids = [ln.id for ln in case.lines]
    if len(set(line_ids)) != len(line_ids):
        raise ValidationError("duplicate line ids")
    gen_ids = [g.id for g in case.generators]
    if len(set(gen_ids)) != len(gen_ids):
        raise ValidationError("duplicate generator ids")
    for ln in case.lines:
        if not (0 <= ln.from_bus < nb and 0 <= ln.to_bus < nb):
            raise ValidationError(f"line {ln.id} references an unknown bus")
        if ln.from_bus == ln.to_bus:
            raise ValidationError(f"line {ln.id} is a self-loop")
        if not ln.susceptance > 0:
            raise ValidationError(f"line {ln.id} has nonpositive susceptance")
        if not ln.flow_limit > 0:
            raise ValidationError(f"line {ln.id} has nonpositive flow limit")
    for g in case.generators:
        if not 0 <= g.bus < nb:
            raise ValidationError(f"generator {g.id} references an unknown bus")
        if g.p_min > g.p_max:
            raise ValidationError(f"generator {g.id} has p_min > p_max")
        if g.quad_cost < 0:
            raise ValidationError(f"generator {g.id} has negative quadratic cost")
    if nb > 1:
        rows = [ln.from_bus for ln in case.lines]
        cols = [ln.to_bus for ln in case.lines]
        graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nb, nb))
        n_comp, _ = connected_components(graph, directed=False)
        if n_comp != 1:
            raise ValidationError(f"network is disconnected ({n_comp} islands)")


# -- commitment ---------------------------------------------------------------

@dataclass(frozen=True)
class Commitment:
    """Generator ids that stay free, and fixed outputs (MW) of the rest."""

    free: tuple
    committed: dict = field(default_factory=dict)

    @classmethod
    def all_free(cls, case):
        return cls(free=tuple(g.id for g in case.generators), committed={})

    def to_json(self):
        committed = {str(k): v for k, v in sorted(self.committed.items())}
        return json.dumps({"free": sorted(self.free), "committed": committed},
                          indent=1)


def parse_commitment(text):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.msg) from None
    if not isinstance(raw, dict) or "free" not in raw:
        raise ParseError(1, "commitment file needs a 'free' list")
    try:
        free = tuple(int(g) for g in raw["free"])
        committed = {int(k): float(v) for k, v in raw.get("committed", {}).items()}
    except (TypeError, ValueError) as exc:
        raise ParseError(1, f"bad commitment entry: {exc}") from None
    return Commitment(free=free, committed=committed)


@dataclass(frozen=True)
class ResidualCase:
    """A network restricted to its free generators.

    Committed generators are folded into ``loads`` as negative load at their
    buses. Attribute names mirror :class:`NetworkCase` so downstream code can
    treat both alike.
    """

    network: NetworkCase
    free_index: tuple
    committed_output: tuple  # (generator index, fixed output p.u.) pairs

    @property
    def buses(self):
        return self.network.buses

    @property
    def lines(self):
        return self.network.lines

    @property
    def base_mva(self):
        return self.network.base_mva

    @property
    def n_bus(self):
        return self.network.n_bus

    @property
    def n_line(self):
        return self.network.n_line

    @property
    def n_gen(self):
        return len(self.free_index)

    @cached_property
    def generators(self):
        return tuple(self.network.generators[i] for i in self.free_index)

    @cached_property
    def gen_bus(self):
        return np.array([g.bus for g in self.generators], dtype=int)

    @cached_property
    def gen_map(self):
        return _distribution_matrix(self.n_bus, self.gen_bus)

    @cached_property
    def quad_costs(self):
        return np.array([g.quad_cost for g in self.generators], dtype=float)

    @cached_property
    def lin_costs(self):
        return np.array([g.lin_cost for g in self.generators], dtype=float)

    @cached_property
    def p_min(self):
        return np.array([g.p_min for g in self.generators], dtype=float)

    @cached_property
    def p_max(self):
        return np.array([g.p_max for g in self.generators], dtype=float)

    @property
    def susceptance(self):
        return self.network.susceptance

    @property
    def flow_limits(self):
        return self.network.flow_limits

    @property
    def gross_loads(self):
        return self.network.loads

    @cached_property
    def committed_injection(self):
        inj = np.zeros(self.n_bus)
        for gi, out in self.committed_output:
            inj[self.network.generators[gi].bus] += out
        return inj

    @cached_property
    def loads(self):
        return self.residual_loads(self.gross_loads)

    def residual_loads(self, gross):
        """Residual load for an arbitrary gross load vector (p.u.)."""
        return np.asarray(gross, dtype=float) - self.committed_injection

    @cached_property
    def fingerprint(self):
        payload = {
            "case": json.loads(serialize_case(self.network)),
            "free": [self.network.generators[i].id for i in self.free_index],
            "committed": [[self.network.generators[i].id, repr(out)]
                          for i, out in self.committed_output],
        }
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def reduce_commitment(case, config):
    """Fold committed generators into loads and keep the free ones."""
    by_id = {g.id: i for i, g in enumerate(case.generators)}
    free = set(config.free)
    committed = dict(config.committed)
    unknown = (free | set(committed)) - set(by_id)
    if unknown:
        raise ValidationError(f"unknown generator ids in commitment: {sorted(unknown)}")
    if free & set(committed):
        raise ValidationError(f"generators both free and committed: {sorted(free & set(committed))}")
    missing = set(by_id) - free - set(committed)
    if missing:
        raise ValidationError(f"generators without a commitment status: {sorted(missing)}")
    if not free:
        raise EmptyFreeSet("no free generator left after commitment")

    fixed = []
    for gid in sorted(committed, key=by_id.get):
        gi = by_id[gid]
        g = case.generators[gi]
        out = committed[gid] / case.base_mva
        tol = 1e-9 * max(1.0, abs(out))
        if out < g.p_min - tol or out > g.p_max + tol:
            raise BoundsError(f"generator {gid} committed at {committed[gid]} MW "
                              "outside its limits")
        fixed.append((gi, out))
    free_index = []
    for gid in sorted(free, key=by_id.get):
        g = case.generators[by_id[gid]]
        if not g.quad_cost > 0:
            raise ValidationError(f"free generator {gid} needs a positive quadratic cost")
        free_index.append(by_id[gid])
    return ResidualCase(network=case, free_index=tuple(free_index),
                        committed_output=tuple(fixed))


# -- native JSON format -------------------------------------------------------

def _limit_from_mw(value, base, what):
    if value is None:
        return math.inf
    value = float(value)
    if not value > 0:
        raise ValidationError(f"{what}: nonpositive flow limit {value}")
    return value / base


def _bound_from_mw(value, base, default):
    return default if value is None else float(value) / base


def _mw(value, base):
    return None if math.isinf(value) else value * base


def _parse_native(text):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.lineno, exc.msg) from None
    try:
        base = float(raw.get("base_mva", 100.0))
        buses = [Bus(id=int(b["id"]), load=float(b.get("load", 0.0)) / base)
                 for b in raw["buses"]]
        index = {}
        for i, b in enumerate(buses):
            if b.id in index:
                raise ValidationError(f"duplicate bus id {b.id}")
            index[b.id] = i

        def bus_of(bid, what):
            if int(bid) not in index:
                raise ValidationError(f"{what} references unknown bus {bid}")
            return index[int(bid)]

        lines = [Line(id=int(ln["id"]),
                      from_bus=bus_of(ln["from"], f"line {ln['id']}"),
                      to_bus=bus_of(ln["to"], f"line {ln['id']}"),
                      susceptance=float(ln["b"]),
                      flow_limit=_limit_from_mw(ln.get("fmax"), base, f"line {ln['id']}"))
                 for ln in raw.get("lines", [])]
        gens = [Generator(id=int(g["id"]),
                          bus=bus_of(g["bus"], f"generator {g['id']}"),
                          quad_cost=float(g["q"]) * base ** 2,
                          lin_cost=float(g["c"]) * base,
                          p_min=_bound_from_mw(g.get("pmin"), base, -math.inf),
                          p_max=_bound_from_mw(g.get("pmax"), base, math.inf))
                for g in raw.get("generators", [])]
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ParseError(0, f"malformed case structure: {exc!r}") from None
    return NetworkCase(buses=buses, lines=lines, generators=gens, base_mva=base)


def serialize_case(case):
    """Write a case in the native JSON format (MW and $/MW units)."""
    base = case.base_mva
    ids = [b.id for b in case.buses]
    raw = {
        "base_mva": base,
        "buses": [{"id": b.id, "load": b.load * base} for b in case.buses],
        "lines": [{"id": ln.id, "from": ids[ln.from_bus], "to": ids[ln.to_bus],
                   "b": ln.susceptance, "fmax": _mw(ln.flow_limit, base)}
                  for ln in case.lines],
        "generators": [{"id": g.id, "bus": ids[g.bus], "q": g.quad_cost / base ** 2,
                        "c": g.lin_cost / base, "pmin": _mw(g.p_min, base),
                        "pmax": _mw(g.p_max, base)}
                       for g in case.generators],
    }
    return json.dumps(raw, indent=1)


# -- MATPOWER subset ----------------------------------------------------------

_TABLES = {"bus", "gen", "branch", "gencost"}
_ASSIGN = re.compile(r"^\s*mpc\.(\w+)\s*=\s*(.*)$")


def _matpower_tables(text):
    tables, scalars = {}, {}
    current, rows, pending = None, [], ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        if current is None:
            if line.startswith("function"):
                continue
            m = _ASSIGN.match(line)
            if not m:
                raise ParseError(lineno, f"unexpected statement {line!r}")
            name, rest = m.group(1), m.group(2).strip()
            if name in _TABLES:
                if not rest.startswith("["):
                    raise ParseError(lineno, f"table {name} must start with '['")
                if name in tables:
                    raise ParseError(lineno, f"table {name} defined twice")
                current, rows, pending = name, [], rest[1:]
            elif name == "baseMVA":
                try:
                    scalars[name] = float(rest.rstrip(";"))
                except ValueError:
                    raise ParseError(lineno, f"bad baseMVA {rest!r}") from None
                continue
            elif name == "version":
                continue
            else:
                raise ParseError(lineno, f"unsupported field mpc.{name}")
        else:
            pending = line
        closed = "]" in pending
        body = pending.split("]", 1)[0]
        for chunk in body.split(";"):
            tokens = chunk.replace(",", " ").split()
            if not tokens:
                continue
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise ParseError(lineno, f"non-numeric entry in table {current}") from None
        if closed:
            widths = {len(r) for r in rows}
            if len(widths) > 1:
                raise ParseError(lineno, f"ragged rows in table {current}")
            tables[current] = np.array(rows, dtype=float)
            current = None
    if current is not None:
        raise ParseError(lineno, f"unterminated table {current}")
    for name in ("bus", "gen", "branch", "gencost"):
        if name not in tables:
            raise ParseError(0, f"missing table mpc.{name}")
    return tables, scalars.get("baseMVA", 100.0)


def _parse_matpower(text):
    tables, base = _matpower_tables(text)
    bus, gen, branch, cost = (tables[k] for k in ("bus", "gen", "branch", "gencost"))
    if bus.shape[1] < 3 or gen.shape[1] < 10 or branch.shape[1] < 6 or cost.shape[1] < 4:
        raise ParseError(0, "table has too few columns")
    if len(cost) < len(gen):
        raise ParseError(0, "gencost has fewer rows than gen")

    buses = [Bus(id=int(r[0]), load=r[2] / base) for r in bus]
    index = {}
    for i, b in enumerate(buses):
        if b.id in index:
            raise ValidationError(f"duplicate bus id {b.id}")
        index[b.id] = i

    def bus_of(bid, what):
        if int(bid) not in index:
            raise ValidationError(f"{what} references unknown bus {int(bid)}")
        return index[int(bid)]

    lines = []
    for k, r in enumerate(branch, start=1):
        if branch.shape[1] > 10 and r[10] <= 0:
            continue
        if r[3] == 0:
            raise ValidationError(f"branch {k} has zero reactance")
        limit = math.inf if r[5] == 0 else r[5] / base
        if limit <= 0:
            raise ValidationError(f"branch {k} has negative rating")
        lines.append(Line(id=k, from_bus=bus_of(r[0], f"branch {k}"),
                          to_bus=bus_of(r[1], f"branch {k}"),
                          susceptance=1.0 / r[3], flow_limit=limit))
    gens = []
    for g, (r, c) in enumerate(zip(gen, cost[: len(gen)]), start=1):
        if r[7] <= 0:
            continue
        if int(c[0]) != 2:
            raise ParseError(0, f"gencost row {g}: only polynomial costs are supported")
        n = int(c[3])
        if n > 3 or len(c) < 4 + n:
            raise ParseError(0, f"gencost row {g}: polynomial degree above 2")
        coef = [0.0] * (3 - n) + list(c[4: 4 + n])
        gens.append(Generator(id=g, bus=bus_of(r[0], f"generator {g}"),
                              quad_cost=coef[0] * base ** 2, lin_cost=coef[1] * base,
                              p_min=r[9] / base, p_max=r[8] / base))
    return NetworkCase(buses=buses, lines=lines, generators=gens, base_mva=base)


def parse_case(text, format="native"):
    """Parse case-file contents. ``format`` is ``"native"`` or ``"matpower"``."""
    if format == "native":
        return _parse_native(text)
    if format == "matpower":
        return _parse_matpower(text)
    raise ValueError(f"unknown case format {format!r}")


def load_case(path):
    path = Path(path)
    fmt = "matpower" if path.suffix == ".m" else "native"
    return parse_case(path.read_text(), format=fmt)


def load_commitment(path):
    return parse_commitment(Path(path).read_text())
