"""MATPOWER case ingestion, per-unit normalization and JSON exchange.

Parsing is split in two stages: :func:`parse_matpower` only extracts the
numeric matrices of a case script into a :class:`RawCase`, and
:func:`to_network` turns those rows into a validated, per-unit
:class:`NetworkCase`.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "CaseError",
    "MissingSection",
    "MalformedRow",
    "Disconnected",
    "NoSlack",
    "UnsupportedCost",
    "RawCase",
    "Bus",
    "Generator",
    "Branch",
    "NetworkCase",
    "parse_matpower",
    "to_network",
    "load_case",
    "bundled_cases",
    "network_to_json",
    "network_from_json",
]

# minimum column counts per matrix
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 13, "gencost": 4}
_REQUIRED = ("baseMVA", "bus", "gen", "branch")

_ASSIGN = re.compile(r"^\s*(?:mpc\.)?(baseMVA|bus|gen|branch|gencost)\s*=\s*(.*)$")


class CaseError(ValueError):
    """Base class for case ingestion failures."""


class MissingSection(CaseError):
    def __init__(self, name: str):
        super().__init__(f"case text has no '{name}' section")
        self.name = name


class MalformedRow(CaseError):
    def __init__(self, section: str, line: int, detail: str = ""):
        msg = f"malformed row in '{section}' at line {line}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.section = section
        self.line = line


class Disconnected(CaseError):
    def __init__(self, components: list[list[int]]):
        sizes = ", ".join(str(len(c)) for c in components)
        super().__init__(f"in-service network has {len(components)} islands (sizes {sizes})")
        self.components = components


class NoSlack(CaseError):
    def __init__(self):
        super().__init__("case has no reference (type 3) bus")


class UnsupportedCost(CaseError):
    pass


@dataclass(frozen=True)
class RawCase:
    """Numeric matrices of a MATPOWER case, untouched apart from parsing."""

    base_mva: float
    bus_rows: tuple[tuple[float, ...], ...]
    gen_rows: tuple[tuple[float, ...], ...]
    branch_rows: tuple[tuple[float, ...], ...]
    gencost_rows: tuple[tuple[float, ...], ...] = ()
    case_name: str = ""

    def __post_init__(self):
        if not self.base_mva > 0:
            raise CaseError(f"baseMVA must be positive, got {self.base_mva}")
        for name, rows in (("bus", self.bus_rows), ("gen", self.gen_rows),
                           ("branch", self.branch_rows)):
            for k, row in enumerate(rows):
                if len(row) < _MIN_COLS[name]:
                    raise MalformedRow(name, k + 1, f"{len(row)} columns")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str  # "load" | "generator" | "slack"
    p_load: float
    q_load: float
    g_shunt: float
    b_shunt: float
    v_min: float
    v_max: float
    v_init: float = 1.0
    angle_init: float = 0.0  # rad


@dataclass(frozen=True)
class Generator:
    bus_id: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    v_set: float
    cost: tuple[float, float, float]  # (c2, c1, c0), $/h with power in p.u.
    p_init: float = 0.0
    q_init: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float
    tap_ratio: float = 1.0
    phase_shift: float = 0.0  # rad
    status: int = 1
    rate_a: float = 0.0  # p.u., 0 means unlimited


@dataclass(frozen=True)
class NetworkCase:
    """Per-unit network data.

    Bus order follows the case file. ``load_bus_index`` and
    ``gen_bus_index`` hold bus ids; the position helpers translate them to
    row indices of bus-ordered arrays.
    """

    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    generators: tuple[Generator, ...]
    branches: tuple[Branch, ...]

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise CaseError(f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        for g in self.generators:
            if g.bus_id not in known:
                raise CaseError(f"generator at unknown bus {g.bus_id}")
        for b in self.buses:
            if b.v_min > b.v_max:
                raise CaseError(f"bus {b.id}: v_min > v_max")
        if not any(b.kind == "slack" for b in self.buses):
            raise NoSlack()
        components = _islands(self)
        if len(components) > 1:
            raise Disconnected(components)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def bus_ids(self) -> np.ndarray:
        return np.array([b.id for b in self.buses], dtype=int)

    @cached_property
    def position(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @cached_property
    def load_bus_index(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.kind == "load")

    @cached_property
    def gen_bus_index(self) -> tuple[int, ...]:
        return tuple(b.id for b in self.buses if b.kind != "load")

    @cached_property
    def load_pos(self) -> np.ndarray:
        return np.array([self.position[i] for i in self.load_bus_index], dtype=int)

    @cached_property
    def gen_pos(self) -> np.ndarray:
        return np.array([self.position[i] for i in self.gen_bus_index], dtype=int)

    @cached_property
    def slack_pos(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.kind == "slack")

    @cached_property
    def slack_positions(self) -> np.ndarray:
        return np.array([k for k, b in enumerate(self.buses) if b.kind == "slack"], dtype=int)

    @cached_property
    def gen_bus_pos(self) -> np.ndarray:
        """Bus position of every generator."""
        return np.array([self.position[g.bus_id] for g in self.generators], dtype=int)

    @cached_property
    def p_load(self) -> np.ndarray:
        return np.array([b.p_load for b in self.buses])

    @cached_property
    def q_load(self) -> np.ndarray:
        return np.array([b.q_load for b in self.buses])

    @cached_property
    def v_min(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses])

    @cached_property
    def v_max(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses])

    def load_injections(self) -> np.ndarray:
        """Complex injections S_j = -(P_D + iQ_D) at load buses, in load_bus_index order."""
        k = self.load_pos
        return -(self.p_load[k] + 1j * self.q_load[k])

    def bus_v_set(self) -> np.ndarray:
        """Regulated magnitude per bus (first generator at the bus), 1.0 where unset."""
        v = np.ones(self.n_bus)
        seen = set()
        for g, pos in zip(self.generators, self.gen_bus_pos):
            if pos not in seen:
                v[pos] = g.v_set
                seen.add(pos)
        return v

    def generation_cost(self, pg: np.ndarray) -> float:
        pg = np.asarray(pg, dtype=float)
        c = np.array([g.cost for g in self.generators]).reshape(-1, 3)
        return float(np.sum(c[:, 0] * pg**2 + c[:, 1] * pg + c[:, 2]))

    def scaled(self, factor: float) -> "NetworkCase":
        """Copy with all bus loads multiplied by ``factor``."""
        buses = tuple(
            Bus(**{**asdict(b), "p_load": b.p_load * factor, "q_load": b.q_load * factor})
            for b in self.buses
        )
        return NetworkCase(self.name, self.base_mva, buses, self.generators, self.branches)


def _islands(case: NetworkCase) -> list[list[int]]:
    n = len(case.buses)
    pos = {b.id: k for k, b in enumerate(case.buses)}
    live = [br for br in case.branches if br.status]
    rows = [pos[br.from_bus] for br in live]
    cols = [pos[br.to_bus] for br in live]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    if count == 1:
        return [[b.id for b in case.buses]]
    return [[case.buses[k].id for k in np.flatnonzero(labels == c)] for c in range(count)]


# ---------------------------------------------------------------------------
# parsing


def _parse_number(tok: str) -> float:
    return float(tok)  # accepts Inf, -Inf, NaN as MATLAB writes them


def parse_matpower(text: str, case_name: str = "") -> RawCase:
    """Extract baseMVA, bus, gen, branch and (optional) gencost from a case script."""
    sections: dict[str, object] = {}
    lines = text.splitlines()
    k = 0
    while k < len(lines):
        line = lines[k].split("%", 1)[0]
        m = _ASSIGN.match(line)
        if not m:
            if not case_name:
                fm = re.match(r"^\s*function\s+(?:\w+\s*=\s*)?(\w+)", line)
                if fm:
                    case_name = fm.group(1)
            k += 1
            continue
        name, rest = m.group(1), m.group(2)
        if name == "baseMVA":
            value = rest.strip().rstrip(";").strip()
            try:
                sections[name] = _parse_number(value)
            except ValueError:
                raise MalformedRow(name, k + 1, repr(value)) from None
            k += 1
            continue
        if "[" not in rest:
            raise MalformedRow(name, k + 1, "expected a matrix")
        rows: list[tuple[float, ...]] = []
        body = rest.split("[", 1)[1]
        lineno = k + 1
        while True:
            closed = "]" in body
            if closed:
                body = body.split("]", 1)[0]
            for piece in body.replace(",", " ").split(";"):
                toks = piece.split()
                if not toks or toks == ["..."]:
                    continue
                try:
                    row = tuple(_parse_number(t) for t in toks if t != "...")
                except ValueError as exc:
                    raise MalformedRow(name, lineno, str(exc)) from None
                if len(row) < _MIN_COLS[name]:
                    raise MalformedRow(name, lineno, f"{len(row)} columns, need {_MIN_COLS[name]}")
                rows.append(row)
            if closed:
                break
            k += 1
            if k >= len(lines):
                raise MalformedRow(name, lineno, "unterminated matrix")
            body = lines[k].split("%", 1)[0]
            lineno = k + 1
        sections[name] = tuple(rows)
        k += 1

    for name in _REQUIRED:
        if name not in sections:
            raise MissingSection(name)
    return RawCase(
        base_mva=float(sections["baseMVA"]),
        bus_rows=sections["bus"],
        gen_rows=sections["gen"],
        branch_rows=sections["branch"],
        gencost_rows=sections.get("gencost", ()),
        case_name=case_name,
    )


# ---------------------------------------------------------------------------
# per-unit conversion


def _poly_cost(row: tuple[float, ...], base: float, line: int) -> tuple[float, float, float]:
    model = int(row[0])
    if model == 1:
        raise UnsupportedCost(f"gencost row {line}: piecewise-linear costs are not supported")
    if model != 2:
        raise UnsupportedCost(f"gencost row {line}: unknown cost model {model}")
    ncost = int(row[3])
    coeffs = list(row[4:4 + ncost])
    if len(coeffs) < ncost:
        raise MalformedRow("gencost", line, f"NCOST={ncost} but {len(coeffs)} coefficients")
    higher, tail = coeffs[:-3], coeffs[-3:]
    if any(c != 0 for c in higher):
        raise UnsupportedCost(f"gencost row {line}: polynomial degree above 2")
    tail = [0.0] * (3 - len(tail)) + tail
    c2, c1, c0 = tail
    if c2 < 0:
        raise UnsupportedCost(f"gencost row {line}: negative quadratic coefficient")
    return (c2 * base**2, c1 * base, c0)


def to_network(raw: RawCase) -> NetworkCase:
    """Convert a :class:`RawCase` to per-unit :class:`NetworkCase`.

    Out-of-service generators and branches and isolated (type 4) buses are
    dropped. A PV bus left without an in-service generator is demoted to a
    load bus; a PQ bus that hosts an in-service generator is promoted.
    """
    base = raw.base_mva
    kinds = {1: "load", 2: "generator", 3: "slack"}

    gencost = raw.gencost_rows
    gens: list[Generator] = []
    live_gen_buses: set[int] = set()
    for k, row in enumerate(raw.gen_rows):
        if row[7] <= 0:
            continue
        if gencost:
            if k >= len(gencost):
                raise MalformedRow("gencost", k + 1, "fewer cost rows than generators")
            cost = _poly_cost(gencost[k], base, k + 1)
        else:
            cost = (0.0, 1.0, 0.0)
        bus_id = int(row[0])
        gens.append(Generator(
            bus_id=bus_id,
            p_min=row[9] / base,
            p_max=row[8] / base,
            q_min=row[4] / base,
            q_max=row[3] / base,
            v_set=row[5],
            cost=cost,
            p_init=row[1] / base,
            q_init=row[2] / base,
        ))
        live_gen_buses.add(bus_id)

    buses: list[Bus] = []
    for row in raw.bus_rows:
        btype = int(row[1])
        if btype == 4:
            continue
        if btype not in kinds:
            raise MalformedRow("bus", len(buses) + 1, f"unknown bus type {btype}")
        bus_id = int(row[0])
        kind = kinds[btype]
        if kind == "generator" and bus_id not in live_gen_buses:
            kind = "load"
        elif kind == "load" and bus_id in live_gen_buses:
            kind = "generator"
        buses.append(Bus(
            id=bus_id,
            kind=kind,
            p_load=row[2] / base,
            q_load=row[3] / base,
            g_shunt=row[4] / base,
            b_shunt=row[5] / base,
            v_min=row[12],
            v_max=row[11],
            v_init=row[7],
            angle_init=math.radians(row[8]),
        ))
    if not any(b.kind == "slack" for b in buses):
        raise NoSlack()
    present = {b.id for b in buses}
    gens = [g for g in gens if g.bus_id in present]

    branches: list[Branch] = []
    for row in raw.branch_rows:
        status = int(row[10])
        f, t = int(row[0]), int(row[1])
        if status <= 0 or f not in present or t not in present:
            continue
        tap = row[8] if row[8] != 0 else 1.0
        branches.append(Branch(
            from_bus=f,
            to_bus=t,
            r=row[2],
            x=row[3],
            b_charging=row[4],
            tap_ratio=tap,
            phase_shift=math.radians(row[9]),
            status=1,
            rate_a=row[5] / base,
        ))
    return NetworkCase(raw.case_name, base, tuple(buses), tuple(gens), tuple(branches))


# ---------------------------------------------------------------------------
# convenience loaders and JSON exchange


def bundled_cases() -> list[str]:
    """Names of the MATPOWER cases shipped with the package."""
    root = resources.files("vscopf") / "cases"
    return sorted(p.name[:-2] for p in root.iterdir() if p.name.endswith(".m"))


def load_case(name_or_path: str | Path) -> NetworkCase:
    """Load a case from a file path or a bundled case name such as ``"case30"``."""
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return network_from_json(path.read_text())
    if path.exists():
        text = path.read_text()
        name = path.stem
    else:
        res = resources.files("vscopf") / "cases" / f"{path.stem}.m"
        if not res.is_file():
            raise FileNotFoundError(f"no case file or bundled case named {name_or_path!r}")
        text = res.read_text()
        name = path.stem
    return to_network(parse_matpower(text, case_name=name))


def network_to_json(case: NetworkCase, indent: int | None = 1) -> str:
    doc = {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [asdict(b) for b in case.buses],
        "generators": [asdict(g) for g in case.generators],
        "branches": [asdict(br) for br in case.branches],
        "load_bus_index": list(case.load_bus_index),
        "gen_bus_index": list(case.gen_bus_index),
    }
    return json.dumps(doc, indent=indent)


def network_from_json(text: str) -> NetworkCase:
    doc = json.loads(text)
    buses = tuple(Bus(**b) for b in doc["buses"])
    gens = tuple(Generator(**{**g, "cost": tuple(g["cost"])}) for g in doc["generators"])
    branches = tuple(Branch(**br) for br in doc["branches"])
    return NetworkCase(doc["name"], doc["base_mva"], buses, gens, branches)
