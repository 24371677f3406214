"""Grid case data model, plaintext case format, and case modifications.

The case file is a whitespace-separated table with three sections::

    # comment
    BASEMVA 100
    BUS
    # id  load_MW  ref_flag
    1     100.0    0
    BRANCH
    # id  from  to  reactance_pu  rating_MW
    1     1     2   0.2           30
    GEN
    # id  bus  cost  pmin_MW  pmax_MW
    1     1    50    0        150

``BASEMVA`` is optional (default 100).
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "Bus",
    "Branch",
    "Generator",
    "GridCase",
    "CaseFormatError",
    "Violation",
    "ValidationReport",
    "parse_case",
    "read_case",
    "serialize_case",
    "apply_modifications",
    "validate",
    "parse_matpower",
    "synthetic_case",
    "flow_based_ratings",
]


class CaseFormatError(ValueError):
    """Raised when case text cannot be turned into a GridCase."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Bus:
    id: int
    load: float
    is_reference: bool = False


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    rating: float


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    cost: float
    p_min: float
    p_max: float


@dataclass(frozen=True)
class GridCase:
    """Immutable physical system: buses, branches and generators.

    External ids are kept on the records; array views (``loads``,
    ``from_index``...) use dense 0-based positions in list order.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    base_mva: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "generators", tuple(self.generators))

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> dict[int, int]:
        return {br.id: k for k, br in enumerate(self.branches)}

    @cached_property
    def loads(self) -> np.ndarray:
        arr = np.array([b.load for b in self.buses], dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def ratings(self) -> np.ndarray:
        arr = np.array([br.rating for br in self.branches], dtype=float)
        arr.flags.writeable = False
        return arr

    @cached_property
    def from_index(self) -> np.ndarray:
        return np.array([self.bus_index[br.from_bus] for br in self.branches], dtype=int)

    @cached_property
    def to_index(self) -> np.ndarray:
        return np.array([self.bus_index[br.to_bus] for br in self.branches], dtype=int)

    @cached_property
    def gen_bus_index(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    @property
    def reference_bus(self) -> int:
        refs = [b.id for b in self.buses if b.is_reference]
        if len(refs) != 1:
            raise ValueError(f"case has {len(refs)} reference buses, expected exactly one")
        return refs[0]

    def branch_position(self, branch) -> int:
        """Resolve a branch id (int) or a ``"from-to"`` label to its row position."""
        if isinstance(branch, str):
            label = branch.strip()
            if "-" in label:
                a, b = (int(s) for s in label.split("-", 1))
                for k, br in enumerate(self.branches):
                    if {br.from_bus, br.to_bus} == {a, b}:
                        return k
                raise KeyError(f"no branch between buses {a} and {b}")
            branch = int(label)
        try:
            return self.branch_index[int(branch)]
        except KeyError:
            raise KeyError(f"unknown branch id {branch}") from None

    def with_loads(self, loads) -> GridCase:
        loads = np.asarray(loads, dtype=float)
        if loads.shape != (self.n_buses,):
            raise ValueError(f"expected {self.n_buses} loads, got shape {loads.shape}")
        buses = tuple(replace(b, load=float(v)) for b, v in zip(self.buses, loads))
        return replace(self, buses=buses)

    def with_reference(self, bus_id: int) -> GridCase:
        if bus_id not in self.bus_index:
            raise KeyError(f"unknown bus id {bus_id}")
        buses = tuple(replace(b, is_reference=(b.id == bus_id)) for b in self.buses)
        return replace(self, buses=buses)

    def with_rating(self, branch, rating: float) -> GridCase:
        k = self.branch_position(branch)
        branches = list(self.branches)
        branches[k] = replace(branches[k], rating=float(rating))
        return replace(self, branches=tuple(branches))


# ---------------------------------------------------------------------------
# plaintext format

_SECTIONS = {"BUS": 3, "BRANCH": 5, "GEN": 5}


def parse_case(text: str) -> GridCase:
    """Parse the plaintext case format into a :class:`GridCase`."""
    rows = {name: [] for name in _SECTIONS}
    section = None
    base_mva = 100.0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head = line.split()
        key = head[0].upper()
        if key in _SECTIONS and len(head) == 1:
            section = key
            continue
        if key == "BASEMVA":
            if len(head) != 2:
                raise CaseFormatError("BASEMVA takes one value", lineno)
            base_mva = _number(head[1], lineno)
            continue
        if section is None:
            raise CaseFormatError(f"data outside of a section: {line!r}", lineno)
        if len(head) != _SECTIONS[section]:
            raise CaseFormatError(
                f"{section} row needs {_SECTIONS[section]} columns, got {len(head)}", lineno
            )
        rows[section].append((lineno, head))

    buses = []
    seen = {}
    for lineno, cols in rows["BUS"]:
        bid = _integer(cols[0], lineno)
        if bid in seen:
            raise CaseFormatError(f"duplicate bus id {bid} (first on line {seen[bid]})", lineno)
        seen[bid] = lineno
        flag = _integer(cols[2], lineno)
        if flag not in (0, 1):
            raise CaseFormatError(f"ref_flag must be 0 or 1, got {flag}", lineno)
        buses.append(Bus(bid, _number(cols[1], lineno), bool(flag)))
    if not buses:
        raise CaseFormatError("case has no BUS rows")
    n_ref = sum(b.is_reference for b in buses)
    if n_ref != 1:
        raise CaseFormatError(f"exactly one reference bus required, found {n_ref}")

    branches = []
    branch_ids = set()
    for lineno, cols in rows["BRANCH"]:
        brid = _integer(cols[0], lineno)
        if brid in branch_ids:
            raise CaseFormatError(f"duplicate branch id {brid}", lineno)
        branch_ids.add(brid)
        f, t = _integer(cols[1], lineno), _integer(cols[2], lineno)
        for b in (f, t):
            if b not in seen:
                raise CaseFormatError(f"branch {brid} references unknown bus {b}", lineno)
        if f == t:
            raise CaseFormatError(f"branch {brid} connects bus {f} to itself", lineno)
        x = _number(cols[3], lineno)
        rating = _number(cols[4], lineno)
        if x <= 0:
            raise CaseFormatError(f"branch {brid} reactance must be positive", lineno)
        if rating <= 0:
            raise CaseFormatError(f"branch {brid} rating must be positive", lineno)
        branches.append(Branch(brid, f, t, x, rating))

    generators = []
    gen_ids = set()
    for lineno, cols in rows["GEN"]:
        gid = _integer(cols[0], lineno)
        if gid in gen_ids:
            raise CaseFormatError(f"duplicate generator id {gid}", lineno)
        gen_ids.add(gid)
        bus = _integer(cols[1], lineno)
        if bus not in seen:
            raise CaseFormatError(f"generator {gid} references unknown bus {bus}", lineno)
        pmin, pmax = _number(cols[3], lineno), _number(cols[4], lineno)
        if not 0 <= pmin <= pmax:
            raise CaseFormatError(f"generator {gid} needs 0 <= pmin <= pmax", lineno)
        generators.append(Generator(gid, bus, _number(cols[2], lineno), pmin, pmax))

    return GridCase(tuple(buses), tuple(branches), tuple(generators), base_mva)


def read_case(path) -> GridCase:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


def serialize_case(case: GridCase) -> str:
    out = [f"BASEMVA {case.base_mva!r}", "BUS", "# id load_MW ref_flag"]
    out += [f"{b.id} {b.load!r} {int(b.is_reference)}" for b in case.buses]
    out += ["BRANCH", "# id from to reactance_pu rating_MW"]
    out += [
        f"{br.id} {br.from_bus} {br.to_bus} {br.reactance!r} {br.rating!r}"
        for br in case.branches
    ]
    out += ["GEN", "# id bus cost pmin_MW pmax_MW"]
    out += [f"{g.id} {g.bus} {g.cost!r} {g.p_min!r} {g.p_max!r}" for g in case.generators]
    return "\n".join(out) + "\n"


def _number(tok, lineno):
    try:
        val = float(tok)
    except ValueError:
        raise CaseFormatError(f"expected a number, got {tok!r}", lineno) from None
    if not math.isfinite(val):
        raise CaseFormatError(f"non-finite value {tok!r}", lineno)
    return val


def _integer(tok, lineno):
    try:
        return int(tok)
    except ValueError:
        raise CaseFormatError(f"expected an integer id, got {tok!r}", lineno) from None


# ---------------------------------------------------------------------------
# modifications and validation


def apply_modifications(
    case: GridCase, rating_scale: float = 1.0, zero_negative_loads: bool = True
) -> GridCase:
    """Scale every branch rating and optionally zero out negative loads."""
    if not rating_scale > 0:
        raise ValueError("rating_scale must be positive")
    branches = case.branches
    if rating_scale != 1.0:
        branches = tuple(replace(br, rating=br.rating * rating_scale) for br in branches)
    buses = case.buses
    if zero_negative_loads:
        buses = tuple(replace(b, load=0.0) if b.load < 0 else b for b in buses)
    return replace(case, buses=buses, branches=branches)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    buses: tuple[int, ...] = ()


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    def __bool__(self):
        # truthy when the case is valid
        return not self.violations

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]


def validate(case: GridCase) -> ValidationReport:
    """Collect violations of the GridCase invariants. Never raises."""
    out = []
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        out.append(Violation("duplicate-bus", "bus ids are not unique"))
    refs = [b.id for b in case.buses if b.is_reference]
    if len(refs) != 1:
        out.append(Violation("reference", f"expected one reference bus, found {len(refs)}", tuple(refs)))
    neg = tuple(b.id for b in case.buses if b.load < 0)
    if neg:
        out.append(Violation("negative-load", f"{len(neg)} bus(es) with negative load", neg))

    known = set(ids)
    for br in case.branches:
        missing = [b for b in (br.from_bus, br.to_bus) if b not in known]
        if missing:
            out.append(Violation("dangling", f"branch {br.id} references unknown bus {missing[0]}"))
        if br.from_bus == br.to_bus:
            out.append(Violation("self-loop", f"branch {br.id} connects bus {br.from_bus} to itself"))
        if not br.reactance > 0:
            out.append(Violation("reactance", f"branch {br.id} reactance must be positive"))
        if not br.rating > 0:
            out.append(Violation("rating", f"branch {br.id} rating must be positive"))
    for g in case.generators:
        if g.bus not in known:
            out.append(Violation("dangling", f"generator {g.id} references unknown bus {g.bus}"))
        if not 0 <= g.p_min <= g.p_max:
            out.append(Violation("generator-bounds", f"generator {g.id} needs 0 <= pmin <= pmax"))

    if case.n_buses and len(case.bus_index) == case.n_buses:
        n_comp, labels = _islands(case)
        if n_comp > 1:
            sizes = np.bincount(labels)
            main = int(np.argmax(sizes))
            stray = tuple(case.buses[i].id for i in range(case.n_buses) if labels[i] != main)
            out.append(
                Violation("disconnected", f"network has {n_comp} islands; buses {list(stray)} are cut off", stray)
            )

    total_load = float(sum(max(b.load, 0.0) for b in case.buses))
    capacity = float(sum(g.p_max for g in case.generators))
    if capacity < total_load:
        out.append(
            Violation("capacity-shortfall", f"total load {total_load:g} MW exceeds capacity {capacity:g} MW")
        )
    return ValidationReport(tuple(out))


def _islands(case):
    n = case.n_buses
    idx = case.bus_index
    known = [br for br in case.branches if br.from_bus in idx and br.to_bus in idx]
    f = [idx[br.from_bus] for br in known]
    t = [idx[br.to_bus] for br in known]
    adj = coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n))
    return connected_components(adj, directed=False)


# ---------------------------------------------------------------------------
# MATPOWER ingestion

_MPC_FIELD = re.compile(r"mpc\.(\w+)\s*=\s*(\[.*?\]|[^;]+);", re.S)


def _mpc_matrix(body: str) -> np.ndarray:
    body = body.strip()[1:-1]
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.strip()
        if chunk:
            rows.append([float(v) for v in chunk.replace(",", " ").split()])
    width = max(len(r) for r in rows)
    return np.array([r + [0.0] * (width - len(r)) for r in rows])


def parse_matpower(text: str, unlimited_rating: float = 9999.0) -> GridCase:
    """Convert a MATPOWER case (``mpc.bus``/``mpc.branch``/``mpc.gen`` tables).

    Out-of-service branches and generators are dropped. A zero ``RATE_A``
    means unlimited and is replaced by ``unlimited_rating``. Costs use the
    linear term of polynomial ``gencost`` rows (the slope of the first segment
    for piecewise-linear rows).
    """
    text = "\n".join(line.split("%", 1)[0] for line in text.splitlines())
    fields = {m.group(1): m.group(2) for m in _MPC_FIELD.finditer(text)}
    for need in ("bus", "branch", "gen"):
        if need not in fields:
            raise CaseFormatError(f"MATPOWER text has no mpc.{need} table")
    base_mva = float(fields.get("baseMVA", "100"))
    bus = _mpc_matrix(fields["bus"])
    branch = _mpc_matrix(fields["branch"])
    gen = _mpc_matrix(fields["gen"])
    gencost = _mpc_matrix(fields["gencost"]) if "gencost" in fields else None

    buses = tuple(Bus(int(r[0]), float(r[2]), int(r[1]) == 3) for r in bus)
    if sum(b.is_reference for b in buses) != 1:
        raise CaseFormatError("MATPOWER case must have exactly one type-3 bus")

    branches = []
    for k, r in enumerate(branch, start=1):
        if r.shape[0] > 10 and r[10] == 0:
            continue
        rate = float(r[5]) if r[5] > 0 else unlimited_rating
        x = float(r[3])
        if x <= 0:
            # DC model needs positive series reactance
            x = 1e-4
        branches.append(Branch(k, int(r[0]), int(r[1]), x, rate))

    generators = []
    for g, r in enumerate(gen, start=1):
        if r.shape[0] > 7 and r[7] <= 0:
            continue
        cost = 0.0
        if gencost is not None and g - 1 < len(gencost):
            cost = _linear_cost(gencost[g - 1])
        generators.append(Generator(g, int(r[0]), cost, max(float(r[9]), 0.0), max(float(r[8]), 0.0)))
    return GridCase(buses, tuple(branches), tuple(generators), base_mva)


def _linear_cost(row) -> float:
    model, n = int(row[0]), int(row[3])
    coeffs = row[4 : 4 + (2 * n if model == 1 else n)]
    if model == 2:
        # polynomial c_{n-1} ... c_0: linear term is second from the end
        return float(coeffs[-2]) if n >= 2 else 0.0
    pts = coeffs.reshape(-1, 2)
    if len(pts) < 2 or pts[1, 0] == pts[0, 0]:
        return 0.0
    return float((pts[1, 1] - pts[0, 1]) / (pts[1, 0] - pts[0, 0]))


# ---------------------------------------------------------------------------
# synthetic cases


def synthetic_case(
    n_buses: int,
    seed: int = 0,
    *,
    extra_edge_ratio: float = 0.4,
    gen_fraction: float = 0.25,
    load_range: tuple[float, float] = (10.0, 100.0),
    zero_load_fraction: float = 0.0,
    rating: float = 1e4,
) -> GridCase:
    """Random connected planar-ish grid for tests and scale experiments.

    Buses are scattered in the unit square, joined by a Euclidean minimum
    spanning tree plus short extra chords; reactance grows with length.
    Bus 1 is the reference. Generator capacity covers 1.6x the total load.
    """
    if n_buses < 2:
        raise ValueError("need at least two buses")
    rng = np.random.default_rng(seed)
    pts = rng.random((n_buses, 2))

    from scipy.sparse.csgraph import minimum_spanning_tree
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    k = min(n_buses - 1, 6)
    dist, nbr = tree.query(pts, k=k + 1)
    cand = {}
    for i in range(n_buses):
        for d, j in zip(dist[i, 1:], nbr[i, 1:]):
            a, b = (i, int(j)) if i < j else (int(j), i)
            cand[(a, b)] = float(d)
    # a kNN graph can be disconnected; chain the components by nearest pairs
    pairs = list(cand)
    n_comp, labels = connected_components(
        coo_matrix((np.ones(len(pairs)), tuple(zip(*pairs))), shape=(n_buses, n_buses)), directed=False
    )
    while n_comp > 1:
        a_idx = np.flatnonzero(labels == 0)
        b_idx = np.flatnonzero(labels != 0)
        d = np.linalg.norm(pts[a_idx, None, :] - pts[None, b_idx, :], axis=2)
        ia, ib = np.unravel_index(np.argmin(d), d.shape)
        a, b = sorted((int(a_idx[ia]), int(b_idx[ib])))
        cand[(a, b)] = float(d[ia, ib])
        pairs = list(cand)
        n_comp, labels = connected_components(
            coo_matrix((np.ones(len(pairs)), tuple(zip(*pairs))), shape=(n_buses, n_buses)), directed=False
        )

    pairs = sorted(cand)
    w = np.array([cand[p] for p in pairs]) + 1e-9
    r, c = zip(*pairs)
    mst = minimum_spanning_tree(coo_matrix((w, (r, c)), shape=(n_buses, n_buses))).tocoo()
    edges = {tuple(sorted((int(a), int(b)))) for a, b in zip(mst.row, mst.col)}
    rest = [p for p in pairs if p not in edges]
    n_extra = min(len(rest), int(round(extra_edge_ratio * n_buses)))
    if n_extra:
        for j in rng.choice(len(rest), size=n_extra, replace=False):
            edges.add(rest[j])
    edges = sorted(edges)

    loads = rng.uniform(*load_range, size=n_buses)
    if zero_load_fraction > 0:
        zero = rng.random(n_buses) < zero_load_fraction
        zero[0] = False
        loads[zero] = 0.0
    loads = np.round(loads, 3)

    buses = tuple(Bus(i + 1, float(loads[i]), i == 0) for i in range(n_buses))
    branches = []
    for k, (a, b) in enumerate(edges, start=1):
        length = float(np.linalg.norm(pts[a] - pts[b]))
        x = round(0.02 + 0.5 * length * rng.uniform(0.8, 1.2), 6)
        branches.append(Branch(k, a + 1, b + 1, x, float(rating)))

    n_gen = max(2, int(round(gen_fraction * n_buses)))
    gen_buses = np.sort(rng.choice(n_buses, size=min(n_gen, n_buses), replace=False))
    cap = 1.6 * loads.sum() / len(gen_buses)
    costs = np.round(rng.uniform(10.0, 100.0, size=len(gen_buses)), 2)
    gens = tuple(
        Generator(g + 1, int(b) + 1, float(costs[g]), 0.0, float(round(cap * rng.uniform(0.7, 1.3), 3)))
        for g, b in enumerate(gen_buses)
    )
    return GridCase(buses, tuple(branches), gens, 100.0)


def flow_based_ratings(
    case: GridCase,
    flows,
    seed: int = 0,
    *,
    margin_range: tuple[float, float] = (1.3, 2.5),
    bridge_margin: float = 3.0,
    floor_fraction: float = 0.3,
) -> GridCase:
    """Re-rate branches from a base-case flow vector.

    Meshed branches get ``|flow|`` times a random margin; bridges (radial
    branches, which cannot be relieved by redispatch) get ``bridge_margin``.
    No rating falls below ``floor_fraction`` of the largest base flow.
    """
    import networkx as nx

    flows = np.asarray(flows, dtype=float)
    if flows.shape != (case.n_branches,):
        raise ValueError("need one flow per branch")
    rng = np.random.default_rng(seed)
    g = nx.MultiGraph()
    g.add_edges_from((br.from_bus, br.to_bus) for br in case.branches)
    bridges = {frozenset(e) for e in nx.bridges(nx.Graph(g))} if g.number_of_edges() else set()
    # a bus pair joined by parallel branches is never a bridge
    counts = {}
    for br in case.branches:
        key = frozenset((br.from_bus, br.to_bus))
        counts[key] = counts.get(key, 0) + 1
    margins = rng.uniform(*margin_range, size=case.n_branches)
    floor = floor_fraction * float(np.max(np.abs(flows), initial=0.0))
    branches = []
    for br, f, m in zip(case.branches, flows, margins):
        key = frozenset((br.from_bus, br.to_bus))
        if key in bridges and counts[key] == 1:
            m = bridge_margin
        branches.append(replace(br, rating=float(max(m * abs(f), floor, 1e-3))))
    return replace(case, branches=tuple(branches))
