"""Road-network graphs: loading, validation, and synthetic grid generation.

A network of interconnected roads is a directed graph whose nodes are
unidirectional road elements located between consecutive junctions. Road ids
are contiguous: ``1..n_in`` are inlets, ``n_in+1..n_out_end`` are outlets and
``n_out_end+1..n_total`` are interior roads. An edge ``(i, j)`` means traffic
leaving road ``i`` may continue onto road ``j``. Only interior roads carry
state; boundary roads are where vehicles enter and leave.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridPlacementError, NetworkFormatError
from .seeding import TAG_GRID, keyed_rng

DEFAULT_VEHICLE_LENGTH_M = 4.5
DEFAULT_ROAD_LENGTH_M = 100.0
DEFAULT_LANES = 1


@dataclass(frozen=True)
class NoirGraph:
    """Immutable road network with its inlet/outlet/interior partition.

    ``length_m``, ``lanes`` and ``rho_max`` are indexed by ``road_id - 1``.
    ``rho_max`` is the vehicle capacity ``lanes * length / vehicle_length``
    for interior roads and ``+inf`` for boundary roads (their densities are
    held constant and never constrained).
    """

    n_in: int
    n_out_end: int
    n_total: int
    edges: tuple[tuple[int, int], ...]
    length_m: np.ndarray
    lanes: np.ndarray
    rho_max: np.ndarray
    vehicle_length_m: float
    out_lists: tuple[tuple[int, ...], ...] = field(repr=False)
    in_lists: tuple[tuple[int, ...], ...] = field(repr=False)

    # -- partition helpers ------------------------------------------------

    @property
    def n_outlets(self) -> int:
        return self.n_out_end - self.n_in

    @property
    def n_boundary(self) -> int:
        return self.n_out_end

    @property
    def n_interior(self) -> int:
        return self.n_total - self.n_out_end

    @property
    def inlets(self) -> range:
        return range(1, self.n_in + 1)

    @property
    def outlets(self) -> range:
        return range(self.n_in + 1, self.n_out_end + 1)

    @property
    def interior(self) -> range:
        return range(self.n_out_end + 1, self.n_total + 1)

    def is_inlet(self, i: int) -> bool:
        return 1 <= i <= self.n_in

    def is_outlet(self, i: int) -> bool:
        return self.n_in < i <= self.n_out_end

    def is_interior(self, i: int) -> bool:
        return self.n_out_end < i <= self.n_total

    def interior_index(self, i: int) -> int:
        """0-based index of an interior road in state vectors."""
        if not self.is_interior(i):
            raise KeyError(f"road {i} is not interior")
        return i - self.n_out_end - 1

    @property
    def x_max(self) -> np.ndarray:
        """Per-road capacity vector over interior roads, in state order."""
        return self.rho_max[self.n_out_end:]

    # -- neighbor sets ----------------------------------------------------

    def _check_id(self, i: int) -> None:
        if not 1 <= i <= self.n_total:
            raise KeyError(f"unknown road id {i} (network has roads 1..{self.n_total})")

    def in_neighbors(self, i: int) -> frozenset[int]:
        """Upstream roads feeding road ``i``; empty for every inlet."""
        self._check_id(i)
        return frozenset(self.in_lists[i - 1])

    def out_neighbors(self, i: int) -> frozenset[int]:
        """Downstream roads reachable from road ``i``; empty for every outlet."""
        self._check_id(i)
        return frozenset(self.out_lists[i - 1])

    def in_list(self, i: int) -> tuple[int, ...]:
        """Sorted in-neighbors, for deterministic iteration."""
        self._check_id(i)
        return self.in_lists[i - 1]

    def out_list(self, i: int) -> tuple[int, ...]:
        """Sorted out-neighbors, for deterministic iteration."""
        self._check_id(i)
        return self.out_lists[i - 1]


def make_graph(
    n_in: int,
    n_out_end: int,
    n_total: int,
    edges,
    length_m=None,
    lanes=None,
    vehicle_length_m: float = DEFAULT_VEHICLE_LENGTH_M,
) -> NoirGraph:
    """Build a :class:`NoirGraph`, checking basic well-formedness.

    Rejects inconsistent partition bounds, out-of-range road ids, self-loops
    and duplicate edges. Topology rules (e.g. inlets must have no in-edges)
    are checked by :func:`validate`, not here, so that defective networks can
    still be loaded and reported on.
    """
    if not (0 <= n_in <= n_out_end <= n_total) or n_total < 1:
        raise ValueError(
            f"inconsistent partition bounds: n_in={n_in}, n_out_end={n_out_end}, n_total={n_total}"
        )
    if vehicle_length_m <= 0:
        raise ValueError("vehicle_length_m must be positive")

    seen: set[tuple[int, int]] = set()
    for a, b in edges:
        if not (1 <= a <= n_total and 1 <= b <= n_total):
            raise ValueError(f"edge ({a}, {b}) references a road outside 1..{n_total}")
        if a == b:
            raise ValueError(f"self-loop on road {a}")
        if (a, b) in seen:
            raise ValueError(f"duplicate edge ({a}, {b})")
        seen.add((a, b))
    edge_tuple = tuple(sorted(seen))

    length = np.full(n_total, DEFAULT_ROAD_LENGTH_M, dtype=float)
    lane = np.full(n_total, DEFAULT_LANES, dtype=int)
    if length_m is not None:
        length[:] = np.asarray(length_m, dtype=float)
    if lanes is not None:
        lane[:] = np.asarray(lanes, dtype=int)
    if (length <= 0).any():
        raise ValueError("road lengths must be positive")
    if (lane < 1).any():
        raise ValueError("lane counts must be at least 1")

    rho_max = np.full(n_total, np.inf)
    if n_total > n_out_end:
        interior = slice(n_out_end, n_total)
        rho_max[interior] = lane[interior] * length[interior] / vehicle_length_m

    outs: list[list[int]] = [[] for _ in range(n_total)]
    ins: list[list[int]] = [[] for _ in range(n_total)]
    for a, b in edge_tuple:
        outs[a - 1].append(b)
        ins[b - 1].append(a)

    length.setflags(write=False)
    lane.setflags(write=False)
    rho_max.setflags(write=False)
    return NoirGraph(
        n_in=n_in,
        n_out_end=n_out_end,
        n_total=n_total,
        edges=edge_tuple,
        length_m=length,
        lanes=lane,
        rho_max=rho_max,
        vehicle_length_m=vehicle_length_m,
        out_lists=tuple(tuple(sorted(o)) for o in outs),
        in_lists=tuple(tuple(sorted(i)) for i in ins),
    )


# -- text format ----------------------------------------------------------
#
# Line-oriented, whitespace-separated, order-insensitive after the header:
#
#   noir <n_in> <n_out_end> <n_total>
#   road <id> <length_m> <lanes>          (optional; defaults 100 m, 1 lane)
#   edge <from> <to>
#   # comment
#


def load_noir(text: str, *, vehicle_length_m: float = DEFAULT_VEHICLE_LENGTH_M) -> NoirGraph:
    """Parse a network document. Raises :class:`NetworkFormatError` with the
    offending line number on malformed input."""
    header: tuple[int, int, int] | None = None
    roads: dict[int, tuple[float, int]] = {}
    edges: list[tuple[int, int]] = []
    edge_seen: set[tuple[int, int]] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        kind, args = tokens[0], tokens[1:]

        if header is None:
            if kind != "noir":
                raise NetworkFormatError(f"expected 'noir' header, got {kind!r}", lineno)
            if len(args) != 3:
                raise NetworkFormatError("header needs 3 integers: n_in n_out_end n_total", lineno)
            try:
                n_in, n_out_end, n_total = (int(a) for a in args)
            except ValueError:
                raise NetworkFormatError("header fields must be integers", lineno) from None
            if not (0 <= n_in <= n_out_end <= n_total) or n_total < 1:
                raise NetworkFormatError(
                    f"inconsistent partition bounds {n_in} {n_out_end} {n_total}", lineno
                )
            header = (n_in, n_out_end, n_total)
            continue

        n_total = header[2]
        if kind == "road":
            if len(args) != 3:
                raise NetworkFormatError("road line needs: road <id> <length_m> <lanes>", lineno)
            try:
                rid = int(args[0])
                length = float(args[1])
                lanes = int(args[2])
            except ValueError:
                raise NetworkFormatError(f"malformed road line {raw.strip()!r}", lineno) from None
            if not 1 <= rid <= n_total:
                raise NetworkFormatError(f"road id {rid} outside 1..{n_total}", lineno)
            if rid in roads:
                raise NetworkFormatError(f"duplicate road line for id {rid}", lineno)
            if length <= 0:
                raise NetworkFormatError(f"road {rid} has non-positive length", lineno)
            if lanes < 1:
                raise NetworkFormatError(f"road {rid} has fewer than 1 lane", lineno)
            roads[rid] = (length, lanes)
        elif kind == "edge":
            if len(args) != 2:
                raise NetworkFormatError("edge line needs: edge <from> <to>", lineno)
            try:
                a, b = int(args[0]), int(args[1])
            except ValueError:
                raise NetworkFormatError(f"malformed edge line {raw.strip()!r}", lineno) from None
            if not (1 <= a <= n_total and 1 <= b <= n_total):
                raise NetworkFormatError(f"edge ({a}, {b}) outside 1..{n_total}", lineno)
            if a == b:
                raise NetworkFormatError(f"self-loop on road {a}", lineno)
            if (a, b) in edge_seen:
                raise NetworkFormatError(f"duplicate edge ({a}, {b})", lineno)
            edge_seen.add((a, b))
            edges.append((a, b))
        else:
            raise NetworkFormatError(f"unknown directive {kind!r}", lineno)

    if header is None:
        raise NetworkFormatError("empty document: missing 'noir' header")

    n_in, n_out_end, n_total = header
    length = [roads.get(i, (DEFAULT_ROAD_LENGTH_M, DEFAULT_LANES))[0] for i in range(1, n_total + 1)]
    lanes = [roads.get(i, (DEFAULT_ROAD_LENGTH_M, DEFAULT_LANES))[1] for i in range(1, n_total + 1)]
    return make_graph(
        n_in, n_out_end, n_total, edges,
        length_m=length, lanes=lanes, vehicle_length_m=vehicle_length_m,
    )


def load_noir_file(path, *, vehicle_length_m: float = DEFAULT_VEHICLE_LENGTH_M) -> NoirGraph:
    with open(path, encoding="utf-8") as fh:
        return load_noir(fh.read(), vehicle_length_m=vehicle_length_m)


def serialize_noir(g: NoirGraph) -> str:
    """Render a graph back to the text format; inverse of :func:`load_noir`."""
    lines = [f"noir {g.n_in} {g.n_out_end} {g.n_total}"]
    for i in range(1, g.n_total + 1):
        lines.append(f"road {i} {g.length_m[i - 1]!r} {g.lanes[i - 1]}")
    for a, b in g.edges:
        lines.append(f"edge {a} {b}")
    return "\n".join(lines) + "\n"


# -- validation -----------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule: str
    subject: int | tuple[int, int]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[Violation, ...]


RULE_INLET_IN_EDGE = "inlet-in-edge"
RULE_OUTLET_OUT_EDGE = "outlet-out-edge"
RULE_INLET_TARGET = "inlet-out-neighbor-not-interior"
RULE_NO_OUTLET_PATH = "no-outlet-path"
RULE_ISOLATED = "isolated"
RULE_INTERIOR_NO_OUT = "interior-no-out"


def validate(g: NoirGraph) -> ValidationReport:
    """Check the structural rules the stability analysis relies on.

    Violations are data, not failures: a report is always returned and
    ``ok`` is true exactly when no rule is violated.
    """
    violations: list[Violation] = []

    for i in g.inlets:
        if g.in_lists[i - 1]:
            violations.append(Violation(
                RULE_INLET_IN_EDGE, i,
                f"inlet {i} has in-neighbors {list(g.in_lists[i - 1])}; traffic may only enter through it",
            ))
        for j in g.out_lists[i - 1]:
            if not g.is_interior(j):
                violations.append(Violation(
                    RULE_INLET_TARGET, (i, j),
                    f"inlet {i} feeds road {j}; inlet out-neighbors must be interior",
                ))

    for i in g.outlets:
        if g.out_lists[i - 1]:
            violations.append(Violation(
                RULE_OUTLET_OUT_EDGE, i,
                f"outlet {i} has out-neighbors {list(g.out_lists[i - 1])}; traffic may only leave through it",
            ))

    for i in range(1, g.n_total + 1):
        if not g.in_lists[i - 1] and not g.out_lists[i - 1]:
            violations.append(Violation(RULE_ISOLATED, i, f"road {i} is isolated"))

    for i in g.interior:
        if not g.out_lists[i - 1]:
            violations.append(Violation(
                RULE_INTERIOR_NO_OUT, i,
                f"interior road {i} has no out-neighbor; departing traffic has nowhere to go",
            ))

    # Finite-time departure: every road must have a directed path to an
    # outlet, otherwise vehicles routed onto it can never leave and the
    # closed-loop dynamics lose their stability margin.
    reaches_outlet = [False] * (g.n_total + 1)
    stack = list(g.outlets)
    for o in stack:
        reaches_outlet[o] = True
    while stack:
        node = stack.pop()
        for pred in g.in_lists[node - 1]:
            if not reaches_outlet[pred]:
                reaches_outlet[pred] = True
                stack.append(pred)
    for i in range(1, g.n_total + 1):
        if g.is_outlet(i):
            continue
        if not reaches_outlet[i]:
            violations.append(Violation(
                RULE_NO_OUTLET_PATH, i,
                f"road {i} has no directed path to any outlet",
            ))

    return ValidationReport(ok=not violations, violations=tuple(violations))


# -- synthetic grid generator ----------------------------------------------


def generate_grid(
    rows: int,
    cols: int,
    n_inlets: int,
    n_outlets: int,
    seed: int,
    *,
    length_range_m: tuple[float, float] = (800.0, 1200.0),
    lanes_choices: tuple[int, ...] = (2, 3),
    vehicle_length_m: float = DEFAULT_VEHICLE_LENGTH_M,
) -> NoirGraph:
    """Deterministic Manhattan-style grid of unidirectional road elements.

    Every pair of adjacent junctions carries two opposite one-way elements.
    At each junction an arriving element connects to every departing element
    except its own reverse (no U-turns). Inlets attach on the west/north
    perimeter and feed exactly one interior road each; outlets attach on the
    east/south perimeter and are fed by exactly one interior road each,
    spread round-robin over the perimeter slots. Interior road lengths and
    lane counts are drawn from a stream keyed by ``seed``.
    """
    if rows < 2 or cols < 2:
        raise GridPlacementError("rows and cols must be >= 2")
    if n_inlets < 1 or n_outlets < 1:
        raise GridPlacementError("need at least one inlet and one outlet")

    inlet_slots = [(r, 0) for r in range(rows)] + [(0, c) for c in range(1, cols)]
    outlet_slots = [(r, cols - 1) for r in range(rows)] + [(rows - 1, c) for c in range(cols - 1)]
    if n_inlets > len(inlet_slots):
        raise GridPlacementError(
            f"cannot place {n_inlets} inlets on a {rows}x{cols} grid (max {len(inlet_slots)})"
        )
    if n_outlets > len(outlet_slots):
        raise GridPlacementError(
            f"cannot place {n_outlets} outlets on a {rows}x{cols} grid (max {len(outlet_slots)})"
        )

    # Directed segments in a fixed enumeration order: east, west, south, north.
    segments: list[tuple[tuple[int, int], tuple[int, int]]] = []
    for r in range(rows):
        for c in range(cols - 1):
            segments.append(((r, c), (r, c + 1)))
    for r in range(rows):
        for c in range(cols - 1):
            segments.append(((r, c + 1), (r, c)))
    for r in range(rows - 1):
        for c in range(cols):
            segments.append(((r, c), (r + 1, c)))
    for r in range(rows - 1):
        for c in range(cols):
            segments.append(((r + 1, c), (r, c)))

    n_boundary = n_inlets + n_outlets
    seg_id = {seg: n_boundary + 1 + k for k, seg in enumerate(segments)}
    n_total = n_boundary + len(segments)

    arrivals: dict[tuple[int, int], list[int]] = {}
    departures: dict[tuple[int, int], list[int]] = {}
    for seg, rid in seg_id.items():
        departures.setdefault(seg[0], []).append(rid)
        arrivals.setdefault(seg[1], []).append(rid)

    edges: list[tuple[int, int]] = []
    rev = {seg_id[(a, b)]: seg_id[(b, a)] for (a, b) in segments}
    for junction in sorted(arrivals):
        for a in arrivals[junction]:
            for d in departures.get(junction, []):
                if d != rev[a]:
                    edges.append((a, d))

    def spread(slots: list[tuple[int, int]], n: int) -> list[tuple[int, int]]:
        return [slots[(i * len(slots)) // n] for i in range(n)]

    for k, (r, c) in enumerate(spread(inlet_slots, n_inlets)):
        target = seg_id[((r, c), (r, c + 1))] if c == 0 else seg_id[((r, c), (r + 1, c))]
        edges.append((k + 1, target))
    for k, (r, c) in enumerate(spread(outlet_slots, n_outlets)):
        feeder = seg_id[((r, c - 1), (r, c))] if c == cols - 1 else seg_id[((r - 1, c), (r, c))]
        edges.append((feeder, n_inlets + 1 + k))

    rng = keyed_rng(seed, TAG_GRID)
    lo, hi = length_range_m
    length = np.full(n_total, DEFAULT_ROAD_LENGTH_M)
    lanes = np.full(n_total, DEFAULT_LANES, dtype=int)
    length[n_boundary:] = rng.uniform(lo, hi, size=len(segments))
    lanes[n_boundary:] = rng.choice(np.asarray(lanes_choices), size=len(segments))

    return make_graph(
        n_in=n_inlets,
        n_out_end=n_boundary,
        n_total=n_total,
        edges=edges,
        length_m=length,
        lanes=lanes,
        vehicle_length_m=vehicle_length_m,
    )
