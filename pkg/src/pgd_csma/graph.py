"""Conflict graphs and feasible-schedule enumeration.

Links of the wireless network are vertices of an interference graph; an
edge means the two links cannot transmit in the same slot.  A feasible
schedule is an independent set, stored as a bitmask with bit v set when
link v is active.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    ContractViolationError,
    DimensionError,
    EnumerationLimitError,
    GraphParseError,
)

# Enumeration guards: refuse graphs whose schedule space cannot be held
# exactly in memory at desk scale.
MAX_ENUM_VERTICES = 24
MAX_ENUM_STATES = 1 << 20


@dataclass(frozen=True)
class InterferenceGraph:
    """Undirected interference graph on vertices 0..n-1.

    Edges are deduplicated and stored as sorted (u, v) pairs with u < v.
    ``neighbor_masks[v]`` is the bitmask of v's neighbors, the workhorse
    for feasibility tests and the dynamics kernels.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    neighbor_masks: tuple[int, ...] = field(init=False, repr=False)
    degrees: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.n < 1:
            raise GraphParseError(f"vertex count must be >= 1, got {self.n}")
        masks = [0] * self.n
        seen = set()
        for u, v in self.edges:
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise GraphParseError(f"edge ({u}, {v}) out of range for n={self.n}")
            if u == v:
                raise GraphParseError(f"self-loop at vertex {u}")
            if u > v:
                u, v = v, u
            if (u, v) in seen:
                continue
            seen.add((u, v))
            masks[u] |= 1 << v
            masks[v] |= 1 << u
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        object.__setattr__(self, "neighbor_masks", tuple(masks))
        object.__setattr__(self, "degrees", tuple(m.bit_count() for m in masks))

    # -- convenience constructors -------------------------------------

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "InterferenceGraph":
        return cls(n=n, edges=tuple((int(u), int(v)) for u, v in edges))

    @classmethod
    def path(cls, n: int) -> "InterferenceGraph":
        return cls.from_edges(n, [(i, i + 1) for i in range(n - 1)])

    @classmethod
    def star(cls, n: int) -> "InterferenceGraph":
        """Star on n vertices: center 0, leaves 1..n-1."""
        return cls.from_edges(n, [(0, i) for i in range(1, n)])

    @classmethod
    def complete(cls, n: int) -> "InterferenceGraph":
        return cls.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])

    @classmethod
    def erdos_renyi(cls, n: int, p: float, seed: int) -> "InterferenceGraph":
        """G(n, p) with a dedicated graph seed, independent of run seeds."""
        if not 0.0 <= p <= 1.0:
            raise GraphParseError(f"edge probability must be in [0, 1], got {p}")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([0x6E70, n, seed])))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        return cls.from_edges(n, edges)

    # -- queries --------------------------------------------------------

    def neighbors(self, v: int) -> tuple[int, ...]:
        return tuple(_bits(self.neighbor_masks[v]))

    @property
    def max_degree(self) -> int:
        return max(self.degrees)

    def is_complete(self) -> bool:
        return all(d == self.n - 1 for d in self.degrees)


@dataclass(frozen=True)
class Schedule:
    """One transmission schedule: bit v of ``mask`` set iff link v is active."""

    n: int
    mask: int

    def __post_init__(self) -> None:
        if self.mask < 0 or self.mask >> self.n:
            raise DimensionError(f"mask {self.mask:#x} does not fit {self.n} links")

    @classmethod
    def from_members(cls, n: int, members: Iterable[int]) -> "Schedule":
        mask = 0
        for v in members:
            if not 0 <= v < n:
                raise DimensionError(f"link {v} out of range for n={n}")
            mask |= 1 << v
        return cls(n=n, mask=mask)

    @property
    def members(self) -> tuple[int, ...]:
        return tuple(_bits(self.mask))

    def as_array(self) -> np.ndarray:
        return np.array([(self.mask >> v) & 1 for v in range(self.n)], dtype=np.int8)

    def __contains__(self, v: int) -> bool:
        return bool((self.mask >> v) & 1)


@dataclass(frozen=True)
class ScheduleSpace:
    """All feasible schedules of a graph, sorted by ascending bitmask.

    The sort order fixes state indices, so any two runs agree on which
    row of a transition matrix or stationary vector is which schedule.
    Keeps a reference to the graph it was enumerated from.
    """

    graph: InterferenceGraph
    masks: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def size(self) -> int:
        return len(self.masks)

    def index_of(self, mask: int) -> int:
        i = self._index.get(mask)
        if i is None:
            raise ContractViolationError(f"schedule {mask:#x} is not feasible here")
        return i

    @property
    def _index(self) -> dict[int, int]:
        cache = self.__dict__.get("_index_cache")
        if cache is None:
            cache = {m: i for i, m in enumerate(self.masks)}
            self.__dict__["_index_cache"] = cache
        return cache

    def member_matrix(self) -> np.ndarray:
        """(size, n) float matrix; row k is the indicator vector of schedule k."""
        cache = self.__dict__.get("_member_cache")
        if cache is None:
            cache = np.array(
                [[(m >> v) & 1 for v in range(self.n)] for m in self.masks], dtype=float
            )
            self.__dict__["_member_cache"] = cache
        return cache

    def schedules(self) -> Iterator[Schedule]:
        for m in self.masks:
            yield Schedule(self.n, m)


def _bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def load_graph(text: str) -> InterferenceGraph:
    """Parse an edge-list document.

    First non-comment line: vertex count n.  Each further line: two
    whitespace-separated vertex ids in 0..n-1.  '#' starts a comment,
    blank lines are skipped, duplicate edges are merged.
    """
    n = None
    edges: list[tuple[int, int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if n is None:
            if len(fields) != 1:
                raise GraphParseError(f"line {lineno}: expected vertex count, got {raw!r}")
            try:
                n = int(fields[0])
            except ValueError:
                raise GraphParseError(f"line {lineno}: vertex count {fields[0]!r} is not an integer") from None
            if n < 1:
                raise GraphParseError(f"line {lineno}: vertex count must be >= 1, got {n}")
            continue
        if len(fields) != 2:
            raise GraphParseError(f"line {lineno}: expected 'u v', got {raw!r}")
        try:
            u, v = int(fields[0]), int(fields[1])
        except ValueError:
            raise GraphParseError(f"line {lineno}: non-integer vertex id in {raw!r}") from None
        if u == v:
            raise GraphParseError(f"line {lineno}: self-loop at vertex {u}")
        if n is not None and not (0 <= u < n and 0 <= v < n):
            raise GraphParseError(f"line {lineno}: vertex id out of range 0..{n - 1}")
        edges.append((u, v))
    if n is None:
        raise GraphParseError("empty graph document")
    return InterferenceGraph.from_edges(n, edges)


def load_graph_file(path: str) -> InterferenceGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return load_graph(fh.read())


def is_feasible(g: InterferenceGraph, s: Schedule) -> bool:
    """True iff no two active links interfere."""
    if s.n != g.n:
        raise DimensionError(f"schedule has {s.n} links, graph has {g.n}")
    return mask_is_feasible(g, s.mask)


def mask_is_feasible(g: InterferenceGraph, mask: int) -> bool:
    m = mask
    while m:
        low = m & -m
        v = low.bit_length() - 1
        if g.neighbor_masks[v] & mask:
            return False
        m ^= low
    return True


def enumerate_feasible(
    g: InterferenceGraph,
    max_states: int = MAX_ENUM_STATES,
    max_vertices: int = MAX_ENUM_VERTICES,
) -> ScheduleSpace:
    """Enumerate every independent set of g as a ScheduleSpace.

    Raises EnumerationLimitError when n exceeds ``max_vertices`` or the
    count of feasible schedules would exceed ``max_states``; the message
    reports both the instance size and the limit hit.
    """
    if g.n > max_vertices:
        raise EnumerationLimitError(
            f"graph has n={g.n} vertices, enumeration is limited to n<={max_vertices}"
        )
    # Grow by vertex: after step v the list holds every independent set
    # of the subgraph induced by vertices 0..v.
    masks = [0]
    for v in range(g.n):
        bit = 1 << v
        nbr = g.neighbor_masks[v]
        grown = [m | bit for m in masks if not (m & nbr)]
        masks.extend(grown)
        if len(masks) > max_states:
            raise EnumerationLimitError(
                f"feasible schedule count exceeds limit {max_states} "
                f"(reached {len(masks)} after vertex {v} of {g.n})"
            )
    masks.sort()
    return ScheduleSpace(graph=g, masks=tuple(masks))


def interference_degree(g: InterferenceGraph, v: int) -> int:
    """Largest number of mutually non-interfering links inside N(v).

    Brute-force over independent subsets of the neighborhood, bounded by
    the global enumeration guard.
    """
    nbrs = list(_bits(g.neighbor_masks[v]))
    if not nbrs:
        return 0
    # Independent-set growth restricted to the induced neighborhood.
    masks = [0]
    best = 0
    for w in nbrs:
        bit = 1 << w
        nbr = g.neighbor_masks[w]
        grown = [m | bit for m in masks if not (m & nbr)]
        masks.extend(grown)
        if len(masks) > MAX_ENUM_STATES:
            raise EnumerationLimitError(
                f"neighborhood of vertex {v} too large for exact interference degree"
            )
    for m in masks:
        c = m.bit_count()
        if c > best:
            best = c
    return best


def max_interference_degree(g: InterferenceGraph) -> int:
    """chi = max_v interference_degree(v); equals 1 on complete graphs."""
    return max(interference_degree(g, v) for v in range(g.n))
