"""Construction of per-state model groups.

Each target state is grouped with states that are both geographically close
(via a contiguity frontier that expands one state per round) and similar under
the covariate-PCA distance.  A population floor then pads small groups.  The
functions are generic over node identifiers so they work on arbitrary graphs;
the 51-state validation lives at the file boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

from .errors import GroupingError, IsolatedState, ParseError
from .states import CENSUS_DIVISIONS, ISLAND_STATES, division_of, validate_state

MAX_GROUP_SIZE = 9
DEFAULT_ROUNDS = 10
DEFAULT_POPULATION_FLOOR = 5_000_000


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected contiguity graph; nodes with no edges are isolated."""

    nodes: tuple[str, ...]
    neighbors: dict[str, frozenset[str]]

    @classmethod
    def from_edges(cls, nodes, edges) -> "AdjacencyGraph":
        nodes = tuple(sorted(set(nodes)))
        nbrs: dict[str, set[str]] = {n: set() for n in nodes}
        for a, b in edges:
            if a == b:
                raise GroupingError(f"self-loop on {a}")
            if a not in nbrs or b not in nbrs:
                raise GroupingError(f"edge ({a}, {b}) references unknown node")
            nbrs[a].add(b)
            nbrs[b].add(a)
        return cls(nodes, {n: frozenset(v) for n, v in nbrs.items()})

    def degree(self, node: str) -> int:
        return len(self.neighbors[node])


@dataclass(frozen=True)
class NeighborList:
    """Frontier-recursion output: (state, distance to target, round index)."""

    target: str
    entries: tuple[tuple[str, float, int], ...]

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(e[0] for e in self.entries)

    def distance_of(self, state: str) -> float:
        for s, d, _ in self.entries:
            if s == state:
                return d
        raise KeyError(state)


@dataclass(frozen=True)
class StateGroup:
    target: str
    members: tuple[str, ...]
    provenance: str  # pca | census_region | island
    total_population: float = 0.0
    floor_satisfied: bool = True

    def __post_init__(self):
        if self.members[0] != self.target:
            raise GroupingError("group members must start with the target")
        if len(set(self.members)) != len(self.members):
            raise GroupingError("group members must be distinct")


def load_adjacency(path=None) -> AdjacencyGraph:
    """Read the contiguity edge list; default is the packaged US graph."""
    if path is None:
        ref = resources.files("statemort.data").joinpath("adjacency.csv")
        with ref.open("r", encoding="utf-8") as fh:
            return _parse_adjacency(fh)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return _parse_adjacency(fh)


def _parse_adjacency(fh) -> AdjacencyGraph:
    from .states import STATE_IDS

    reader = csv.reader(ln for ln in fh if not ln.startswith("#"))
    header = next(reader, None)
    if header is None:
        raise ParseError("adjacency file is empty")
    edges = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) < 2:
            raise ParseError("expected two state codes", line=lineno)
        edges.append((validate_state(row[0], line=lineno),
                      validate_state(row[1], line=lineno)))
    graph = AdjacencyGraph.from_edges(STATE_IDS, edges)
    for s in ISLAND_STATES:
        if graph.degree(s) != 0:
            raise ParseError(f"{s} must be isolated in the contiguity graph")
    return graph


def _argmin_state(candidates, target, dist) -> tuple[str, float]:
    """Closest candidate to target; ties broken alphabetically."""
    best = min(sorted(candidates), key=lambda s: (dist(target, s), s))
    return best, dist(target, best)


def nearest_neighbors(s: str, graph: AdjacencyGraph, dist,
                      rounds: int = DEFAULT_ROUNDS) -> NeighborList:
    """Expand the contiguity frontier one closest state per round.

    Round 1 searches the direct neighbors of `s`; round n searches everything
    contiguous with the accumulated set.  Stops early only when the frontier
    is exhausted (the connected component ran out).
    """
    if graph.degree(s) == 0:
        raise IsolatedState(f"{s} has no neighbors in the contiguity graph")
    selected: list[tuple[str, float, int]] = []
    accumulated = {s}
    for n in range(1, rounds + 1):
        frontier = set()
        for member in accumulated:
            frontier |= graph.neighbors[member]
        frontier -= accumulated
        if not frontier:
            break
        pick, d = _argmin_state(frontier, s, dist)
        selected.append((pick, d, n))
        accumulated.add(pick)
    return NeighborList(target=s, entries=tuple(selected))


def build_group(s: str, neighbors: NeighborList, dist, populations,
                floor: float = DEFAULT_POPULATION_FLOOR,
                graph: AdjacencyGraph | None = None,
                provenance: str = "pca") -> StateGroup:
    """Assemble the model group for `s` from its neighbor list.

    The first two neighbors always join.  The next-closest remaining neighbor
    joins only if it is strictly closer to `s` than the farther of the first
    two.  Finally, remaining neighbors join in ascending distance until the
    group's total population reaches `floor`; if the list runs dry the
    frontier is extended (when the graph is available) and otherwise the
    group is returned with `floor_satisfied=False`.
    """
    entries = list(neighbors.entries)
    if len(entries) < 2:
        raise GroupingError(f"{s}: need at least two frontier neighbors")
    members = [s, entries[0][0], entries[1][0]]
    dist_of = {st: d for st, d, _ in entries}

    remaining = sorted((st for st, _, _ in entries[2:]),
                       key=lambda st: (dist_of[st], st))
    if remaining:
        s3 = remaining[0]
        if dist_of[s3] < max(dist_of[members[1]], dist_of[members[2]]):
            members.append(s3)
            remaining.pop(0)

    total = sum(populations[m] for m in members)
    floor_ok = True
    while total < floor:
        if not remaining and graph is not None:
            extended = nearest_neighbors(
                s, graph, dist, rounds=len(entries) + DEFAULT_ROUNDS)
            known = set(st for st, _, _ in entries)
            new = [e for e in extended.entries if e[0] not in known]
            if new:
                entries.extend(new)
                for st, d, _ in new:
                    dist_of[st] = d
                remaining = sorted(
                    (st for st, _, _ in entries if st not in members),
                    key=lambda st: (dist_of[st], st))
                continue
        if not remaining or len(members) >= MAX_GROUP_SIZE:
            floor_ok = False
            break
        nxt = remaining.pop(0)
        members.append(nxt)
        total += populations[nxt]

    return StateGroup(target=s, members=tuple(members), provenance=provenance,
                      total_population=float(total), floor_satisfied=floor_ok)


def island_group(s: str, dist, graph: AdjacencyGraph, populations,
                 floor: float = DEFAULT_POPULATION_FLOOR,
                 rounds: int = DEFAULT_ROUNDS) -> StateGroup:
    """Group an isolated state: seed with the globally closest state, then
    run the frontier recursion from that seed's contiguity."""
    if graph.degree(s) != 0:
        raise GroupingError(f"{s} is not isolated; use build_group")
    others = [n for n in graph.nodes if n != s]
    s1, d1 = _argmin_state(others, s, dist)
    entries: list[tuple[str, float, int]] = [(s1, d1, 1)]
    accumulated = {s, s1}
    for n in range(2, rounds + 1):
        frontier = set()
        for member in accumulated:
            frontier |= graph.neighbors[member]
        frontier -= accumulated
        if not frontier:
            break
        pick, d = _argmin_state(frontier, s, dist)
        entries.append((pick, d, n))
        accumulated.add(pick)
    neighbors = NeighborList(target=s, entries=tuple(entries))
    return build_group(s, neighbors, dist, populations, floor=floor,
                       graph=None, provenance="island")


def census_region_group(s: str) -> StateGroup:
    """The fixed census division containing `s`, target listed first."""
    s = validate_state(s)
    members = CENSUS_DIVISIONS[division_of(s)]
    ordered = (s, *(m for m in members if m != s))
    return StateGroup(target=s, members=ordered, provenance="census_region")


def single_state_group(s: str) -> StateGroup:
    return StateGroup(target=s, members=(validate_state(s),), provenance="single_state")


def reciprocity(groupings: dict[str, StateGroup]):
    """Mutual-membership pairs and the states that appear in none.

    A pair (A, B) is reciprocal when each state belongs to the other's group.
    Returns (sorted pair list, sorted never-reciprocal state list).
    """
    pairs = set()
    states = sorted(groupings)
    for a in states:
        for b in groupings[a].members[1:]:
            if b in groupings and a in groupings[b].members[1:]:
                pairs.add(tuple(sorted((a, b))))
    in_pair = {s for pair in pairs for s in pair}
    never = [s for s in states if s not in in_pair]
    return sorted(pairs), never
