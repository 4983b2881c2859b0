"""Agent coupling graphs and κ-hop neighborhoods."""
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations

import numpy as np


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Neighborhood:
    center: int
    kappa: int
    members: tuple

    def __contains__(self, j):
        return j in self.members

    def __len__(self):
        return len(self.members)

    def complement(self, n):
        """Agents outside the neighborhood, ascending."""
        inside = set(self.members)
        return tuple(j for j in range(n) if j not in inside)


@dataclass(frozen=True, eq=False)
class AgentGraph:
    """Undirected graph over agents ``0..n-1``. Self-loops are never stored."""

    n: int
    edges: frozenset
    _adj: tuple = field(repr=False, compare=False, default=())

    def __post_init__(self):
        adj = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        object.__setattr__(self, "_adj", tuple(tuple(sorted(a)) for a in adj))

    def __eq__(self, other):
        return isinstance(other, AgentGraph) and self.n == other.n and self.edges == other.edges

    def __hash__(self):
        return hash((self.n, self.edges))

    def neighbors(self, i):
        """Adjacent agents of ``i`` (excluding ``i``), ascending."""
        return self._adj[i]

    def degree(self, i):
        return len(self._adj[i])

    def has_edge(self, i, j):
        return j in self._adj[i]

    def closed_neighbors(self, i):
        """N_i with ``i`` included, ascending."""
        return tuple(sorted((i,) + self._adj[i]))

    def neighborhood(self, i, kappa):
        return kappa_neighborhood(self, i, kappa)

    def distances_from(self, i):
        return _bfs(self, i)

    def is_connected(self):
        return self.n == 0 or (_bfs(self, 0) >= 0).all()

    def edge_list(self):
        return sorted(self.edges)


def build_graph(n, edges):
    """Validate ``edges`` and return an :class:`AgentGraph`; duplicates collapse."""
    n = int(n)
    if n <= 0:
        raise GraphError(f"agent count must be positive, got {n}")
    canon = set()
    for e in edges:
        i, j = (int(x) for x in e)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) has an endpoint outside 0..{n - 1}")
        if i == j:
            raise GraphError(f"self-loop on agent {i}")
        canon.add((min(i, j), max(i, j)))
    return AgentGraph(n, frozenset(canon))


def ring_graph(n):
    if n < 3:
        # a 2-ring is a single edge
        return build_graph(n, [(0, 1)] if n == 2 else [])
    return build_graph(n, [(i, (i + 1) % n) for i in range(n)])


def line_graph(n):
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n):
    return build_graph(n, combinations(range(n), 2))


@lru_cache(maxsize=4096)
def _bfs_cached(g, i):
    dist = np.full(g.n, -1, dtype=np.int64)
    dist[i] = 0
    q = deque([i])
    while q:
        u = q.popleft()
        for v in g.neighbors(u):
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    dist.setflags(write=False)
    return dist


def _bfs(g, i):
    return _bfs_cached(g, i)


@lru_cache(maxsize=16384)
def _neighborhood_cached(g, i, kappa):
    dist = _bfs(g, i)
    members = tuple(int(j) for j in np.flatnonzero((dist >= 0) & (dist <= kappa)))
    return Neighborhood(i, kappa, members)


def kappa_neighborhood(g, i, kappa):
    """Agents within graph distance ``kappa`` of ``i`` (``i`` itself included)."""
    if not 0 <= i < g.n:
        raise GraphError(f"agent {i} out of range 0..{g.n - 1}")
    if kappa < 0:
        raise GraphError(f"kappa must be non-negative, got {kappa}")
    return _neighborhood_cached(g, int(i), int(kappa))


def diameter(g):
    """Longest shortest path; raises :class:`GraphError` on a disconnected graph."""
    best = 0
    for i in range(g.n):
        dist = _bfs(g, i)
        missing = np.flatnonzero(dist < 0)
        if missing.size:
            raise GraphError(f"graph is disconnected: agent {int(missing[0])} unreachable from agent {i}")
        best = max(best, int(dist.max()))
    return best
