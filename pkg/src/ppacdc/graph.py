"""
Directed communication topology.

An edge ``(j, i)`` means node ``j`` receives from node ``i``. Nodes are
``0 .. n-1``. Self-loops are implicit and never stored.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from ppacdc.rng import Xoshiro256


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Digraph:
    node_count: int
    edges: frozenset[tuple[int, int]]
    _in: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)
    _out: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = self.node_count
        if n < 2:
            raise GraphError(f"need at least 2 nodes, got {n}")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        ins: list[list[int]] = [[] for _ in range(n)]
        outs: list[list[int]] = [[] for _ in range(n)]
        for j, i in edges:
            if not (0 <= j < n and 0 <= i < n):
                raise GraphError(f"edge ({j}, {i}) references a node outside 0..{n - 1}")
            if i == j:
                raise GraphError(f"self-loop on node {j} must not be stored")
            ins[j].append(i)
            outs[i].append(j)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_in", tuple(tuple(sorted(v)) for v in ins))
        object.__setattr__(self, "_out", tuple(tuple(sorted(v)) for v in outs))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> Digraph:
        return cls(n, frozenset(edges))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def _check(self, j: int) -> None:
        if not 0 <= j < self.node_count:
            raise GraphError(f"unknown node {j}")

    def in_neighbors(self, j: int) -> tuple[int, ...]:
        self._check(j)
        return self._in[j]

    def out_neighbors(self, j: int) -> tuple[int, ...]:
        self._check(j)
        return self._out[j]

    def in_degree(self, j: int) -> int:
        return len(self.in_neighbors(j))

    def out_degree(self, j: int) -> int:
        return len(self.out_neighbors(j))


def pull_weight(g: Digraph, j: int, i: int) -> float:
    """Row-stochastic weight node ``j`` gives to the state it receives from ``i``."""
    if i == j or i in g.in_neighbors(j):
        return 1.0 / (1 + g.in_degree(j))
    return 0.0


def push_weight(g: Digraph, l: int, j: int) -> float:
    """Column-stochastic share of node ``j``'s surplus sent to node ``l``."""
    if l == j or l in g.out_neighbors(j):
        return 1.0 / (1 + g.out_degree(j))
    return 0.0


def _bfs_distances(g: Digraph, src: int) -> list[int]:
    dist = [-1] * g.node_count
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in g._out[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def is_strongly_connected(g: Digraph) -> bool:
    return all(min(_bfs_distances(g, s)) >= 0 for s in range(g.node_count))


def diameter(g: Digraph) -> int:
    """Longest shortest directed path over all ordered node pairs."""
    best = 0
    for s in range(g.node_count):
        dist = _bfs_distances(g, s)
        if min(dist) < 0:
            raise GraphError("diameter is undefined: graph is not strongly connected")
        best = max(best, max(dist))
    return best


def ring(n: int) -> Digraph:
    """Directed ring where node ``i`` sends to node ``(i + 1) % n``."""
    return Digraph(n, frozenset(((i + 1) % n, i) for i in range(n)))


def complete(n: int) -> Digraph:
    return Digraph(n, frozenset((j, i) for j in range(n) for i in range(n) if i != j))


def random_strongly_connected(n: int, extra_edge_prob: float, seed: int) -> Digraph:
    """Seeded Hamiltonian ring plus independent extra edges.

    A permutation ``perm`` is drawn first; ``perm[k]`` sends to
    ``perm[k+1]`` (cyclically). Then, for every ordered pair ``(j, i)`` with
    ``j != i`` in row-major order, one uniform draw ``u`` is consumed and the
    edge is added if it is not already a ring edge and ``u < extra_edge_prob``.
    """
    if n < 2:
        raise GraphError(f"need at least 2 nodes, got {n}")
    if not 0.0 <= extra_edge_prob <= 1.0:
        raise GraphError(f"extra_edge_prob must be in [0, 1], got {extra_edge_prob}")
    rng = Xoshiro256(seed)
    perm = rng.permutation(n)
    edges = {(perm[(k + 1) % n], perm[k]) for k in range(n)}
    for j in range(n):
        for i in range(n):
            if i == j:
                continue
            u = rng.random()
            if (j, i) not in edges and u < extra_edge_prob:
                edges.add((j, i))
    return Digraph(n, frozenset(edges))


def format_edge_list(g: Digraph) -> str:
    lines = [f"# nodes {g.node_count}", "# receiver sender"]
    lines += [f"{j} {i}" for j, i in sorted(g.edges)]
    return "\n".join(lines) + "\n"


def parse_edge_list(text: str, n: int | None = None) -> Digraph:
    """Parse ``j i`` lines (receiver first). ``# nodes N`` fixes the node count."""
    edges = []
    declared = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "nodes":
                declared = int(parts[1])
            continue
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'j i', got {raw!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise GraphError(f"line {lineno}: node ids must be integers") from None
    if n is None:
        n = declared
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
    return Digraph(n, frozenset(edges))


def load_edge_list(path: str | os.PathLike) -> Digraph:
    with open(path, encoding="utf-8") as fh:
        return parse_edge_list(fh.read())


def save_edge_list(g: Digraph, path: str | os.PathLike) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(format_edge_list(g))
    os.replace(tmp, path)
