"""Finite directed graphs with ordered neighbor lists.

Vertices are ``0..m-1``. Neighbor lists are kept sorted ascending so every
downstream enumeration (trees, unicycles, exit sampling) is reproducible.
Self-loops are allowed; parallel edges are not.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidSizeError, StructuralError


@dataclass(frozen=True)
class Graph:
    m: int
    out_neighbors: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.m < 1:
            raise InvalidSizeError(f"vertex count must be positive, got {self.m}")
        if len(self.out_neighbors) != self.m:
            raise StructuralError("need one neighbor list per vertex")
        for x, nbrs in enumerate(self.out_neighbors):
            if len(set(nbrs)) != len(nbrs):
                raise StructuralError(f"duplicate neighbor at vertex {x}")
            for y in nbrs:
                if not 0 <= y < self.m:
                    raise StructuralError(f"edge ({x},{y}) leaves the vertex range")
            if list(nbrs) != sorted(nbrs):
                raise StructuralError(f"neighbors of {x} must be ascending")

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[Sequence[int]]) -> "Graph":
        nbrs: list[set[int]] = [set() for _ in range(m)]
        for u, v in edges:
            if not (0 <= u < m and 0 <= v < m):
                raise StructuralError(f"edge ({u},{v}) leaves the vertex range")
            if v in nbrs[u]:
                raise StructuralError(f"parallel edge ({u},{v})")
            nbrs[u].add(v)
        return cls(m, tuple(tuple(sorted(s)) for s in nbrs))

    @property
    def edges(self) -> list[tuple[int, int]]:
        return [(x, y) for x in range(self.m) for y in self.out_neighbors[x]]

    @property
    def edge_count(self) -> int:
        return sum(len(n) for n in self.out_neighbors)

    def out_degree(self, x: int) -> int:
        return len(self.out_neighbors[x])

    def has_edge(self, x: int, y: int) -> bool:
        return y in self.out_neighbors[x]

    def has_loops(self) -> bool:
        return any(x in n for x, n in enumerate(self.out_neighbors))

    def adjacency(self) -> np.ndarray:
        """Integer adjacency matrix, loops on the diagonal."""
        a = np.zeros((self.m, self.m), dtype=np.int64)
        for x, y in self.edges:
            a[x, y] = 1
        return a

    def laplacian(self) -> np.ndarray:
        """Out-degree Laplacian ``D - A``; a loop cancels against its own degree."""
        a = self.adjacency()
        return np.diag(a.sum(axis=1)) - a

    def induced(self, vertices: Sequence[int]) -> "Graph":
        """Induced subgraph on ``vertices``, relabelled to ``0..len-1`` in the given order."""
        pos = {v: i for i, v in enumerate(vertices)}
        edges = [(pos[x], pos[y]) for x in vertices for y in self.out_neighbors[x] if y in pos]
        return Graph.from_edges(len(vertices), edges)

    def is_symmetric(self) -> bool:
        return all(self.has_edge(y, x) for x, y in self.edges)

    def to_json(self) -> dict:
        return {"m": self.m, "edges": [list(e) for e in self.edges]}


def complete_graph(m: int, with_loops: bool = False) -> Graph:
    if m < 2:
        raise InvalidSizeError(f"complete graph needs m >= 2, got {m}")
    return Graph(m, tuple(tuple(y for y in range(m) if with_loops or y != x) for x in range(m)))


def cycle_graph(m: int, with_loops: bool = False) -> Graph:
    """Bidirected cycle ``C_m``; neighbors of ``k`` are ``k-1`` and ``k+1`` mod ``m``."""
    if m < 3:
        raise InvalidSizeError(f"cycle graph needs m >= 3, got {m}")
    nbrs = []
    for k in range(m):
        s = {(k - 1) % m, (k + 1) % m}
        if with_loops:
            s.add(k)
        nbrs.append(tuple(sorted(s)))
    return Graph(m, tuple(nbrs))


def path_graph(m: int) -> Graph:
    if m < 2:
        raise InvalidSizeError(f"path graph needs m >= 2, got {m}")
    edges = [(i, i + 1) for i in range(m - 1)] + [(i + 1, i) for i in range(m - 1)]
    return Graph.from_edges(m, edges)


def is_strongly_connected(g: Graph) -> bool:
    if g.m == 1:
        return True
    rows, cols = zip(*g.edges) if g.edge_count else ((), ())
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(g.m, g.m))
    n, _ = connected_components(adj, directed=True, connection="strong")
    return n == 1


FAMILIES = {"complete", "cycle", "path"}


def graph_from_descriptor(desc: dict) -> Graph:
    """Build a graph from ``{"m": int, "edges": [[u, v], ...]}`` or a family shortcut.

    The shortcut form is ``{"family": "complete"|"cycle"|"path", "m": int,
    "loops": bool}``.
    """
    family = desc.get("family")
    if family is not None:
        m = int(desc["m"])
        loops = bool(desc.get("loops", False))
        if family == "complete":
            return complete_graph(m, with_loops=loops)
        if family == "cycle":
            return cycle_graph(m, with_loops=loops)
        if family == "path":
            return path_graph(m)
        raise StructuralError(f"unknown graph family {family!r}")
    if "m" not in desc or "edges" not in desc:
        raise StructuralError("graph descriptor needs 'm' and 'edges' (or 'family')")
    return Graph.from_edges(int(desc["m"]), [tuple(e) for e in desc["edges"]])


def load_graph(path) -> Graph:
    with open(path) as fh:
        return graph_from_descriptor(json.load(fh))
