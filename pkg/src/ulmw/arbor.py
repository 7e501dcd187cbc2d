"""Rooted spanning trees, spanning unicycles and their weights.

A configuration is stored as a tuple ``rho`` of length ``m`` where
``rho[x]`` is the vertex the arrow at ``x`` points to. Trees rooted at ``r``
use ``rho[r] == -1`` (the root has no arrow). Arrows point toward the root.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, DomainError, StructuralError
from .graph import Graph, is_strongly_connected
from .local_chain import QSystem

MAX_VERTICES = 8
NO_ARROW = -1

Config = tuple[int, ...]


@dataclass(frozen=True)
class UnicycleState:
    x: int
    rho: Config
    cycle: tuple[int, ...]


@dataclass
class UnicycleIndex:
    """All recurrent states ``(x, rho)`` with the unicycle permutation ``zeta``.

    ``zeta[i]`` is the index of ``(rho(x), rho)``: the particle advanced one
    step along the cycle with the arrows untouched.
    """

    states: list[UnicycleState]
    lookup: dict[tuple[int, Config], int]
    zeta: np.ndarray

    def __len__(self) -> int:
        return len(self.states)

    def index_of(self, x: int, rho: Sequence[int]) -> int:
        try:
            return self.lookup[(x, tuple(rho))]
        except KeyError:
            raise StructuralError(f"({x}, {tuple(rho)}) is not a recurrent unicycle state") from None

    def __contains__(self, key) -> bool:
        x, rho = key
        return (x, tuple(rho)) in self.lookup

    @property
    def zeta_inverse(self) -> np.ndarray:
        inv = np.empty_like(self.zeta)
        inv[self.zeta] = np.arange(len(self.zeta))
        return inv

    def particles(self) -> np.ndarray:
        return np.array([s.x for s in self.states])


@dataclass(frozen=True)
class WeightedFamily:
    items: list[tuple[Config, float]]
    total: float


def _guard(g: Graph, max_vertices: int) -> None:
    if g.m > max_vertices:
        raise CapacityError(f"enumeration guarded at m <= {max_vertices}, got m = {g.m}")


def _reaches(rho: list[int], start: int, target: int) -> bool:
    v = start
    while v != NO_ARROW:
        if v == target:
            return True
        v = rho[v]
    return False


def _forests(g: Graph, roots: set[int]) -> Iterable[Config]:
    """Depth-first assignment of one arrow per non-root vertex, rejecting cycles."""
    order = [v for v in range(g.m) if v not in roots]
    rho = [NO_ARROW] * g.m

    def rec(i: int):
        if i == len(order):
            yield tuple(rho)
            return
        v = order[i]
        for w in g.out_neighbors[v]:
            # v -> w closes a cycle iff following arrows from w comes back to v
            if _reaches(rho, w, v):
                continue
            rho[v] = w
            yield from rec(i + 1)
            rho[v] = NO_ARROW

    yield from rec(0)


def enumerate_rooted_trees(g: Graph, root: int, max_vertices: int = MAX_VERTICES) -> list[Config]:
    """Spanning trees oriented toward ``root`` (``rho[root] == -1``)."""
    _guard(g, max_vertices)
    if not is_strongly_connected(g):
        raise StructuralError("rooted spanning trees need a strongly connected graph")
    return list(_forests(g, {root}))


def enumerate_forests(g: Graph, roots: Iterable[int], max_vertices: int = MAX_VERTICES) -> list[Config]:
    _guard(g, max_vertices)
    return list(_forests(g, set(roots)))


def unicycle_cycle(rho: Sequence[int], x: int) -> tuple[int, ...]:
    """The cycle through ``x`` in the functional graph of ``rho``, from its least vertex."""
    cyc = [x]
    v = rho[x]
    while v != x:
        if len(cyc) > len(rho):
            raise DomainError(f"vertex {x} is not on a cycle of {tuple(rho)}")
        cyc.append(v)
        v = rho[v]
    k = cyc.index(min(cyc))
    return tuple(cyc[k:] + cyc[:k])


def is_spanning_unicycle(rho: Sequence[int]) -> bool:
    """True iff the functional graph ``v -> rho[v]`` has exactly one cycle."""
    m = len(rho)
    if any(not 0 <= r < m for r in rho):
        return False
    color = [0] * m  # 0 new, 1 on current path, 2 done
    cycles = 0
    for s in range(m):
        path = []
        v = s
        while color[v] == 0:
            color[v] = 1
            path.append(v)
            v = rho[v]
        if color[v] == 1:
            cycles += 1
        for u in path:
            color[u] = 2
    return cycles == 1


def enumerate_unicycles(g: Graph, max_vertices: int = MAX_VERTICES) -> UnicycleIndex:
    """Index of ``{(x, rho)}``: ``rho`` a spanning unicycle with ``x`` on its cycle.

    Built as (tree rooted at ``x``) + (one outgoing arrow at ``x``); states
    are sorted lexicographically by ``(x, rho)``.
    """
    _guard(g, max_vertices)
    if not is_strongly_connected(g):
        raise StructuralError("unicycle enumeration needs a strongly connected graph")
    keys = []
    for x in range(g.m):
        for tree in _forests(g, {x}):
            for y in g.out_neighbors[x]:
                rho = list(tree)
                rho[x] = y
                keys.append((x, tuple(rho)))
    keys.sort()
    states = [UnicycleState(x, rho, unicycle_cycle(rho, x)) for x, rho in keys]
    lookup = {k: i for i, k in enumerate(keys)}
    zeta = np.array([lookup[(rho[x], rho)] for x, rho in keys], dtype=np.int64)
    return UnicycleIndex(states, lookup, zeta)


def weight_psi(item: Sequence[int], q: QSystem, exact: bool = False):
    """Product of ``q_y(rho(y))`` over the arrows of a tree, forest or unicycle.

    With ``exact=True`` (uniform presets only) the product is a ``Fraction``.
    """
    table = q.exact_Q if exact else q.Q
    if exact and table is None:
        raise DomainError("exact weights are only available for uniform local chains")
    w = Fraction(1) if exact else 1.0
    for y, z in enumerate(item):
        if z == NO_ARROW:
            continue
        val = table[y][z]
        if val == 0:
            raise DomainError(f"edge ({y},{z}) is outside the exit set of {y}")
        w = w * val
    return w


def config_diff(rho: Sequence[int], eta: Sequence[int]) -> set[int]:
    if len(rho) != len(eta):
        raise StructuralError("configurations over different vertex sets")
    return {v for v, (a, b) in enumerate(zip(rho, eta)) if a != b}


def bareiss_det(mat: Sequence[Sequence[int]]) -> int:
    """Exact integer determinant (fraction-free elimination)."""
    a = [[int(v) for v in row] for row in mat]
    n = len(a)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for r in range(k + 1, n):
                if a[r][k] != 0:
                    a[k], a[r] = a[r], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[n - 1][n - 1]


def forest_count(g: Graph, roots: Iterable[int]) -> int:
    """Number of spanning forests oriented toward ``roots`` (matrix-forest theorem).

    Equals the principal minor of the out-degree Laplacian on the non-root
    vertices.
    """
    roots = set(roots)
    if not roots:
        raise DomainError("forest count needs a nonempty root set")
    keep = [v for v in range(g.m) if v not in roots]
    lap = g.laplacian()
    return bareiss_det(lap[np.ix_(keep, keep)].tolist())


def tree_family(g: Graph, q: QSystem, exact: bool = False) -> WeightedFamily:
    items = []
    for r in range(g.m):
        for t in enumerate_rooted_trees(g, r):
            items.append((t, weight_psi(t, q, exact)))
    total = sum((w for _, w in items), Fraction(0) if exact else 0.0)
    return WeightedFamily(items, total)


def markov_tree_pi(g: Graph, q: QSystem) -> np.ndarray:
    """``pi(x)`` proportional to the ψ-weight of trees rooted at ``x``."""
    mass = np.zeros(g.m)
    for r in range(g.m):
        mass[r] = sum(weight_psi(t, q) for t in enumerate_rooted_trees(g, r))
    return mass / mass.sum()


def all_configs(exits: Sequence[Sequence[int]]) -> Iterable[Config]:
    return itertools.product(*exits)
