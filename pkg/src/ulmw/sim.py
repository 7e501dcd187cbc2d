"""Trajectory simulation of locally Markov walks.

A state is the particle position ``x`` together with the configuration
``rho`` of last exits. One step reads row ``rho(x)`` of the local matrix at
``x``, draws the next vertex ``y`` by inverse CDF over the exits in their
stored (ascending) order, sets ``rho(x) = y`` and moves to ``y``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .arbor import UnicycleIndex, enumerate_unicycles, is_spanning_unicycle
from .errors import DomainError, PreconditionError, StructuralError
from .graph import Graph, is_strongly_connected
from .local_chain import LocalChainSpec, period
from .rng import make_rng
from .total_chain import TransitionMatrix, support_is_irreducible


@dataclass(frozen=True)
class WalkState:
    x: int
    rho: tuple[int, ...]


def _draw(cum: Sequence[float], u: float) -> int:
    k = bisect.bisect_right(cum, u)
    return min(k, len(cum) - 1)


def _cum_tables(spec: LocalChainSpec) -> list[list[list[float]]]:
    return [[list(np.cumsum(row)) for row in mx] for mx in spec.matrices]


def step(state: WalkState, spec: LocalChainSpec, rng: np.random.Generator) -> WalkState:
    """One move of the total chain."""
    x = state.x
    prev = state.rho[x]
    if prev not in spec.exits[x]:
        raise DomainError(f"rho({x}) = {prev} is not an exit of {x}")
    row = spec.matrices[x][spec.exits[x].index(prev)]
    y = spec.exits[x][_draw(list(np.cumsum(row)), rng.random())]
    return WalkState(y, state.rho[:x] + (y,) + state.rho[x + 1:])


@dataclass
class Trajectory:
    """Path ``X_0..X_t`` with the local histories it induces.

    ``visit_times[x]`` lists the ``n`` with ``X_n = x``; ``exits[x][k]`` is
    ``X_{n+1}`` for the ``k``-th of those ``n`` that is below ``t``, so the
    final position has no recorded exit yet.
    """

    positions: np.ndarray
    init_rho: tuple[int, ...]
    visit_counts: np.ndarray
    visit_times: list[list[int]] = field(repr=False)
    exits: list[list[int]] = field(repr=False)

    @property
    def steps(self) -> int:
        return len(self.positions) - 1

    def state_at(self, n: int) -> WalkState:
        rho = list(self.init_rho)
        pos = self.positions
        for k in range(n):
            rho[pos[k]] = int(pos[k + 1])
        return WalkState(int(pos[n]), tuple(rho))

    def configs(self) -> np.ndarray:
        """All configurations ``rho_0..rho_t`` as a ``(t + 1, m)`` array."""
        out = np.empty((len(self.positions), len(self.init_rho)), dtype=np.int64)
        rho = np.array(self.init_rho, dtype=np.int64)
        out[0] = rho
        pos = self.positions
        for n in range(1, len(pos)):
            rho[pos[n - 1]] = pos[n]
            out[n] = rho
        return out

    def frequencies(self) -> np.ndarray:
        return self.visit_counts / self.visit_counts.sum()


def run(
    init: WalkState,
    n_steps: int,
    spec: LocalChainSpec,
    seed: int = 0,
    stream: int = 0,
) -> Trajectory:
    """Simulate ``n_steps`` moves from ``init``; deterministic given ``(seed, stream)``."""
    m = spec.m
    if len(init.rho) != m:
        raise StructuralError("initial configuration has the wrong length")
    for x in range(m):
        if init.rho[x] not in spec.exits[x]:
            raise DomainError(f"rho({x}) = {init.rho[x]} is not an exit of {x}")
    rng = make_rng(seed, stream)
    u = rng.random(n_steps)
    cum = _cum_tables(spec)
    pos_of = [{y: i for i, y in enumerate(s)} for s in spec.exits]
    exits_of = spec.exits
    # track the row index rho(x) directly
    row = [pos_of[x][init.rho[x]] for x in range(m)]
    positions = np.empty(n_steps + 1, dtype=np.int64)
    visit_times: list[list[int]] = [[] for _ in range(m)]
    exits: list[list[int]] = [[] for _ in range(m)]
    x = init.x
    positions[0] = x
    for n in range(n_steps):
        k = _draw(cum[x][row[x]], u[n])
        y = exits_of[x][k]
        visit_times[x].append(n)
        exits[x].append(y)
        row[x] = k
        x = y
        positions[n + 1] = x
    visit_times[x].append(n_steps)
    counts = np.bincount(positions, minlength=m)
    return Trajectory(positions, tuple(init.rho), counts, visit_times, exits)


def initial_state(spec: LocalChainSpec, x0: int = 0, rng: np.random.Generator | None = None, q=None) -> WalkState:
    """Start at ``x0`` with the chain's initial exits, or draw each ``rho(x)`` from ``q_x`` when ``rng`` is given."""
    if rng is None:
        return WalkState(x0, tuple(spec.init))
    if q is None:
        raise DomainError("random initial configurations need the stationary rows")
    rho = []
    for x, s in enumerate(spec.exits):
        row = np.array([q.Q[x][y] for y in s])
        rho.append(s[_draw(list(np.cumsum(row / row.sum())), rng.random())])
    return WalkState(x0, tuple(rho))


def ergodic_average(traj: Trajectory, f: Callable[[int], float] | Sequence[float]) -> float:
    """Time average of ``f(X_n)`` over ``n = 0..t``."""
    if len(traj.positions) == 0:
        raise DomainError("empty trajectory")
    vals = np.array([f(x) for x in range(len(traj.visit_counts))], dtype=float) if callable(f) else np.asarray(f, dtype=float)
    return float(vals @ traj.visit_counts / traj.visit_counts.sum())


def replay(traj: Trajectory, spec: LocalChainSpec) -> np.ndarray:
    """Rebuild the path from ``X_0`` and the recorded local histories alone."""
    m = spec.m
    cursor = [0] * m
    out = np.empty_like(traj.positions)
    x = int(traj.positions[0])
    out[0] = x
    for n in range(traj.steps):
        y = traj.exits[x][cursor[x]]
        if y not in spec.exits[x]:
            raise DomainError(f"recorded exit {y} is not an exit of {x}")
        cursor[x] += 1
        x = y
        out[n + 1] = x
    return out


def after_cover_unicyclic(traj: Trajectory) -> bool:
    """Once every vertex has left at least once, each ``rho_n`` is a spanning unicycle through ``X_n``."""
    m = len(traj.init_rho)
    first_exit = [vt[0] if len(ex) else None for vt, ex in zip(traj.visit_times, traj.exits)]
    if any(f is None for f in first_exit):
        return True
    start = max(first_exit) + 1
    configs = traj.configs()
    for n in range(start, len(traj.positions)):
        rho = configs[n]
        if not is_spanning_unicycle(rho):
            return False
        x = int(traj.positions[n])
        v = int(rho[x])
        for _ in range(m):
            if v == x:
                break
            v = int(rho[v])
        else:
            return False
    return True


# --- exact single-step conditionals --------------------------------------


@dataclass(frozen=True)
class SingleStep:
    n: int
    y: int
    x: int
    value: float
    target: float

    @property
    def gap(self) -> float:
        return abs(self.value - self.target)


def single_step_convergence(
    P: TransitionMatrix,
    n: int,
    y: int,
    x: int,
    target: float | None = None,
    start: np.ndarray | int = 0,
    check_ergodic: bool = True,
) -> SingleStep:
    """Exact ``P(X_{n+1} = x | X_n = y)`` by propagating the state distribution.

    ``start`` is a state index (point mass) or a distribution on the states
    of ``P``.
    """
    if check_ergodic:
        dense_support = (P.dense() > 0).astype(float)
        if not support_is_irreducible(P) or period(dense_support) != 1:
            raise PreconditionError("total chain is not ergodic")
    if isinstance(start, (int, np.integer)):
        nu = np.zeros(P.n)
        nu[int(start)] = 1.0
    else:
        nu = np.asarray(start, dtype=float)
    PT = P.matrix.T.tocsr()
    for _ in range(n):
        nu = PT @ nu
    particle = np.array([s[0] for s in P.states])
    at_y = particle == y
    mass = nu[at_y].sum()
    if mass <= 0:
        raise DomainError(f"P(X_{n} = {y}) is zero")
    into_x = np.asarray(P.matrix[:, particle == x].sum(axis=1)).ravel()
    value = float(nu[at_y] @ into_x[at_y] / mass)
    return SingleStep(n, y, x, value, float("nan") if target is None else target)


# --- unicycle sampling ---------------------------------------------------


SAMPLER_METHODS = ("last-exit", "first-entrance")


def sample_unicycle_aldous_broder(
    g: Graph, seed: int = 0, stream: int = 0, start: int | None = None, method: str = "last-exit"
) -> tuple[int, tuple[int, ...]]:
    """One spanning-unicycle state ``(x, rho)`` from a covering simple random walk.

    ``method="last-exit"`` runs the walk to its cover time ``C`` and one
    step further; the last exits before time ``C + 1`` form a tree rooted
    at ``X_{C+1}`` and the walk's next exit from there closes the cycle.
    ``method="first-entrance"`` roots the tree at the start vertex, points
    every other vertex back along the edge of its first entrance, and
    closes the cycle with one uniform exit from the root.

    ``start=None`` draws the start from the degree-proportional stationary
    law of the simple random walk.
    """
    return sample_unicycles(g, 1, seed, stream, start, method)[0]


def sample_unicycles(
    g: Graph, n: int, seed: int = 0, stream: int = 0, start: int | None = None, method: str = "last-exit"
) -> list[tuple[int, tuple[int, ...]]]:
    """``n`` independent samples, vectorized over walkers."""
    if method not in SAMPLER_METHODS:
        raise DomainError(f"unknown sampler method {method!r}")
    if not is_strongly_connected(g):
        raise StructuralError("sampling needs a strongly connected graph")
    if not g.is_symmetric():
        raise StructuralError("sampling needs every edge in both directions")
    m = g.m
    deg = np.array([g.out_degree(x) for x in range(m)])
    table = np.zeros((m, deg.max()), dtype=np.int64)
    for x, nbrs in enumerate(g.out_neighbors):
        table[x, : len(nbrs)] = nbrs
    rng = make_rng(seed, stream)
    if start is None:
        pos = rng.choice(m, size=n, p=deg / deg.sum())
    else:
        pos = np.full(n, start, dtype=np.int64)
    origin = pos.copy()
    rows = np.arange(n)
    seen = np.zeros((n, m), dtype=bool)
    seen[rows, pos] = True
    arrow = np.full((n, m), -1, dtype=np.int64)
    root = np.full(n, -1, dtype=np.int64)
    # phase 0: covering; 1: at C; 2: at C+1 (last-exit only); 3: done
    phase = np.where(seen.all(axis=1), 1, 0).astype(np.int8)

    def uniform_exit(at: np.ndarray) -> np.ndarray:
        return table[at, (rng.random(len(at)) * deg[at]).astype(np.int64)]

    if method == "first-entrance":
        while (phase == 0).any():
            idx = rows[phase == 0]
            cur = pos[idx]
            nxt = uniform_exit(cur)
            fresh = ~seen[idx, nxt]
            arrow[idx[fresh], nxt[fresh]] = cur[fresh]
            seen[idx, nxt] = True
            pos[idx] = nxt
            phase[idx[seen[idx].all(axis=1)]] = 1
        arrow[rows, origin] = uniform_exit(origin)
        return [(int(origin[b]), tuple(int(v) for v in arrow[b])) for b in range(n)]

    while (phase < 3).any():
        idx = rows[phase < 3]
        cur = pos[idx]
        nxt = uniform_exit(cur)
        ph = phase[idx]
        # exits at times 0..C are tree arrows, the exit at C+1 is the root's arrow
        arrow[idx, cur] = nxt
        at_c = ph == 1
        root[idx[at_c]] = nxt[at_c]
        phase[idx[ph >= 1]] += 1
        pos[idx] = nxt
        covering = ph == 0
        ci = idx[covering]
        seen[ci, nxt[covering]] = True
        phase[ci[seen[ci].all(axis=1)]] = 1
    return [(int(root[b]), tuple(int(v) for v in arrow[b])) for b in range(n)]


def unicycle_histogram(
    g: Graph,
    n: int,
    seed: int = 0,
    index: UnicycleIndex | None = None,
    start: int | None = None,
    method: str = "last-exit",
) -> np.ndarray:
    """Counts of sampled states over ``index`` (lexicographic state order)."""
    index = enumerate_unicycles(g) if index is None else index
    counts = np.zeros(len(index), dtype=np.int64)
    for x, rho in sample_unicycles(g, n, seed, 0, start, method):
        counts[index.index_of(x, rho)] += 1
    return counts


def undirected_tree(x: int, rho: Sequence[int]) -> frozenset[frozenset[int]]:
    """Edge set of the tree left after removing the root's arrow, orientation dropped."""
    return frozenset(frozenset((v, int(w))) for v, w in enumerate(rho) if v != x)
