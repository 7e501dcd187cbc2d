"""Per-vertex local chains of a locally Markov walk.

Each vertex ``x`` carries an exit set ``S_x`` (a subset of its out-neighbors,
kept ascending) and a row-stochastic matrix ``M_x`` over ``S_x``: entry
``M_x[i, j]`` is the probability that the next exit from ``x`` is ``S_x[j]``
given that the previous exit was ``S_x[i]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    DomainError,
    NonUniqueStationaryError,
    PresetShapeError,
    StructuralError,
)
from .graph import Graph

STOCHASTIC_TOL = 1e-12
EIG_TOL = 1e-9
DIRECT_SOLVE_MAX = 64


@dataclass(frozen=True)
class LocalChainSpec:
    exits: tuple[tuple[int, ...], ...]
    matrices: tuple[np.ndarray, ...]
    init: tuple[int, ...]
    name: str = "custom"

    @property
    def m(self) -> int:
        return len(self.exits)

    def exit_pos(self, x: int, y: int) -> int:
        try:
            return self.exits[x].index(y)
        except ValueError:
            raise DomainError(f"{y} is not an exit of vertex {x}") from None

    def prob(self, x: int, prev: int, nxt: int) -> float:
        """``m_x(prev, nxt)``; zero when ``nxt`` is not an exit."""
        if nxt not in self.exits[x]:
            return 0.0
        return float(self.matrices[x][self.exit_pos(x, prev), self.exit_pos(x, nxt)])

    def walk_graph(self) -> Graph:
        """The graph whose edges are ``(x, y)`` for ``y`` in ``S_x``."""
        return Graph(self.m, tuple(tuple(s) for s in self.exits))

    def is_positive(self) -> bool:
        return all(np.all(mx > 0) for mx in self.matrices)

    def is_uniform(self) -> bool:
        return all(np.allclose(mx, 1.0 / mx.shape[0], atol=0, rtol=1e-14) for mx in self.matrices)

    def to_json(self) -> dict:
        return {
            "local": {
                str(x): {"S": list(s), "M": self.matrices[x].tolist(), "init": self.init[x]}
                for x, s in enumerate(self.exits)
            }
        }


@dataclass(frozen=True)
class StationaryRow:
    vertex: int
    q: np.ndarray


@dataclass(frozen=True)
class QSystem:
    Q: np.ndarray
    pi: np.ndarray
    exact_Q: tuple[tuple[Fraction, ...], ...] | None = field(default=None, compare=False)


def make_spec(
    g: Graph,
    matrices: Sequence[np.ndarray],
    exits: Sequence[Sequence[int]] | None = None,
    init: Sequence[int] | None = None,
    name: str = "custom",
) -> LocalChainSpec:
    """Assemble a spec; exits default to the out-neighbors, init to ``S_x[0]``."""
    if exits is None:
        exits = g.out_neighbors
    exits = tuple(tuple(int(y) for y in s) for s in exits)
    mats = tuple(np.array(mx, dtype=float) for mx in matrices)
    if init is None:
        init = tuple(s[0] for s in exits)
    spec = LocalChainSpec(exits, mats, tuple(int(i) for i in init), name)
    _check_shapes(g, spec)
    return spec


def _check_shapes(g: Graph, spec: LocalChainSpec) -> None:
    if spec.m != g.m or len(spec.matrices) != g.m or len(spec.init) != g.m:
        raise StructuralError(f"spec covers {spec.m} vertices, graph has {g.m}")
    for x, (s, mx) in enumerate(zip(spec.exits, spec.matrices)):
        k = len(s)
        if k == 0:
            raise StructuralError(f"vertex {x} has an empty exit set")
        if mx.shape != (k, k):
            raise StructuralError(f"M_{x} has shape {mx.shape}, expected {(k, k)}")
        if list(s) != sorted(set(s)):
            raise StructuralError(f"exit set of {x} must be ascending and duplicate-free")


def _support_graph(mx: np.ndarray) -> csr_matrix:
    return csr_matrix((mx > 0).astype(np.int8))


def is_irreducible(mx: np.ndarray) -> bool:
    n, _ = connected_components(_support_graph(mx), directed=True, connection="strong")
    return n == 1


def period(mx: np.ndarray) -> int:
    """Period of an irreducible matrix: gcd of level defects over support edges."""
    adj = _support_graph(mx)
    level = {0: 0}
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
                if int(v) not in level:
                    level[int(v)] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    d = 0
    rows, cols = adj.nonzero()
    for u, v in zip(rows, cols):
        d = math.gcd(d, level[int(u)] + 1 - level[int(v)])
    return abs(d)


def validate(g: Graph, spec: LocalChainSpec, mode: str = "strict") -> list[str]:
    """Return the list of violations of ``spec`` against ``g``.

    ``strict`` additionally demands irreducible, aperiodic local chains;
    ``simulation`` only needs row-stochastic matrices (the rotor walk lives
    here). Shape mismatches raise :class:`StructuralError` instead of being
    reported.
    """
    if mode not in ("strict", "simulation"):
        raise ValueError(f"unknown validation mode {mode!r}")
    _check_shapes(g, spec)
    problems = []
    for x, (s, mx) in enumerate(zip(spec.exits, spec.matrices)):
        bad = [y for y in s if not g.has_edge(x, y)]
        if bad:
            problems.append(f"vertex {x}: exits {bad} are not out-neighbors")
        if spec.init[x] not in s:
            problems.append(f"vertex {x}: initial exit {spec.init[x]} not in S_x")
        if np.any(mx < 0) or np.any(mx > 1):
            problems.append(f"vertex {x}: entries outside [0, 1]")
        dev = np.abs(mx.sum(axis=1) - 1.0).max()
        if dev > STOCHASTIC_TOL:
            problems.append(f"vertex {x}: row sums deviate from 1 by {dev:.3g} (not stochastic)")
        if mode == "strict":
            if not is_irreducible(mx):
                problems.append(f"vertex {x}: local chain is reducible")
            elif period(mx) != 1:
                problems.append(f"vertex {x}: local chain has period {period(mx)} (aperiodicity violated)")
    return problems


def _power_stationary(mx: np.ndarray, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    lazy = 0.5 * (np.eye(mx.shape[0]) + mx)
    v = np.full(mx.shape[0], 1.0 / mx.shape[0])
    for _ in range(max_iter):
        w = v @ lazy
        if np.abs(w - v).sum() < tol:
            return w / w.sum()
        v = w
    return v / v.sum()


def stationary_vector(mx: np.ndarray) -> np.ndarray:
    """Unique stationary distribution of an irreducible stochastic matrix."""
    mx = np.asarray(mx, dtype=float)
    if not is_irreducible(mx):
        raise NonUniqueStationaryError("matrix is reducible; stationary row not unique")
    k = mx.shape[0]
    if k == 1:
        return np.ones(1)
    if k > DIRECT_SOLVE_MAX:
        return _power_stationary(mx)
    a = mx.T - np.eye(k)
    a[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    q = np.linalg.solve(a, b)
    q = np.clip(q, 0.0, None)
    return q / q.sum()


def stationary_row(mx: np.ndarray, vertex: int = -1) -> StationaryRow:
    return StationaryRow(vertex, stationary_vector(mx))


def build_q_system(g: Graph, spec: LocalChainSpec) -> QSystem:
    """Stack the local stationary rows into ``Q`` and solve ``pi Q = pi``."""
    _check_shapes(g, spec)
    Q = np.zeros((g.m, g.m))
    for x, (s, mx) in enumerate(zip(spec.exits, spec.matrices)):
        Q[x, list(s)] = stationary_vector(mx)
    pi = stationary_vector(Q)
    exact = None
    if spec.is_uniform():
        exact = tuple(
            tuple(Fraction(1, len(spec.exits[x])) if y in spec.exits[x] else Fraction(0) for y in range(g.m))
            for x in range(g.m)
        )
    return QSystem(Q, pi, exact)


def local_time_reversal(mx: np.ndarray, q: np.ndarray) -> np.ndarray:
    """``m̂(z, y) = m(y, z) q(y) / q(z)``, i.e. ``diag(q)^-1 M^T diag(q)``."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise DomainError("time reversal needs a strictly positive stationary row")
    return (np.asarray(mx).T * q[None, :]) / q[:, None]


def reversed_spec(spec: LocalChainSpec) -> LocalChainSpec:
    mats = tuple(local_time_reversal(mx, stationary_vector(mx)) for mx in spec.matrices)
    return LocalChainSpec(spec.exits, mats, spec.init, spec.name + "^")


def is_locally_reversible(spec: LocalChainSpec, tol: float = 1e-10) -> bool:
    for mx in spec.matrices:
        q = stationary_vector(mx)
        if np.abs(local_time_reversal(mx, q) - mx).max() > tol:
            return False
    return True


def _left_eigvec(mx: np.ndarray, lam: float, tol: float) -> np.ndarray | None:
    w, v = np.linalg.eig(mx.T)
    i = int(np.argmin(np.abs(w - lam)))
    if abs(w[i] - lam) > tol:
        return None
    f = v[:, i]
    f = f / f[int(np.argmax(np.abs(f)))]
    return np.real(f)


def is_locally_lambda_uniform(
    spec: LocalChainSpec, lam: float, tol: float = EIG_TOL
) -> tuple[bool, list[np.ndarray] | None]:
    """Check whether every local matrix has eigenvalue ``lam``.

    Returns ``(True, witnesses)`` with one left eigenvector ``f_x`` per vertex
    (``f_x M_x = lam f_x``, scaled to max-abs 1), else ``(False, None)``.
    """
    witnesses = []
    for mx in spec.matrices:
        f = _left_eigvec(mx, lam, tol)
        if f is None:
            return False, None
        witnesses.append(f)
    return True, witnesses


def _uniform_matrix(k: int) -> np.ndarray:
    return np.full((k, k), 1.0 / k)


def preset(kind: str, g: Graph, param: float | None = None) -> LocalChainSpec:
    """Local chains for the standard examples.

    ``uniform`` (simple random walk) works on any graph. ``rotor`` and
    ``p_walk`` need out-degree two everywhere. ``excited`` needs a loop plus
    the two cycle neighbors ``x-1, x+1`` at every vertex and starts every
    local chain at the loop.
    """
    if kind == "uniform":
        return make_spec(g, [_uniform_matrix(g.out_degree(x)) for x in range(g.m)], name="uniform")
    if kind in ("rotor", "p_walk"):
        if any(g.out_degree(x) != 2 for x in range(g.m)):
            raise PresetShapeError(f"{kind} preset needs out-degree 2 at every vertex")
        if kind == "rotor":
            mx = np.array([[0.0, 1.0], [1.0, 0.0]])
            return make_spec(g, [mx] * g.m, name="rotor")
        if param is None or not 0 <= param <= 1:
            raise PresetShapeError("p_walk needs a flip probability p in [0, 1]")
        p = float(param)
        mx = np.array([[1 - p, p], [p, 1 - p]])
        return make_spec(g, [mx] * g.m, name=f"p_walk({p:g})")
    if kind == "excited":
        if param is None or not 0 <= param <= 1:
            raise PresetShapeError("excited preset needs a drift eps in [0, 1]")
        eps = float(param)
        mats = []
        for x in range(g.m):
            left, right = (x - 1) % g.m, (x + 1) % g.m
            s = g.out_neighbors[x]
            if g.m < 3 or set(s) != {left, x, right}:
                raise PresetShapeError(f"excited preset needs exits {{x-1, x, x+1}} at vertex {x}")
            i = {y: j for j, y in enumerate(s)}
            mx = np.zeros((3, 3))
            mx[i[x], i[right]] = (1 + eps) / 2
            mx[i[x], i[left]] = (1 - eps) / 2
            for prev in (left, right):
                mx[i[prev], i[right]] = 0.5
                mx[i[prev], i[left]] = 0.5
            mats.append(mx)
        return make_spec(g, mats, init=range(g.m), name=f"excited({eps:g})")
    raise PresetShapeError(f"unknown preset {kind!r}")


def parse_preset(text: str) -> tuple[str, float | None]:
    """``"p_walk:0.3"`` -> ``("p_walk", 0.3)``; ``"uniform"`` -> ``("uniform", None)``."""
    kind, _, arg = text.partition(":")
    return kind, (float(arg) if arg else None)


def spec_from_descriptor(g: Graph, desc: dict) -> LocalChainSpec:
    """Read ``{"local": {"x": {"S": [..], "M": [[..]], "init": y}}}`` or ``{"preset": {...}}``."""
    if "preset" in desc:
        p = desc["preset"]
        if isinstance(p, str):
            kind, param = parse_preset(p)
            return preset(kind, g, param)
        param = p.get("p", p.get("eps"))
        return preset(p["kind"], g, param)
    local = desc.get("local")
    if local is None:
        raise StructuralError("chain descriptor needs 'local' or 'preset'")
    exits, mats, init = [], [], []
    for x in range(g.m):
        entry = local.get(str(x))
        if entry is None:
            raise StructuralError(f"chain descriptor misses vertex {x}")
        s = [int(y) for y in entry["S"]]
        order = sorted(range(len(s)), key=s.__getitem__)
        mx = np.asarray(entry["M"], dtype=float)[np.ix_(order, order)]
        exits.append([s[i] for i in order])
        mats.append(mx)
        init.append(int(entry.get("init", min(s))))
    return make_spec(g, mats, exits=exits, init=init, name=desc.get("name", "custom"))


def load_spec(g: Graph, path) -> LocalChainSpec:
    with open(path) as fh:
        return spec_from_descriptor(g, json.load(fh))
