"""Spectra of total chains and unicycle graphs.

Eigenvalues come from a dense nonsymmetric solver and are grouped by
single-linkage clustering, since unicycle matrices are generally not
diagonalizable. Defective eigenvalues scatter by roughly
``(machine eps * norm) ** (1 / block size)``, so two tools are offered on
top of plain clustering: a second coarser merge of cluster centroids, and
:func:`algebraic_multiplicity`, which reads the multiplicity off the
stabilised kernel dimension of ``(M - lam I)^k`` and is insensitive to that
scatter.

Walk counts and subset formulas use Python integers throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .arbor import MAX_VERTICES, UnicycleIndex, bareiss_det, forest_count
from .errors import CapacityError, ConvergenceError, DomainError, PreconditionError, StructuralError
from .graph import Graph
from .local_chain import LocalChainSpec
from .total_chain import TransitionMatrix

DENSE_MAX = 50_000
CERTIFY_MAX = 1_024
WALK_LENGTH_MAX = 12


@dataclass
class SpectrumReport:
    """Grouped eigenvalues ``[(value, multiplicity), ...]``.

    ``flags`` carries free-text notes (formula edge cases, convention
    mismatches); it is empty for a plain numeric spectrum.
    """

    eigenvalues: list[tuple[complex, int]]
    tol: float
    dimension: int
    source: str = "numeric"
    flags: list[str] = field(default_factory=list)

    def multiplicity(self, lam: complex, tol: float | None = None) -> int:
        tol = self.tol if tol is None else tol
        return sum(k for v, k in self.eigenvalues if abs(v - lam) <= tol)

    def as_dict(self) -> dict[complex, int]:
        return {v: k for v, k in self.eigenvalues}

    def total(self) -> int:
        return sum(k for _, k in self.eigenvalues)

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "tol": self.tol,
            "dimension": self.dimension,
            "eigenvalues": [
                {"re": float(np.real(v)), "im": float(np.imag(v)), "multiplicity": int(k)}
                for v, k in self.eigenvalues
            ],
            "flags": list(self.flags),
        }


def _single_linkage(points: np.ndarray, radius: float) -> np.ndarray:
    """Cluster labels for complex ``points`` chained at distance ``radius``."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    xy = np.column_stack([points.real, points.imag])
    pairs = cKDTree(xy).query_pairs(radius, output_type="ndarray")
    graph = csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def _clean(z: complex, tol: float) -> complex:
    re, im = z.real, z.imag
    if abs(im) <= tol:
        im = 0.0
    if abs(re) <= tol:
        re = 0.0
    return complex(re, im)


def group_eigenvalues(values: np.ndarray, tol: float, defect_tol: float | None = None) -> list[tuple[complex, int]]:
    """Group raw eigenvalues; optionally merge group centroids within ``defect_tol``."""
    values = np.asarray(values, dtype=complex)
    labels = _single_linkage(values, tol)
    groups = [values[labels == k] for k in range(labels.max() + 1)] if len(values) else []
    if defect_tol is not None and len(groups) > 1:
        cents = np.array([g.mean() for g in groups])
        outer = _single_linkage(cents, defect_tol)
        groups = [np.concatenate([groups[i] for i in np.flatnonzero(outer == k)]) for k in range(outer.max() + 1)]
    out = [(_clean(complex(g.mean()), tol), len(g)) for g in groups]
    out.sort(key=lambda vk: (vk[0].real, vk[0].imag))
    return out


def _as_dense(matrix) -> np.ndarray:
    if isinstance(matrix, TransitionMatrix):
        return matrix.dense()
    if hasattr(matrix, "toarray"):
        return matrix.toarray()
    return np.asarray(matrix)


def eig_spectrum(matrix, tol: float = 1e-6, defect_tol: float | None = None, max_dim: int = DENSE_MAX) -> SpectrumReport:
    """Eigenvalues with algebraic multiplicities.

    Parameters
    ----------
    matrix : array-like, sparse matrix or TransitionMatrix
        Square matrix.
    tol : float
        Single-linkage radius for grouping.
    defect_tol : float, optional
        Second-stage radius applied to group centroids. Useful for integer
        matrices with large Jordan blocks, whose computed eigenvalues fan
        out well beyond ``tol``.
    """
    a = _as_dense(matrix)
    a = a.astype(complex if np.iscomplexobj(a) else float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructuralError(f"need a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n > max_dim:
        raise CapacityError(f"dense eigensolve guarded at dimension {max_dim}, got {n}")
    try:
        vals = scipy.linalg.eigvals(a, check_finite=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    return SpectrumReport(group_eigenvalues(vals, tol, defect_tol), tol, n)


def algebraic_multiplicity(matrix, lam: complex, tol: float = 1e-6, max_dim: int = CERTIFY_MAX) -> int:
    """Dimension of the generalized eigenspace of ``lam``.

    Computes ``dim ker (M - lam I)^k`` for growing ``k`` until it stops
    changing; a singular value counts as zero when it is at most ``tol``
    times the largest one.
    """
    a = _as_dense(matrix)
    n = a.shape[0]
    if n > max_dim:
        raise CapacityError(f"kernel-chain multiplicity guarded at dimension {max_dim}, got {n}")
    dtype = complex if np.iscomplexobj(a) or complex(lam).imag != 0 else float
    b = a.astype(dtype) - (lam if dtype is complex else complex(lam).real) * np.eye(n)
    power = np.eye(n, dtype=dtype)
    prev = -1
    for _ in range(n + 1):
        power = power @ b
        # rescale to keep entries of order one; the kernel is unaffected
        scale = np.abs(power).max()
        if scale > 0:
            power = power / scale
        s = np.linalg.svd(power, compute_uv=False)
        null = n if s[0] == 0 else int(np.count_nonzero(s <= tol * s[0]))
        if null == prev or null == n:
            return null
        prev = null
    return prev


# --- unicycle graph ------------------------------------------------------


def unicycle_adjacency(index: UnicycleIndex, g: Graph, self_loops: bool = False) -> csr_matrix:
    """Adjacency of the unicycle graph: one edge per total-chain move.

    With ``self_loops=False`` the diagonal is dropped (a move that returns
    to the same state only exists through a loop edge ``x -> x`` with
    ``rho(x) == x``). Keep it with ``self_loops=True`` to count the moves of
    the total chain itself.
    """
    rows, cols = [], []
    for i, s in enumerate(index.states):
        for y in g.out_neighbors[s.x]:
            rho = s.rho[: s.x] + (y,) + s.rho[s.x + 1:]
            j = index.lookup[(y, rho)]
            if i == j and not self_loops:
                continue
            rows.append(i)
            cols.append(j)
    n = len(index)
    return csr_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n, n))


def _int_matrix_power_trace(a: np.ndarray, k: int) -> int:
    """Exact ``trace(a^k)`` for a nonnegative integer matrix."""
    n = a.shape[0]
    if k == 0:
        return n
    bound = int(a.sum(axis=1).max()) if n else 0
    fits = n == 0 or (bound ** k) * max(n, 1) < 2**62
    if fits:
        p = np.eye(n, dtype=np.int64)
        for _ in range(k):
            p = p @ a
        return int(np.trace(p))
    p = np.eye(n, dtype=object)
    ao = a.astype(object)
    for _ in range(k):
        p = p.dot(ao)
    return int(sum(p[i, i] for i in range(n)))


def closed_walks(g: Graph, k: int) -> int:
    """Closed walks of length ``k`` in ``g`` (loops count as edges)."""
    return _int_matrix_power_trace(g.adjacency(), k)


def _subsets(m: int):
    for r in range(m + 1):
        yield from itertools.combinations(range(m), r)


def subset_coefficient(g: Graph, subset: Sequence[int], convention: str = "complement") -> int:
    """Weight of the induced subgraph on ``subset`` in the subset-sum identity.

    ``convention="complement"`` gives ``det(Laplacian on V minus S - I)``,
    which equals the alternating forest sum
    ``sum_{U >= S} (-1)^{|U - S|} tau(G, U)``. ``convention="subset"``
    restricts the Laplacian to ``S`` itself; ``"alternating"`` evaluates the
    forest sum directly.
    """
    s = sorted(set(subset))
    lap = g.laplacian()
    if convention == "alternating":
        rest = [v for v in range(g.m) if v not in s]
        total = 0
        for r in range(len(rest) + 1):
            for extra in itertools.combinations(rest, r):
                u = s + list(extra)
                if u:
                    total += (-1) ** r * forest_count(g, u)
        return total
    if convention == "complement":
        keep = [v for v in range(g.m) if v not in s]
    elif convention == "subset":
        keep = s
    else:
        raise DomainError(f"unknown convention {convention!r}")
    sub = lap[np.ix_(keep, keep)] - np.eye(len(keep), dtype=np.int64)
    return bareiss_det(sub.tolist())


@dataclass(frozen=True)
class WalkCount:
    k: int
    trace: int
    formula: int
    formula_subset_convention: int

    @property
    def match(self) -> bool:
        return self.trace == self.formula


def closed_walk_count(g: Graph, k: int, index: UnicycleIndex | None = None, max_vertices: int = MAX_VERTICES) -> WalkCount:
    """Closed walks of length ``k`` in the unicycle graph, counted two ways.

    The trace side counts total-chain moves (self-moves included, which
    only arise on graphs with loops). The formula side sums closed walks of
    every induced subgraph weighted by :func:`subset_coefficient`; the
    literal restriction-to-``S`` weighting is reported alongside.
    """
    if k < 0 or k > WALK_LENGTH_MAX:
        raise CapacityError(f"walk length must lie in 0..{WALK_LENGTH_MAX}, got {k}")
    if g.m > max_vertices:
        raise CapacityError(f"subset sums guarded at m <= {max_vertices}, got {g.m}")
    if index is None:
        from .arbor import enumerate_unicycles

        index = enumerate_unicycles(g, max_vertices)
    a = unicycle_adjacency(index, g, self_loops=True).toarray()
    trace = _int_matrix_power_trace(a, k)
    formula = 0
    literal = 0
    for s in _subsets(g.m):
        if not s:
            # the empty graph has no walks
            continue
        w = closed_walks(g.induced(s), k)
        if w:
            formula += w * subset_coefficient(g, s, "complement")
            literal += w * subset_coefficient(g, s, "subset")
    return WalkCount(k, trace, formula, literal)


def ucyc_multiplicity(g: Graph, lam: complex, convention: str = "complement", tol: float = 1e-6) -> int:
    """Multiplicity of a nonzero eigenvalue of the unicycle adjacency via induced subgraphs."""
    if abs(lam) <= tol:
        raise DomainError("the subset formula only covers nonzero eigenvalues")
    if g.m > MAX_VERTICES:
        raise CapacityError(f"subset sums guarded at m <= {MAX_VERTICES}, got {g.m}")
    total = 0
    for s in _subsets(g.m):
        if not s:
            continue
        k = algebraic_multiplicity(g.induced(s).adjacency(), lam, tol)
        if k:
            total += k * subset_coefficient(g, s, convention)
    return total


def induced_nonzero_eigenvalues(g: Graph, tol: float = 1e-6) -> list[complex]:
    """Distinct nonzero eigenvalues over all induced subgraphs."""
    vals = []
    for s in _subsets(g.m):
        if s:
            vals.extend(scipy.linalg.eigvals(g.induced(s).adjacency().astype(float)))
    grouped = group_eigenvalues(np.array(vals), tol)
    return [v for v, _ in grouped if abs(v) > tol]


def ucyc_spectrum_formula(g: Graph, convention: str = "complement", tol: float = 1e-6) -> SpectrumReport:
    """Nonzero unicycle-adjacency spectrum predicted by the subset formula.

    The zero eigenvalue receives the remaining dimension.
    """
    from .arbor import enumerate_unicycles

    n = len(enumerate_unicycles(g))
    out = []
    for lam in induced_nonzero_eigenvalues(g, tol):
        k = ucyc_multiplicity(g, lam, convention, tol)
        if k:
            out.append((lam, k))
    flags = []
    rest = n - sum(k for _, k in out)
    if rest < 0:
        flags.append(f"nonzero multiplicities exceed the dimension {n} by {-rest}")
    elif rest:
        out.append((0j, rest))
    if any(k < 0 for _, k in out):
        flags.append("negative multiplicity produced")
    out.sort(key=lambda vk: (vk[0].real, vk[0].imag))
    return SpectrumReport(out, tol, n, source=f"formula:{convention}", flags=flags)


# --- Laplacian on K_m ----------------------------------------------------


@dataclass(frozen=True)
class FormulaTerm:
    index: int
    eigenvalue: int
    multiplicity: Fraction
    negative_exponent: bool
    integral: bool


@dataclass
class KmFormulaReport:
    m: int
    terms: list[FormulaTerm]
    stated_eigenvalues: list[int]
    flags: list[str]

    @property
    def total(self) -> Fraction:
        return sum((t.multiplicity for t in self.terms), Fraction(0))

    def spectrum(self) -> SpectrumReport:
        pairs = [(complex(t.eigenvalue), int(t.multiplicity)) for t in self.terms if t.integral and t.multiplicity]
        return SpectrumReport(sorted(pairs, key=lambda vk: vk[0].real), 0.0, int(self.total), "formula:km-laplacian", list(self.flags))

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "terms": [
                {
                    "i": t.index,
                    "eigenvalue": t.eigenvalue,
                    "multiplicity": str(t.multiplicity),
                    "negative_exponent": t.negative_exponent,
                    "integral": t.integral,
                }
                for t in self.terms
            ],
            "stated_eigenvalues": self.stated_eigenvalues,
            "total": str(self.total),
            "flags": self.flags,
        }


def km_laplacian_spectrum_formula(m: int) -> KmFormulaReport:
    """Evaluate the three-case multiplicity formula for the K_m unicycle Laplacian.

    Index ``i`` runs over ``-1..m-1`` and maps to eigenvalue ``m - 1 - i``.
    Every term is kept as an exact fraction; nothing is rounded.
    """
    if m < 3:
        raise DomainError(f"formula needs m >= 3, got {m}")
    terms = []
    for i in range(-1, m):
        neg = False
        if i == -1:
            val = Fraction(m ** (m - 1) - (m - 1) ** (m - 1))
        elif i == 0:
            val = Fraction(m ** (m - 1) * (m - 2))
        else:
            e = m - i - 2
            neg = e < 0
            val = i * math.comb(m, i + 1) * Fraction(m - 1) ** e
        terms.append(FormulaTerm(i, m - 1 - i, val, neg, val.denominator == 1))
    stated = list(range(-1, m))
    flags = []
    for t in terms:
        if t.negative_exponent:
            flags.append(f"i={t.index}: negative exponent in (m-1)^(m-i-2)")
        if not t.integral:
            flags.append(f"i={t.index}: non-integer multiplicity {t.multiplicity}")
    mapped = sorted(t.eigenvalue for t in terms)
    if mapped != stated:
        flags.append(f"index map gives eigenvalues {mapped}, stated set is {stated}")
    return KmFormulaReport(m, terms, stated, flags)


@dataclass
class UnicycleLaplacian:
    matrix: csr_matrix
    diagonal: int
    degree: int
    convention: str
    flags: list[str]


def regular_degree(g: Graph) -> int:
    degs = {g.out_degree(x) for x in range(g.m)}
    if len(degs) != 1:
        raise PreconditionError(f"graph is not regular (out-degrees {sorted(degs)})")
    return degs.pop()


def laplacian_matrix(index: UnicycleIndex, g: Graph, convention: str = "loop-free") -> UnicycleLaplacian:
    """``L = d I - A`` on the unicycle graph of a regular graph.

    ``convention="loop-free"`` drops the adjacency diagonal and uses the
    loop-free degree ``d`` (``m - 1`` on ``K_m`` with or without loops).
    ``convention="degree"`` keeps self-moves and uses the full out-degree,
    which makes ``L`` a genuine graph Laplacian with zero row sums.
    """
    r = regular_degree(g)
    loops = g.has_loops()
    if convention == "loop-free":
        d = r - 1 if loops else r
        a = unicycle_adjacency(index, g, self_loops=False)
    elif convention == "degree":
        d = r
        a = unicycle_adjacency(index, g, self_loops=True)
    else:
        raise DomainError(f"unknown convention {convention!r}")
    n = len(index)
    lap = (d * _identity(n) - a).tocsr()
    flags = []
    if loops and convention == "loop-free":
        flags.append(f"diagonal {d} differs from the out-degree {r} counting loops; rows do not sum to zero")
    return UnicycleLaplacian(lap, d, r, convention, flags)


def _identity(n: int) -> csr_matrix:
    return csr_matrix((np.ones(n, dtype=np.int64), (np.arange(n), np.arange(n))), shape=(n, n))


# --- range of P ----------------------------------------------------------


@dataclass(frozen=True)
class RangeCheck:
    passed: bool
    max_deviation: float
    rank: int


def range_constancy_check(P: TransitionMatrix, index: UnicycleIndex, spec: LocalChainSpec, tol: float = 1e-9) -> RangeCheck:
    """Range vectors of ``P`` do not see the root's own outgoing arrow.

    States ``(x, rho)`` that agree everywhere except at ``rho(x)`` form a
    group; every vector in an orthonormal basis of the range must be
    constant on each group within ``tol``.
    """
    if not spec.is_uniform():
        raise PreconditionError("range constancy is only asserted for uniform local chains")
    a = P.dense()
    u, s, _ = np.linalg.svd(a)
    rank = int(np.count_nonzero(s > 1e-10 * max(s[0], 1.0)))
    basis = u[:, :rank]
    groups: dict[tuple[int, tuple[int, ...]], list[int]] = {}
    for i, st in enumerate(index.states):
        key = (st.x, st.rho[: st.x] + (-1,) + st.rho[st.x + 1:])
        groups.setdefault(key, []).append(i)
    dev = 0.0
    for members in groups.values():
        if len(members) > 1:
            block = basis[members]
            dev = max(dev, float(np.abs(block - block[0]).max()))
    return RangeCheck(dev <= tol, dev, rank)
