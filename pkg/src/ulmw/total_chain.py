"""The total chain ``(X_n, rho_n)`` of a locally Markov walk.

Matrices are ``scipy.sparse.csr_matrix`` over a :class:`UnicycleIndex`
(recurrent states) or over the full product space ``V x prod S_x``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .arbor import UnicycleIndex, weight_psi
from .errors import CapacityError, DomainError, PreconditionError, StructuralError
from .graph import Graph
from .local_chain import (
    LocalChainSpec,
    QSystem,
    is_locally_lambda_uniform,
    is_locally_reversible,
    local_time_reversal,
    stationary_vector,
)

FULL_CHAIN_MAX = 200_000


@dataclass
class TransitionMatrix:
    """Sparse row-stochastic matrix together with the labels of its states."""

    states: list[tuple[int, tuple[int, ...]]]
    matrix: csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def _labels(index: UnicycleIndex) -> list[tuple[int, tuple[int, ...]]]:
    return [(s.x, s.rho) for s in index.states]


def _redirect(rho: tuple[int, ...], x: int, y: int) -> tuple[int, ...]:
    return rho[:x] + (y,) + rho[x + 1:]


def _forward_rows(spec: LocalChainSpec, states, lookup) -> csr_matrix:
    rows, cols, vals = [], [], []
    for i, (x, rho) in enumerate(states):
        k = spec.exit_pos(x, rho[x])
        row = spec.matrices[x][k]
        for j, y in enumerate(spec.exits[x]):
            if row[j] == 0:
                continue
            target = (y, _redirect(rho, x, y))
            try:
                c = lookup[target]
            except KeyError:
                raise StructuralError(f"successor {target} of {(x, rho)} is not indexed") from None
            rows.append(i)
            cols.append(c)
            vals.append(row[j])
    n = len(states)
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def build_total_P(g: Graph, spec: LocalChainSpec, index: UnicycleIndex) -> TransitionMatrix:
    """Total chain restricted to the recurrent states in ``index``.

    From ``(x, rho)`` the particle picks ``y`` with probability
    ``m_x(rho(x), y)``, the arrow at ``x`` is turned to ``y`` and the particle
    moves to ``y``.
    """
    if spec.m != g.m:
        raise StructuralError("spec and graph disagree on the vertex count")
    states = _labels(index)
    return TransitionMatrix(states, _forward_rows(spec, states, index.lookup))


def build_full_chain(g: Graph, spec: LocalChainSpec, max_states: int = FULL_CHAIN_MAX) -> TransitionMatrix:
    """Same transition rule on every state of ``V x prod_x S_x``."""
    size = g.m
    for s in spec.exits:
        size *= len(s)
    if size > max_states:
        raise CapacityError(f"full chain has {size} states, guard is {max_states}")
    states = [(x, rho) for x in range(g.m) for rho in itertools.product(*spec.exits)]
    lookup = {s: i for i, s in enumerate(states)}
    return TransitionMatrix(states, _forward_rows(spec, states, lookup))


def recurrent_states(full: TransitionMatrix) -> set[tuple[int, tuple[int, ...]]]:
    """Union of the closed communicating classes of the support digraph."""
    support = full.matrix.copy()
    support.data = np.ones_like(support.data)
    ncomp, labels = connected_components(support, directed=True, connection="strong")
    coo = support.tocoo()
    leaks = np.zeros(ncomp, dtype=bool)
    leaks[labels[coo.row][labels[coo.row] != labels[coo.col]]] = True
    return {full.states[i] for i in range(full.n) if not leaks[labels[i]]}


def support_is_irreducible(P: TransitionMatrix) -> bool:
    n, _ = connected_components(P.matrix, directed=True, connection="strong")
    return n == 1


def stationary_mu(index: UnicycleIndex, q: QSystem) -> np.ndarray:
    """``mu(x, rho)`` proportional to the product of ``q_y(rho(y))`` over all ``y``."""
    w = np.array([weight_psi(s.rho, q) for s in index.states])
    if np.any(w <= 0):
        raise DomainError("stationary weights must be positive on every recurrent state")
    return w / w.sum()


def power_stationary(P: TransitionMatrix, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Left fixed point of ``P`` by power iteration on the lazy chain ``(I + P) / 2``.

    The lazy step averages consecutive powers of ``P`` with binomial weights,
    so periodic chains (rotor walks) still converge.
    """
    PT = P.matrix.T.tocsr()
    v = np.full(P.n, 1.0 / P.n)
    for _ in range(max_iter):
        w = 0.5 * (v + PT @ v)
        if np.abs(w - v).sum() < tol:
            return w / w.sum()
        v = w
    return v / v.sum()


def stationarity_residual(P: TransitionMatrix, mu: np.ndarray) -> float:
    return float(np.abs(P.matrix.T @ mu - mu).max())


@dataclass
class Decomposition:
    B_loc: csr_matrix
    zeta: np.ndarray
    groups: dict[tuple[int, tuple[int, ...]], list[int]]
    exact: bool
    block_diagonal: bool


def _group_key(x: int, rho: tuple[int, ...]) -> tuple[int, tuple[int, ...]]:
    return x, _redirect(rho, x, -1)


def decompose(P: TransitionMatrix, index: UnicycleIndex) -> Decomposition:
    """Split ``P = B_loc A_CYC`` with ``A_CYC`` the permutation ``zeta``.

    ``B_loc = P A_CYC^T`` is ``P`` with column ``zeta(j)`` moved to column
    ``j``; no arithmetic touches the stored values, so the reconstruction
    check is exact.
    """
    zeta = index.zeta
    inv = index.zeta_inverse
    coo = P.matrix.tocoo()
    B = csr_matrix((coo.data.copy(), (coo.row, inv[coo.col])), shape=P.matrix.shape)
    # reconstruct P from B by sending column j back to zeta(j)
    bc = B.tocoo()
    back = csr_matrix((bc.data, (bc.row, zeta[bc.col])), shape=P.matrix.shape)
    diff = back - P.matrix
    exact = diff.nnz == 0 or np.abs(diff.data).max() == 0.0

    groups: dict[tuple[int, tuple[int, ...]], list[int]] = {}
    key_of = []
    for i, s in enumerate(index.states):
        k = _group_key(s.x, s.rho)
        groups.setdefault(k, []).append(i)
        key_of.append(k)
    block_diagonal = all(key_of[r] == key_of[c] for r, c in zip(bc.row, bc.col))
    return Decomposition(B, zeta, groups, exact, block_diagonal)


def _reverse_rows(spec: LocalChainSpec, index: UnicycleIndex) -> csr_matrix:
    reversed_m = [local_time_reversal(mx, stationary_vector(mx)) for mx in spec.matrices]
    inv = index.zeta_inverse
    rows, cols, vals = [], [], []
    for i, s in enumerate(index.states):
        # predecessor of the particle on its cycle, with the same arrows
        pred = index.states[inv[i]].x
        prev_pos = spec.exit_pos(pred, s.rho[pred])
        row = reversed_m[pred][prev_pos]
        for j, z in enumerate(spec.exits[pred]):
            if row[j] == 0:
                continue
            rows.append(i)
            cols.append(index.index_of(pred, _redirect(s.rho, pred, z)))
            vals.append(row[j])
    n = len(index)
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def time_reversal_total(index: UnicycleIndex, spec: LocalChainSpec, q: QSystem | None = None) -> TransitionMatrix:
    """Reversed total chain: step back along the cycle, then resample that arrow.

    From ``(y, eta)`` with ``x`` the cycle predecessor of ``y``, move to
    ``(x, eta with eta(x) := z)`` with probability ``m̂_x(y, z)``.
    """
    if q is not None and np.any(q.Q[q.Q > 0] <= 0):
        raise DomainError("reversal needs positive local stationary rows")
    return TransitionMatrix(_labels(index), _reverse_rows(spec, index))


def duality_gap(P: TransitionMatrix, P_hat: TransitionMatrix, mu: np.ndarray) -> float:
    """``max |mu(a) p(a, b) - mu(b) p̂(b, a)|`` over all pairs."""
    lhs = P.matrix.multiply(mu[:, None])
    rhs = P_hat.matrix.T.multiply(mu[None, :])
    d = (lhs - rhs).tocoo()
    return float(np.abs(d.data).max()) if d.nnz else 0.0


def local_block_matrix(spec: LocalChainSpec, index: UnicycleIndex, reverse: bool = False) -> csr_matrix:
    """Block-diagonal ``B_loc`` (or ``B̂_loc``) assembled straight from the local matrices."""
    mats = spec.matrices
    if reverse:
        mats = [local_time_reversal(mx, stationary_vector(mx)) for mx in mats]
    rows, cols, vals = [], [], []
    for i, s in enumerate(index.states):
        x = s.x
        k = spec.exit_pos(x, s.rho[x])
        for j, z in enumerate(spec.exits[x]):
            if mats[x][k, j] == 0:
                continue
            rows.append(i)
            cols.append(index.index_of(x, _redirect(s.rho, x, z)))
            vals.append(mats[x][k, j])
    n = len(index)
    return csr_matrix((vals, (rows, cols)), shape=(n, n))


def permutation_matrix(index: UnicycleIndex) -> csr_matrix:
    """``A_CYC`` as a sparse 0/1 matrix (only for checks; ``zeta`` is the real thing)."""
    n = len(index)
    return csr_matrix((np.ones(n), (np.arange(n), index.zeta)), shape=(n, n))


@dataclass
class Reversibilisations:
    M: csr_matrix
    A: csr_matrix
    block_gap: float


def reversibilisations(P: TransitionMatrix, P_hat: TransitionMatrix, spec: LocalChainSpec, index: UnicycleIndex) -> Reversibilisations:
    M = (P.matrix @ P_hat.matrix).tocsr()
    A = ((P.matrix + P_hat.matrix) * 0.5).tocsr()
    blocks = local_block_matrix(spec, index) @ local_block_matrix(spec, index, reverse=True)
    d = (M - blocks).tocoo()
    gap = float(np.abs(d.data).max()) if d.nnz else 0.0
    return Reversibilisations(M, A, gap)


def local_singular_report(spec: LocalChainSpec) -> dict:
    """Per-vertex candidates for the spectrum of ``M = P P̂``.

    ``M`` is block diagonal with blocks ``M_x M̂_x``, whose eigenvalues are the
    squared singular values of ``D^1/2 M_x D^-1/2`` (``D = diag(q_x)``). The
    plain singular values of ``M_x`` coincide only for uniform ``q_x``.
    """
    out = []
    for x, mx in enumerate(spec.matrices):
        q = stationary_vector(mx)
        sq = np.sqrt(q)
        weighted = sq[:, None] * mx / sq[None, :]
        block = mx @ local_time_reversal(mx, q)
        out.append(
            {
                "vertex": x,
                "singular_values": np.linalg.svd(mx, compute_uv=False).tolist(),
                "squared_singular_values": (np.linalg.svd(mx, compute_uv=False) ** 2).tolist(),
                "squared_weighted_singular_values": sorted(
                    (np.linalg.svd(weighted, compute_uv=False) ** 2).tolist(), reverse=True
                ),
                "block_eigenvalues": sorted(np.real(np.linalg.eigvals(block)).tolist(), reverse=True),
            }
        )
    return {"vertices": out}


def product_eigenvector(
    spec: LocalChainSpec, lam: float, index: UnicycleIndex, tol: float = 1e-9
) -> np.ndarray:
    """``f(x, rho) = prod_v f_v(rho(v))`` from local left eigenvectors for ``lam``."""
    ok, witnesses = is_locally_lambda_uniform(spec, lam, tol)
    if not ok:
        raise PreconditionError(f"spec is not locally {lam}-uniform")
    f = np.ones(len(index))
    for i, s in enumerate(index.states):
        for v, y in enumerate(s.rho):
            f[i] *= witnesses[v][spec.exit_pos(v, y)]
    return f


def eigen_residual(f: np.ndarray, mat: csr_matrix, lam: float) -> float:
    """``||f mat - lam f||_inf / ||f||_inf``."""
    scale = np.abs(f).max()
    if scale == 0:
        return 0.0
    return float(np.abs(mat.T @ f - lam * f).max() / scale)


def product_eigen_residuals(g: Graph, spec: LocalChainSpec, lam: float, index: UnicycleIndex) -> dict:
    f = product_eigenvector(spec, lam, index)
    P = build_total_P(g, spec, index)
    out = {"P": eigen_residual(f, P.matrix, lam), "locally_reversible": is_locally_reversible(spec)}
    P_hat = time_reversal_total(index, spec)
    out["P_hat"] = eigen_residual(f, P_hat.matrix, lam)
    out["A"] = eigen_residual(f, ((P.matrix + P_hat.matrix) * 0.5).tocsr(), lam)
    return out


def one_step_closed(P: TransitionMatrix, index: UnicycleIndex) -> bool:
    """Every positive-probability successor of an indexed state is indexed."""
    coo = P.matrix.tocoo()
    return bool(np.all((coo.col >= 0) & (coo.col < len(index))))


def boolean_power(mat: csr_matrix, n: int) -> csr_matrix:
    s = mat.copy()
    s.data = np.ones_like(s.data)
    out = s
    for _ in range(n - 1):
        out = out @ s
        out.data = np.ones_like(out.data)
    return out


def support_duality(
    P: TransitionMatrix, P_hat: TransitionMatrix, index: UnicycleIndex, n: int, form: str = "transpose"
) -> bool:
    """Compare the supports of ``P^n`` and ``P̂^n``.

    ``form="transpose"`` checks ``p^n(a, b) > 0 iff p̂^n(b, a) > 0``.
    ``form="swap"`` checks the literal statement
    ``p^n((x,rho),(y,eta)) > 0 iff p̂^n((x,eta),(y,rho)) > 0`` over pairs where
    both swapped states are recurrent.
    """
    Pn = boolean_power(P.matrix, n)
    Hn = boolean_power(P_hat.matrix, n)
    if form == "transpose":
        return (Pn != Hn.T).nnz == 0
    if form != "swap":
        raise ValueError(f"unknown duality form {form!r}")
    lookup = index.lookup
    labels = P.states
    Hd = Hn.todok()
    Pd = Pn.todok()
    for mat, other in ((Pn.tocoo(), Hd), (Hn.tocoo(), Pd)):
        for r, c in zip(mat.row, mat.col):
            (x, rho), (y, eta) = labels[r], labels[c]
            a, b = (x, eta), (y, rho)
            if a in lookup and b in lookup and other.get((lookup[a], lookup[b]), 0) == 0:
                return False
    return True
