"""Independent reference computations used by the tests.

Nothing here imports the package's algorithms beyond plain data types, so the
tests compare two separately written implementations.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

# The worked example on the path 0-1-2 with a uniform middle chain, states in
# the order printed alongside it.
WORKED_EXAMPLE_P = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.5],
        [0.5, 0.0, 0.0, 0.5],
        [0.0, 0.0, 1.0, 0.0],
    ]
)


def random_strongly_connected(rng: np.random.Generator, m: int, loop_prob: float = 0.3):
    """Edge list of a random strongly connected digraph on ``m`` vertices."""
    perm = rng.permutation(m)
    edges = {(int(perm[i]), int(perm[(i + 1) % m])) for i in range(m)} if m > 1 else set()
    for x in range(m):
        for y in range(m):
            if x == y:
                if rng.random() < loop_prob:
                    edges.add((x, x))
            elif rng.random() < 0.4:
                edges.add((x, y))
    return sorted(edges)


def random_positive_matrices(rng: np.random.Generator, sizes) -> list[np.ndarray]:
    """Row-stochastic matrices with entries bounded away from zero."""
    out = []
    for d in sizes:
        mx = rng.dirichlet(np.ones(d), size=d) * 0.9 + 0.1 / d
        out.append(mx / mx.sum(axis=1, keepdims=True))
    return out


def functional_cycle(rho, x):
    """Vertices on the cycle reached from ``x`` under ``rho``, or None if ``x`` is off it."""
    seen = []
    v = x
    while v not in seen:
        seen.append(v)
        v = rho[v]
    cyc = seen[seen.index(v):]
    return cyc if x in cyc else None


def brute_unicycle_states(neighbors) -> set[tuple[int, tuple[int, ...]]]:
    """All (x, rho) with rho a functional graph having one cycle, x on it."""
    m = len(neighbors)
    out = set()
    for rho in itertools.product(*neighbors):
        # a functional graph is a spanning unicycle iff it is weakly connected
        parent = list(range(m))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for v, w in enumerate(rho):
            parent[find(v)] = find(w)
        if len({find(v) for v in range(m)}) != 1:
            continue
        for x in range(m):
            if functional_cycle(rho, x) is not None:
                out.add((x, tuple(rho)))
    return out


def brute_recurrent_states(neighbors, matrices) -> set[tuple[int, tuple[int, ...]]]:
    """Closed communicating classes of the walk on V x prod(S_x), built from scratch."""
    m = len(neighbors)
    states = [(x, rho) for x in range(m) for rho in itertools.product(*neighbors)]
    pos = {s: i for i, s in enumerate(states)}
    rows, cols = [], []
    for i, (x, rho) in enumerate(states):
        a = neighbors[x].index(rho[x])
        for b, y in enumerate(neighbors[x]):
            if matrices[x][a, b] > 0:
                new = list(rho)
                new[x] = y
                rows.append(i)
                cols.append(pos[(y, tuple(new))])
    n = len(states)
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(adj, directed=True, connection="strong")
    closed = np.ones(labels.max() + 1, dtype=bool)
    for r, c in zip(rows, cols):
        if labels[r] != labels[c]:
            closed[labels[r]] = False
    return {states[i] for i in range(n) if closed[labels[i]]}


def brute_unicycle_adjacency(neighbors, states) -> np.ndarray:
    """Integer adjacency of single walk moves between the given states (self-moves kept)."""
    states = sorted(states)
    pos = {s: i for i, s in enumerate(states)}
    A = np.zeros((len(states), len(states)), dtype=object)
    A[:, :] = 0
    for (x, rho), i in pos.items():
        for y in neighbors[x]:
            new = list(rho)
            new[x] = y
            j = pos.get((y, tuple(new)))
            if j is not None:
                A[i, j] += 1
    return A


def int_trace_power(A: np.ndarray, k: int) -> int:
    """Exact trace of ``A**k`` with Python integers."""
    n = A.shape[0]
    M = np.identity(n, dtype=object)
    M = M.astype(object)
    for _ in range(k):
        M = M.dot(A)
    return int(sum(M[i, i] for i in range(n)))


def charpoly_fraction(mat) -> list[Fraction]:
    """Characteristic polynomial coefficients (leading first) by Faddeev-LeVerrier."""
    n = len(mat)
    A = [[Fraction(v).limit_denominator(10**6) for v in row] for row in mat]
    coeffs = [Fraction(1)]
    Mk = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        # Mk = A @ M_{k-1} + c_{k-1} I
        prod = [[sum(A[i][l] * Mk[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        Mk = [[prod[i][j] + (coeffs[-1] if i == j else 0) for j in range(n)] for i in range(n)]
        AM = [[sum(A[i][l] * Mk[l][j] for l in range(n)) for j in range(n)] for i in range(n)]
        coeffs.append(-sum(AM[i][i] for i in range(n)) / k)
    return coeffs


def coupon_tail_dp(m: int, t: int) -> Fraction:
    """P(not all of ``m`` coupons collected after ``t`` draws), one pre-collected."""
    dist = [Fraction(0)] * (m + 1)
    dist[1] = Fraction(1)
    for _ in range(t):
        new = [Fraction(0)] * (m + 1)
        for k in range(1, m + 1):
            if dist[k]:
                stay = Fraction(k, m)
                new[k] += dist[k] * stay
                if k < m:
                    new[k + 1] += dist[k] * (1 - stay)
        dist = new
    return 1 - dist[m]


def sampler_law(neighbors, method: str = "last-exit", start_weights=None) -> dict:
    """Exact output law of the simple-random-walk unicycle sampler.

    Solves the absorbing chain over (position, visited set, arrows) until cover,
    then applies the post-cover steps of ``method`` exactly.
    """
    m = len(neighbors)
    full = (1 << m) - 1
    deg = [len(n) for n in neighbors]
    if start_weights is None:
        start_weights = np.array(deg, dtype=float) / sum(deg)

    out: dict = {}
    for x0 in range(m):
        w0 = float(start_weights[x0])
        if w0 == 0:
            continue
        init = (x0, 1 << x0, tuple([-1] * m))
        # collect the transient states reachable before cover
        transient, absorbing = {}, {}
        stack = [init]
        if init[1] == full:
            absorbing[init] = 0
        else:
            transient[init] = 0
        edges = []
        while stack:
            s = stack.pop()
            if s[1] == full:
                continue
            x, seen, arrows = s
            for y in neighbors[x]:
                new = list(arrows)
                if method == "last-exit":
                    new[x] = y
                elif not seen & (1 << y):
                    new[y] = x
                nxt = (y, seen | (1 << y), tuple(new))
                bucket = absorbing if nxt[1] == full else transient
                if nxt not in bucket:
                    bucket[nxt] = len(bucket)
                    stack.append(nxt)
                edges.append((s, nxt, 1.0 / deg[x]))
        tl = list(transient)
        ti = {s: i for i, s in enumerate(tl)}
        al = list(absorbing)
        ai = {s: i for i, s in enumerate(al)}
        if init[1] == full:
            absorbed = {init: 1.0}
        else:
            Q = np.zeros((len(tl), len(tl)))
            R = np.zeros((len(tl), len(al)))
            for s, nxt, p in edges:
                if nxt[1] == full:
                    R[ti[s], ai[nxt]] += p
                else:
                    Q[ti[s], ti[nxt]] += p
            B = np.linalg.solve(np.identity(len(tl)) - Q, R)
            absorbed = {al[j]: B[ti[init], j] for j in range(len(al)) if B[ti[init], j] > 0}
        for (xc, _, arrows), p in absorbed.items():
            if method == "first-entrance":
                for z in neighbors[x0]:
                    new = list(arrows)
                    new[x0] = z
                    key = (x0, tuple(new))
                    out[key] = out.get(key, 0.0) + w0 * p / deg[x0]
                continue
            for y in neighbors[xc]:
                a1 = list(arrows)
                a1[xc] = y
                for z in neighbors[y]:
                    a2 = list(a1)
                    a2[y] = z
                    key = (y, tuple(a2))
                    out[key] = out.get(key, 0.0) + w0 * p / deg[xc] / deg[y]
    return out
