"""Total-variation mixing of total chains and the cover-time connection.

On ``K_m`` with a loop at every vertex the uniform walk picks each next
vertex uniformly, so its cover time is a coupon-collector time with the
start vertex already collected. Exact tails of that variable are computed
here and compared against exact worst-case distance curves of the total
chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import mpmath
import numpy as np
from scipy.special import gammaln

from .arbor import enumerate_unicycles
from .errors import CapacityError, DomainError, HorizonExceededError, StructuralError
from .graph import Graph, complete_graph
from .local_chain import build_q_system, preset
from .rng import make_rng
from .total_chain import TransitionMatrix, build_total_P, stationary_mu, time_reversal_total

D_CURVE_MAX = 4_000
AB_MAX_M = 5
MC_BLOCK = 4_096
# the m = 3 calibration in aldous_broder_identity_check gives the smaller gap for P(C > t)
DEFAULT_TAIL_CONVENTION = "gt"


def tv_distance(p: Sequence[float], q: Sequence[float], tol: float = 1e-9) -> float:
    """Half the L1 distance between two probability vectors."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise StructuralError(f"length mismatch: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if abs(v.sum() - 1.0) > tol:
            raise DomainError(f"{name} sums to {v.sum()}, not 1")
    return 0.5 * float(np.abs(p - q).sum())


@dataclass
class MixingCurve:
    """Worst-case distance ``d(t)`` for ``t = 0..T``."""

    d: np.ndarray
    mu: np.ndarray | None = None
    label: str = ""

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.d))

    @property
    def horizon(self) -> int:
        return len(self.d) - 1

    def rows(self) -> list[tuple[int, float]]:
        return [(int(t), float(v)) for t, v in enumerate(self.d)]


def _rows_tv(D: np.ndarray, mu: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(D - mu[None, :]).sum(axis=1)


def d_curve(
    P: TransitionMatrix,
    mu: np.ndarray,
    T_max: int,
    label: str = "",
    stop_below: float | None = None,
    max_states: int = D_CURVE_MAX,
) -> MixingCurve:
    """Exact ``max_s TV(P^t(s, .), mu)`` for ``t = 0..T_max``.

    All start states are propagated at once as the rows of a dense matrix.
    Iteration ends early once ``d`` drops below ``stop_below``.
    """
    n = P.n
    if n > max_states:
        raise CapacityError(f"exact distance curve guarded at {max_states} states, got {n}")
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (n,):
        raise StructuralError("mu and P live on different state sets")
    D = np.eye(n)
    PT = P.matrix.T.tocsr()
    out = [float(_rows_tv(D, mu).max())]
    for _ in range(T_max):
        if stop_below is not None and out[-1] < stop_below:
            break
        D = (PT @ D.T).T
        out.append(float(_rows_tv(D, mu).max()))
    return MixingCurve(np.array(out), mu, label)


def mixing_time(curve: MixingCurve, eps: float) -> int:
    """Least ``t`` with ``d(t) < eps``.

    ``eps = 1`` is accepted and returns 0 whenever ``mu`` charges every
    state, since then ``d(0) = 1 - min mu < 1``.
    """
    if not 0 < eps <= 1:
        raise DomainError(f"eps must lie in (0, 1], got {eps}")
    hits = np.flatnonzero(curve.d < eps)
    if len(hits) == 0:
        raise HorizonExceededError(f"d(t) stays >= {eps} up to t = {curve.horizon}")
    return int(hits[0])


# --- coupon collector ----------------------------------------------------


def _log_terms(m: int, t: int) -> np.ndarray:
    j = np.arange(1, m)
    return gammaln(m) - gammaln(j + 1) - gammaln(m - j) + t * np.log1p(-j / m)


def coupon_tail(m: int, t: int) -> float:
    """``P(C > t)`` for the cover time ``C`` with the start vertex pre-collected.

    Each step draws one of ``m`` vertices uniformly. Uses inclusion-exclusion
    over the ``m - 1`` missing vertices; when the alternating terms grow
    large the sum is taken in extended precision, with enough digits to
    absorb the cancellation.
    """
    if m < 1:
        raise DomainError(f"m must be positive, got {m}")
    if t < 0:
        return 1.0
    if m == 1:
        return 0.0
    logs = _log_terms(m, t)
    # the result lies in [0, 1]; terms below exp(-80) are negligible in absolute size
    keep = np.flatnonzero(logs > -80.0) + 1
    dps = int(max(float(logs.max()), 0.0) / math.log(10)) + 30
    with mpmath.workdps(dps):
        acc = mpmath.mpf(0)
        base = mpmath.mpf(m)
        for j in keep:
            term = mpmath.binomial(m - 1, int(j)) * mpmath.power((base - int(j)) / base, t)
            acc += term if j % 2 == 1 else -term
        val = float(acc)
    return min(1.0, max(0.0, val))


def cover_tail(m: int, t: int, convention: str = "ge") -> float:
    """``P(C >= t)`` (``"ge"``) or ``P(C > t)`` (``"gt"``)."""
    if convention == "gt":
        return coupon_tail(m, t)
    if convention == "ge":
        return coupon_tail(m, t - 1)
    raise DomainError(f"unknown tail convention {convention!r}")


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float
    trials: int

    @property
    def half_width(self) -> float:
        """Half-width of the normal 95% interval."""
        return 1.96 * self.stderr


def cover_tail_mc(g: Graph, t: int, trials: int, seed: int = 0, start: int = 0) -> MCEstimate:
    """Fraction of simple random walks from ``start`` that have not covered ``V`` by time ``t``.

    Trajectories run in blocks of ``MC_BLOCK``; block ``b`` draws from the
    substream ``(seed, b)``.
    """
    if trials < 1:
        raise DomainError("need at least one trial")
    deg = np.array([g.out_degree(x) for x in range(g.m)])
    if np.any(deg == 0):
        raise StructuralError("every vertex needs an outgoing edge")
    table = np.zeros((g.m, deg.max()), dtype=np.int64)
    for x, nbrs in enumerate(g.out_neighbors):
        table[x, : len(nbrs)] = nbrs
    uncovered = 0
    for b, lo in enumerate(range(0, trials, MC_BLOCK)):
        size = min(MC_BLOCK, trials - lo)
        rng = make_rng(seed, b)
        pos = np.full(size, start, dtype=np.int64)
        seen = np.zeros((size, g.m), dtype=bool)
        seen[:, start] = True
        rows = np.arange(size)
        for _ in range(t):
            pick = (rng.random(size) * deg[pos]).astype(np.int64)
            pos = table[pos, pick]
            seen[rows, pos] = True
        uncovered += int(np.count_nonzero(~seen.all(axis=1)))
    p = uncovered / trials
    return MCEstimate(p, math.sqrt(max(p * (1 - p), 0.0) / trials), trials)


# --- cover time versus distance on loop-augmented K_m --------------------


@dataclass
class IdentityReport:
    """Exact ``d(t)`` against ``max_x P_x(C >= t)`` and ``P_x(C > t)``."""

    m: int
    d: np.ndarray
    tail_ge: np.ndarray
    tail_gt: np.ndarray
    selected: str
    horizon: int

    @property
    def gap_ge(self) -> float:
        return float(np.abs(self.d - self.tail_ge).max())

    @property
    def gap_gt(self) -> float:
        return float(np.abs(self.d - self.tail_gt).max())

    @property
    def gap(self) -> float:
        return self.gap_ge if self.selected == "ge" else self.gap_gt

    def ratio(self) -> np.ndarray:
        tail = self.tail_ge if self.selected == "ge" else self.tail_gt
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(tail > 0, self.d / tail, np.nan)

    def upper_bound_holds(self, slack: float = 1e-12) -> bool:
        """``d(t) <= P(C >= t)`` at every ``t``."""
        return bool(np.all(self.d <= self.tail_ge + slack))

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "horizon": self.horizon,
            "selected_convention": self.selected,
            "max_gap_ge": self.gap_ge,
            "max_gap_gt": self.gap_gt,
            "upper_bound_holds": self.upper_bound_holds(),
        }


def loop_complete_chain(m: int) -> tuple[TransitionMatrix, np.ndarray]:
    """Uniform total chain on ``K_m`` with loops and its stationary law."""
    g = complete_graph(m, with_loops=True)
    spec = preset("uniform", g)
    index = enumerate_unicycles(g)
    return build_total_P(g, spec, index), stationary_mu(index, build_q_system(g, spec))


def aldous_broder_identity_check(m: int, horizon: int | None = None, tail_floor: float = 1e-6) -> IdentityReport:
    """Compare the exact distance curve with exact cover-time tails.

    The horizon defaults to the first ``t`` at which ``P(C >= t)`` falls
    below ``tail_floor``. The convention with the smaller maximal gap is
    reported as ``selected``.
    """
    if m > AB_MAX_M:
        raise CapacityError(f"exact identity check guarded at m <= {AB_MAX_M}")
    if m < 2:
        raise DomainError("need m >= 2")
    if horizon is None:
        horizon = 0
        while cover_tail(m, horizon, "ge") >= tail_floor:
            horizon += 1
    P, mu = loop_complete_chain(m)
    curve = d_curve(P, mu, horizon, label=f"K{m}+loops")
    ts = range(horizon + 1)
    ge = np.array([cover_tail(m, t, "ge") for t in ts])
    gt = np.array([cover_tail(m, t, "gt") for t in ts])
    gap_ge = np.abs(curve.d - ge).max()
    gap_gt = np.abs(curve.d - gt).max()
    return IdentityReport(m, curve.d, ge, gt, "ge" if gap_ge <= gap_gt else "gt", horizon)


# --- bounds and cutoff ---------------------------------------------------


@dataclass(frozen=True)
class MixingBounds:
    lower: float
    upper: float
    raw_lower: float
    clamped: bool


def mixing_bounds(m: int, eps: float) -> MixingBounds:
    """Coupon-collector bounds on ``t_mix(eps)`` for the uniform walk on ``K_m``.

    A negative lower bound (``eps`` close to 1) is clamped to 0 and flagged.
    """
    if m < 3:
        raise DomainError(f"bounds need m >= 3, got {m}")
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    ml = m * math.log(m)
    lower = (1 + math.log(1 - eps) / math.log(m)) * ml
    upper = (1 - math.log(eps) / math.log(m)) * ml
    return MixingBounds(max(lower, 0.0), upper, lower, lower < 0)


def coupon_mixing_time(m: int, eps: float, convention: str = DEFAULT_TAIL_CONVENTION) -> int:
    """Least ``t`` with ``P(C >= t) < eps`` (or ``P(C > t)``), by bisection."""
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    if m == 1:
        return 0 if convention == "gt" else 1
    # start from the coupon-collector bounds so the search never probes tiny t,
    # where the alternating sum cancels hardest
    if m >= 3:
        b = mixing_bounds(m, eps)
        lo, hi = int(b.lower), int(math.ceil(b.upper)) + 1
    else:
        lo, hi = 0, 1
    while cover_tail(m, hi, convention) >= eps:
        lo, hi = hi, 2 * hi
    while lo > 0 and cover_tail(m, lo, convention) < eps:
        lo //= 2
    if cover_tail(m, lo, convention) < eps:
        return lo
    # invariant: tail(lo) >= eps > tail(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cover_tail(m, mid, convention) < eps:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class CutoffRow:
    m: int
    t_eps: int
    t_one_minus_eps: int
    ratio: float
    lower_bound: float
    upper_bound: float

    @property
    def within(self) -> bool:
        return self.lower_bound <= self.ratio <= self.upper_bound


def cutoff_sandwich(m: int, eps: float) -> tuple[float, float]:
    lm = math.log(m)
    lo = (lm + math.log(1 - eps)) / (lm - math.log(1 - eps))
    den = lm + math.log(eps)
    hi = (lm - math.log(eps)) / den if den > 0 else math.inf
    return lo, hi


def cutoff_experiment(m_list: Sequence[int], eps: float, convention: str = DEFAULT_TAIL_CONVENTION) -> list[CutoffRow]:
    """``t_mix(eps) / t_mix(1 - eps)`` from exact cover-time tails."""
    if not 0 < eps <= 0.5:
        raise DomainError(f"eps must lie in (0, 1/2], got {eps}")
    rows = []
    for m in m_list:
        if m < 3:
            raise DomainError(f"cutoff rows need m >= 3, got {m}")
        a = coupon_mixing_time(m, eps, convention)
        b = coupon_mixing_time(m, 1 - eps, convention)
        lo, hi = cutoff_sandwich(m, eps)
        rows.append(CutoffRow(m, a, b, a / b, lo, hi))
    return rows


def approaches_one(rows: Sequence[CutoffRow]) -> bool:
    """``|ratio - 1|`` is non-increasing along ``rows``."""
    dev = [abs(r.ratio - 1) for r in rows]
    return all(b <= a for a, b in zip(dev, dev[1:]))


# --- reversal ------------------------------------------------------------


def reversal_mixing_lower_bound(lam: float, eps: float) -> float:
    """``lam / (1 - lam) * log(1 / (2 eps))``."""
    if not 0 < lam < 1:
        raise DomainError(f"lam must lie in (0, 1), got {lam}")
    if not 0 < eps <= 0.5:
        raise DomainError(f"eps must lie in (0, 1/2], got {eps}")
    return lam / (1 - lam) * math.log(1 / (2 * eps))


@dataclass
class ReversalMixing:
    eps: float
    bound: float
    t_mix: int | None
    horizon: int
    curve: MixingCurve = field(repr=False)

    @property
    def respects_bound(self) -> bool:
        # a curve that never drops below eps has infinite mixing time
        return self.t_mix is None or self.t_mix >= self.bound


def reversal_mixing(g: Graph, spec, lam: float, eps_list: Sequence[float], horizon: int = 500) -> list[ReversalMixing]:
    """Exact mixing time of the time-reversed total chain against the lower bound."""
    index = enumerate_unicycles(g)
    q = build_q_system(g, spec)
    P_hat = time_reversal_total(index, spec, q)
    mu = stationary_mu(index, q)
    curve = d_curve(P_hat, mu, horizon, label="reversal", stop_below=min(eps_list))
    out = []
    for eps in eps_list:
        try:
            t = mixing_time(curve, eps)
        except HorizonExceededError:
            t = None
        out.append(ReversalMixing(eps, reversal_mixing_lower_bound(lam, eps), t, curve.horizon, curve))
    return out
