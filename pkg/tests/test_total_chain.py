import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import random_positive_matrices, random_strongly_connected
from ulmw.arbor import enumerate_unicycles
from ulmw.errors import CapacityError, PreconditionError
from ulmw.graph import Graph, complete_graph, cycle_graph, path_graph
from ulmw.local_chain import build_q_system, make_spec, preset
from ulmw.total_chain import (
    build_full_chain,
    build_total_P,
    decompose,
    duality_gap,
    local_block_matrix,
    local_singular_report,
    one_step_closed,
    permutation_matrix,
    power_stationary,
    product_eigen_residuals,
    product_eigenvector,
    recurrent_states,
    reversibilisations,
    stationarity_residual,
    stationary_mu,
    support_duality,
    support_is_irreducible,
    time_reversal_total,
)


def chain(g, kind="uniform", p=None):
    spec = preset(kind, g, p)
    index = enumerate_unicycles(g)
    return spec, index, build_total_P(g, spec, index)


def random_chain(seed, m=None):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 6)) if m is None else m
    g = Graph.from_edges(m, random_strongly_connected(rng, m))
    spec = make_spec(g, random_positive_matrices(rng, [g.out_degree(x) for x in range(m)]))
    index = enumerate_unicycles(g)
    return g, spec, index, build_total_P(g, spec, index)


def test_rotor_chain_is_permutation():
    _, _, P = chain(cycle_graph(3), "rotor")
    D = P.dense()
    assert np.array_equal(np.sort(D, axis=1)[:, -1], np.ones(P.n))
    assert np.count_nonzero(D) == P.n
    assert np.array_equal(D.sum(axis=0), np.ones(P.n))


def test_uniform_loops_rows():
    _, _, P = chain(complete_graph(3, True))
    D = P.dense()
    assert all(np.allclose(np.sort(r[r > 0]), [1 / 3] * 3) for r in D)


def test_row_support_rule():
    g = complete_graph(4)
    _, index, P = chain(g)
    coo = P.matrix.tocoo()
    for r, c in zip(coo.row, coo.col):
        (x, rho), (y, eta) = P.states[r], P.states[c]
        diff = {v for v in range(g.m) if rho[v] != eta[v]}
        assert diff <= {x} and eta[x] == y
    assert np.allclose(P.row_sums(), 1, atol=1e-12)


def test_full_chain_sizes_and_guard():
    for g, n in [(complete_graph(3), 24), (complete_graph(3, True), 81), (complete_graph(4), 324)]:
        assert build_full_chain(g, preset("uniform", g)).n == n
    with pytest.raises(CapacityError):
        g = complete_graph(7, True)
        build_full_chain(g, preset("uniform", g))


def test_recurrent_states_path():
    g = path_graph(3)
    rec = recurrent_states(build_full_chain(g, preset("uniform", g)))
    assert rec == {(s.x, s.rho) for s in enumerate_unicycles(g).states}
    assert len(rec) == 4


@pytest.mark.parametrize("g", [complete_graph(3), complete_graph(4), cycle_graph(4), cycle_graph(5)])
def test_positive_chains_irreducible(g):
    _, _, P = chain(g)
    assert support_is_irreducible(P)


def test_mu_examples():
    g = complete_graph(3)
    spec, index, P = chain(g)
    mu = stationary_mu(index, build_q_system(g, spec))
    assert np.allclose(mu, 1 / 18)
    g = path_graph(3)
    spec, index, P = chain(g)
    mu = stationary_mu(index, build_q_system(g, spec))
    assert np.allclose(mu, 0.25)
    assert np.abs(power_stationary(P) - mu).max() < 1e-10
    g = cycle_graph(4)
    spec, index, P = chain(g, "p_walk", 0.3)
    mu = stationary_mu(index, build_q_system(g, spec))
    assert np.allclose(mu, 1 / len(index))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mu_is_stationary_and_positive(seed):
    g, spec, index, P = random_chain(seed)
    mu = stationary_mu(index, build_q_system(g, spec))
    assert abs(mu.sum() - 1) <= 1e-12
    assert (mu > 0).all()
    assert stationarity_residual(P, mu) <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_one_step_closure_and_duality(seed):
    g, spec, index, P = random_chain(seed)
    P_hat = time_reversal_total(index, spec)
    assert one_step_closed(P, index) and one_step_closed(P_hat, index)
    assert np.allclose(P_hat.row_sums(), 1, atol=1e-12)
    mu = stationary_mu(index, build_q_system(g, spec))
    assert duality_gap(P, P_hat, mu) <= 1e-12


def test_decomposition_examples():
    g = path_graph(3)
    _, index, P = chain(g)
    dec = decompose(P, index)
    assert dec.exact and dec.block_diagonal
    blocks = sorted(tuple(sorted(v)) for v in dec.groups.values())
    assert [len(b) for b in blocks].count(2) == 1 and [len(b) for b in blocks].count(1) == 2
    # rotor blocks are permutations
    _, index, P = chain(cycle_graph(3), "rotor")
    B = decompose(P, index).B_loc.toarray()
    assert set(np.unique(B)) <= {0.0, 1.0} and np.array_equal(B.sum(axis=1), np.ones(len(index)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_decomposition_exact_for_random_chains(seed):
    g, spec, index, P = random_chain(seed)
    dec = decompose(P, index)
    assert dec.exact and dec.block_diagonal
    rebuilt = (local_block_matrix(spec, index) @ permutation_matrix(index)).toarray()
    assert np.array_equal(rebuilt, P.dense())
    P_hat = time_reversal_total(index, spec)
    assert reversibilisations(P, P_hat, spec, index).block_gap <= 1e-12


def test_time_reversal_examples():
    g = path_graph(3)
    spec, index, P = chain(g)
    assert np.allclose(time_reversal_total(index, spec).dense(), P.dense().T)
    spec, index, P = chain(cycle_graph(3), "rotor")
    P_hat = time_reversal_total(index, spec).dense()
    assert np.array_equal(P_hat @ P.dense(), np.identity(len(index)))
    M = reversibilisations(P, time_reversal_total(index, spec), spec, index).M.toarray()
    assert np.array_equal(M, np.identity(len(index)))


def test_locally_reversible_structure():
    g = cycle_graph(4)
    spec, index, P = chain(g, "p_walk", 0.3)
    P_hat = time_reversal_total(index, spec).matrix
    structural = permutation_matrix(index).T @ local_block_matrix(spec, index, reverse=True)
    assert abs(P_hat - structural).max() <= 1e-15


def test_path_reversibilisation_spectrum():
    g = path_graph(3)
    spec, index, P = chain(g)
    rev = reversibilisations(P, time_reversal_total(index, spec), spec, index)
    assert np.allclose(np.sort(np.linalg.eigvals(rev.M.toarray()).real), [0, 1, 1, 1], atol=1e-12)
    A = rev.A.toarray()
    assert np.allclose(A.sum(axis=1), 1)


def test_spectrum_of_m_is_squared_weighted_singular_values():
    g = complete_graph(3)
    rng = np.random.default_rng(5)
    spec = make_spec(g, random_positive_matrices(rng, [2, 2, 2]))
    index = enumerate_unicycles(g)
    P = build_total_P(g, spec, index)
    M = reversibilisations(P, time_reversal_total(index, spec), spec, index).M.toarray()
    eig = np.sort(np.linalg.eigvals(M).real)
    report = local_singular_report(spec)["vertices"]
    candidates = {round(v, 8) for r in report for v in r["squared_weighted_singular_values"]}
    assert {round(v, 8) for v in eig} <= candidates | {0.0}
    plain = {round(v, 8) for r in report for v in r["singular_values"]}
    assert not {round(v, 8) for v in eig} <= plain


def test_product_eigenvectors():
    g = cycle_graph(4)
    spec = preset("p_walk", g, 0.3)
    index = enumerate_unicycles(g)
    res = product_eigen_residuals(g, spec, 0.4, index)
    assert max(res["P"], res["P_hat"], res["A"]) <= 1e-10
    g3 = complete_graph(3)
    res = product_eigen_residuals(g3, preset("uniform", g3), 0.0, enumerate_unicycles(g3))
    assert res["P"] <= 1e-12
    res = product_eigen_residuals(g, preset("p_walk", g, 0.5), 0.0, index)
    assert res["P"] <= 1e-15
    with pytest.raises(PreconditionError):
        product_eigenvector(spec, 0.3, index)


def test_support_duality_transpose_form():
    g = complete_graph(3)
    rng = np.random.default_rng(7)
    spec = make_spec(g, random_positive_matrices(rng, [2, 2, 2]))
    index = enumerate_unicycles(g)
    P = build_total_P(g, spec, index)
    P_hat = time_reversal_total(index, spec)
    for n in (1, 2, 3):
        assert support_duality(P, P_hat, index, n)


def test_support_duality_swapped_configurations_fails():
    # pairing (x, rho) -> (y, eta) with (x, eta) -> (y, rho) does not hold as written
    g = complete_graph(3)
    spec = make_spec(g, random_positive_matrices(np.random.default_rng(7), [2, 2, 2]))
    index = enumerate_unicycles(g)
    P = build_total_P(g, spec, index)
    assert not support_duality(P, time_reversal_total(index, spec), index, 1, form="swap")
