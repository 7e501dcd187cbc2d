import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ulmw.errors import DomainError, NonUniqueStationaryError, PresetShapeError, StructuralError
from ulmw.graph import complete_graph, cycle_graph, path_graph
from ulmw.local_chain import (
    build_q_system,
    is_locally_lambda_uniform,
    is_locally_reversible,
    local_time_reversal,
    make_spec,
    parse_preset,
    period,
    preset,
    spec_from_descriptor,
    stationary_row,
    validate,
)

CYCLIC_BIAS = np.array([[0, 0.8, 0.2], [0.2, 0, 0.8], [0.8, 0.2, 0]])


def stochastic(shape_max=6):
    """Strictly positive row-stochastic matrices."""
    return st.integers(1, shape_max).flatmap(
        lambda d: arrays(np.float64, (d, d), elements=st.floats(0.05, 1.0)).map(lambda a: a / a.sum(axis=1, keepdims=True))
    )


def test_validate_rotor_modes():
    g = cycle_graph(4)
    rotor = preset("rotor", g)
    assert any("aperiodic" in v for v in validate(g, rotor, "strict"))
    assert validate(g, rotor, "simulation") == []


def test_validate_flags_non_stochastic_row():
    g = cycle_graph(4)
    spec = make_spec(g, [np.array([[0.5, 0.4], [0.5, 0.5]])] * 4)
    assert any("stochastic" in v for v in validate(g, spec, "simulation"))


def test_validate_shape_mismatch():
    with pytest.raises(StructuralError):
        validate(cycle_graph(4), make_spec(complete_graph(3), [np.full((2, 2), 0.5)] * 3))


@pytest.mark.parametrize(
    "mx, expected",
    [
        (np.array([[0.7, 0.3], [0.3, 0.7]]), [0.5, 0.5]),
        (np.full((3, 3), 1 / 3), [1 / 3] * 3),
        (np.array([[0.9, 0.1], [0.5, 0.5]]), [5 / 6, 1 / 6]),
    ],
)
def test_stationary_rows(mx, expected):
    assert np.allclose(stationary_row(mx).q, expected, atol=1e-12)


def test_stationary_row_reducible():
    with pytest.raises(NonUniqueStationaryError):
        stationary_row(np.identity(2))


def test_period():
    assert period(np.array([[0, 1], [1, 0]])) == 2
    assert period(np.full((2, 2), 0.5)) == 1
    assert period(CYCLIC_BIAS) == 1


@settings(max_examples=100)
@given(stochastic())
def test_stationary_row_is_fixed(mx):
    q = stationary_row(mx).q
    assert abs(q.sum() - 1) < 1e-12
    assert np.abs(q @ mx - q).max() <= 1e-10


@given(stochastic())
def test_time_reversal_involution(mx):
    q = stationary_row(mx).q
    rev = local_time_reversal(mx, q)
    assert np.allclose(rev.sum(axis=1), 1, atol=1e-12)
    assert np.abs(local_time_reversal(rev, q) - mx).max() <= 1e-12


def test_time_reversal_examples():
    sym = np.array([[0.7, 0.3], [0.3, 0.7]])
    assert np.allclose(local_time_reversal(sym, np.array([0.5, 0.5])), sym)
    mx = np.array([[0.9, 0.1], [0.5, 0.5]])
    rev = local_time_reversal(mx, np.array([5 / 6, 1 / 6]))
    # entrywise: rev(z, y) = mx(y, z) q(y) / q(z)
    assert np.allclose(rev, [[0.9, 0.1], [0.5, 0.5]])
    rotor = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(local_time_reversal(rotor, np.array([0.5, 0.5])), rotor)
    with pytest.raises(DomainError):
        local_time_reversal(rotor, np.array([1.0, 0.0]))


def test_q_system_examples():
    g = complete_graph(3)
    assert np.allclose(build_q_system(g, preset("uniform", g)).pi, 1 / 3)
    g = complete_graph(4, True)
    assert np.allclose(build_q_system(g, preset("uniform", g)).pi, 1 / 4)
    g = path_graph(3)
    qs = build_q_system(g, preset("uniform", g))
    assert np.allclose(qs.Q, [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
    assert np.allclose(qs.pi, [0.25, 0.5, 0.25], atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 6), st.integers(0, 2**32 - 1))
def test_q_system_fixed_point(m, seed):
    rng = np.random.default_rng(seed)
    g = complete_graph(m, with_loops=bool(seed % 2))
    spec = make_spec(g, [rng.dirichlet(np.ones(g.out_degree(x)), size=g.out_degree(x)) for x in range(m)])
    qs = build_q_system(g, spec)
    assert np.abs(qs.pi @ qs.Q - qs.pi).max() <= 1e-10


def test_reversibility_predicate():
    g = cycle_graph(5)
    assert is_locally_reversible(preset("p_walk", g, 0.3))
    assert is_locally_reversible(preset("uniform", complete_graph(4)))
    rng = np.random.default_rng(0)
    two_state = make_spec(g, [rng.dirichlet([1, 1], size=2) for _ in range(5)])
    assert is_locally_reversible(two_state)
    assert not is_locally_reversible(make_spec(complete_graph(4), [CYCLIC_BIAS] * 4))


def test_lambda_uniformity():
    g = cycle_graph(4)
    ok, witnesses = is_locally_lambda_uniform(preset("p_walk", g, 0.3), 0.4)
    assert ok
    for f, mx in zip(witnesses, preset("p_walk", g, 0.3).matrices):
        assert np.abs(f @ mx - 0.4 * f).max() <= 1e-10
    assert is_locally_lambda_uniform(preset("uniform", complete_graph(3)), 0.0)[0]
    mixed = make_spec(g, [np.array([[0.7, 0.3], [0.3, 0.7]])] * 2 + [np.array([[0.6, 0.4], [0.4, 0.6]])] * 2)
    assert not is_locally_lambda_uniform(mixed, 0.4)[0]


def test_presets():
    assert all(np.array_equal(mx, [[0, 1], [1, 0]]) for mx in preset("rotor", cycle_graph(4)).matrices)
    assert all(np.allclose(mx, 0.5) for mx in preset("uniform", complete_graph(3)).matrices)
    assert all(np.allclose(mx, [[0.75, 0.25], [0.25, 0.75]]) for mx in preset("p_walk", cycle_graph(5), 0.25).matrices)
    exc = preset("excited", cycle_graph(5, with_loops=True), 0.2)
    assert exc.init == tuple(range(5))
    assert validate(cycle_graph(5, True), exc, "simulation") == []


def test_preset_errors():
    with pytest.raises(PresetShapeError):
        preset("rotor", complete_graph(4))
    with pytest.raises(PresetShapeError):
        preset("excited", cycle_graph(5), 0.2)
    with pytest.raises(PresetShapeError):
        preset("bogus", cycle_graph(4))


def test_descriptors():
    assert parse_preset("p_walk:0.3") == ("p_walk", 0.3)
    g = cycle_graph(4)
    spec = spec_from_descriptor(g, {"local": {str(x): {"S": list(g.out_neighbors[x]), "M": [[0.5, 0.5], [0.5, 0.5]]} for x in range(4)}})
    assert spec.is_uniform()
