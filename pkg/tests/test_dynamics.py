import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixed_greens.dynamics import (
    ModelKind,
    ModelSpec,
    PhasePoint,
    Representation,
    flow,
    flow_jacobian,
    hamiltonian,
    monomial_exponents,
    symplectic_form,
)
from mixed_greens.errors import ConfigError, DimensionError

finite = st.floats(-5, 5, allow_nan=False)


@pytest.mark.parametrize(
    "model, q, p, expected",
    [
        (ModelSpec.free(), 1.0, 2.0, 2.0),
        (ModelSpec.oscillator(), 1.0, 0.0, 0.5),
        (ModelSpec.oscillator(), 0.0, 0.0, 0.0),
    ],
)
def test_hamiltonian_values(model, q, p, expected):
    assert hamiltonian(model, PhasePoint((q,), (p,))) == pytest.approx(expected, abs=1e-15)


def test_flow_values():
    np.testing.assert_allclose(flow(ModelSpec.free(), PhasePoint((0.0,), (1.0,))), [1.0, 0.0])
    np.testing.assert_allclose(flow(ModelSpec.oscillator(), PhasePoint((1.0,), (0.0,))), [0.0, -1.0])
    np.testing.assert_allclose(flow(ModelSpec.oscillator(omega=2.0), PhasePoint((1.0,), (1.0,))), [1.0, -4.0])


def test_flow_jacobian_values():
    np.testing.assert_allclose(flow_jacobian(ModelSpec.free(), PhasePoint((0.3,), (0.1,))), [[0, 1], [0, 0]])
    np.testing.assert_allclose(flow_jacobian(ModelSpec.oscillator(), PhasePoint((0.3,), (0.1,))), [[0, 1], [-1, 0]])
    quartic = ModelSpec.quartic(lam=1.0)
    assert flow_jacobian(quartic, PhasePoint((1.0,), (0.0,)))[1, 0] == pytest.approx(-3.0)


def test_quartic_coupled_potential():
    m = ModelSpec.quartic(n=2, lam=0.4, omega=(1.0, 1.3), coupling=0.2)
    q = np.array([0.7, -0.5])
    expected = 0.5 * (0.49 + 1.69 * 0.25) + 0.1 * (0.7**4 + 0.5**4) + 0.2 * 0.49 * 0.25
    assert float(m.potential(q)) == pytest.approx(expected, rel=1e-14)


def test_polynomial_potential_ordering():
    # graded lexicographic: 1, q, q^2, q^3 in one dimension
    assert monomial_exponents(1, 4) == [(0,), (1,), (2,), (3,)]
    m = ModelSpec(ModelKind.POLYNOMIAL_POTENTIAL, 1, (1.0,), (), (0.0, 0.0, 0.5, 0.1))
    assert float(m.potential(np.array([2.0]))) == pytest.approx(2.0 + 0.8)


@given(finite, finite, finite, finite)
@settings(max_examples=50, deadline=None)
def test_flow_jacobian_matches_finite_difference(q1, q2, p1, p2):
    m = ModelSpec.quartic(n=2, lam=0.3, omega=(1.0, 0.7), coupling=0.1)
    x = np.array([q1, q2, p1, p2])
    J = flow_jacobian(m, PhasePoint.from_array(x))
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (flow(m, PhasePoint.from_array(x + e)) - flow(m, PhasePoint.from_array(x - e))) / (2 * h)
        np.testing.assert_allclose(J[:, j], fd, rtol=1e-6, atol=1e-6 * (1 + np.abs(x).max() ** 2))


@given(st.integers(1, 2).flatmap(lambda n: st.tuples(st.just(n), st.sets(st.integers(0, n - 1)))))
def test_representation_partition(args):
    n, alpha = args
    rep = Representation(n, tuple(alpha))
    assert set(rep.alpha) | set(rep.beta) == set(range(n))
    assert not set(rep.alpha) & set(rep.beta)
    assert rep.k == len(alpha)
    assert Representation.from_key(n, rep.key) == rep


def test_representation_rejects_overlap():
    with pytest.raises(ConfigError):
        Representation(2, (0,), (0, 1))


def test_all_representations_counted():
    assert len(Representation.all(2)) == 4
    assert [r.k for r in Representation.all(1)] == [0, 1]


@pytest.mark.parametrize("kwargs", [dict(n=3), dict(mass=-1.0)])
def test_model_validation(kwargs):
    with pytest.raises(ConfigError):
        ModelSpec.free(**kwargs)


def test_phase_point_validation():
    with pytest.raises(DimensionError):
        PhasePoint((0.0, 1.0), (0.0,))
    with pytest.raises(ConfigError):
        PhasePoint((np.nan,), (0.0,))


def test_symplectic_form():
    J = symplectic_form(2)
    np.testing.assert_array_equal(J @ J, -np.eye(4))
