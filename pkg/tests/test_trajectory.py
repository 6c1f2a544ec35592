import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixed_greens.dynamics import ModelSpec, PhasePoint, Representation, symplectic_form
from mixed_greens.errors import RangeError
from mixed_greens.trajectory import (
    action_mixed,
    action_mixed_quadrature,
    evaluate_at,
    integrate,
    propagate,
    trajectory_from_json,
    trajectory_to_json,
)


def ho_exact(q0, p0, t):
    return q0 * np.cos(t) + p0 * np.sin(t), -q0 * np.sin(t) + p0 * np.cos(t)


def test_free_particle_one_unit(free):
    tr = integrate(free, PhasePoint((0.0,), (1.0,)), 1.0)
    np.testing.assert_allclose(tr.xf, [1.0, 1.0], atol=1e-12)
    assert tr.action_full == pytest.approx(1.0, abs=1e-12)


def test_oscillator_full_period(ho):
    tr = integrate(ho, PhasePoint((0.0,), (1.0,)), 2 * np.pi)
    np.testing.assert_allclose(tr.xf, [0.0, 1.0], atol=1e-10)
    np.testing.assert_allclose(tr.monodromy, np.eye(2), atol=1e-9)


def test_oscillator_quarter_period_action(ho):
    tr = integrate(ho, PhasePoint((0.0,), (1.0,)), np.pi / 2)
    np.testing.assert_allclose(tr.xf, [1.0, 0.0], atol=1e-10)
    assert tr.action_full == pytest.approx(np.pi / 4, abs=1e-10)


def test_samples_cover_interval(ho):
    tr = integrate(ho, PhasePoint((0.2,), (0.9,)), 3.7)
    assert tr.times[0] == 0.0 and tr.times[-1] == 3.7
    assert np.all(np.diff(tr.times) > 0)


def test_mixed_action_examples(free, ho, pos1, mom1):
    tr = integrate(free, PhasePoint((0.0,), (1.0,)), 1.0)
    assert action_mixed(tr, pos1) == tr.action_full
    assert action_mixed(tr, mom1) == pytest.approx(0.0, abs=1e-12)
    tr = integrate(ho, PhasePoint((0.0,), (1.0,)), np.pi / 2)
    assert action_mixed(tr, mom1) == pytest.approx(np.pi / 4, abs=1e-9)
    assert action_mixed_quadrature(tr, mom1) == pytest.approx(np.pi / 4, abs=1e-9)


def test_evaluate_at(ho):
    tr = integrate(ho, PhasePoint((0.0,), (1.0,)), 2.0)
    assert evaluate_at(tr, 0.0) == tr.initial
    np.testing.assert_array_equal(evaluate_at(tr, 2.0).as_array(), tr.xf)
    pt = evaluate_at(tr, np.pi / 4)
    np.testing.assert_allclose(pt.as_array(), [np.sin(np.pi / 4), np.cos(np.pi / 4)], atol=1e-8)
    with pytest.raises(RangeError):
        evaluate_at(tr, 2.5)


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.1, 12.0))
@settings(max_examples=25, deadline=None)
def test_oscillator_matches_closed_form(q0, p0, t):
    tr = integrate(ModelSpec.oscillator(), PhasePoint((q0,), (p0,)), t)
    np.testing.assert_allclose(tr.xf, ho_exact(q0, p0, t), atol=1e-9)
    np.testing.assert_allclose(tr.monodromy, [[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]], atol=1e-9)


@pytest.mark.parametrize(
    "model, x0",
    [
        (ModelSpec.quartic(lam=1.0), (0.4, 1.1)),
        (ModelSpec.quartic(n=2, lam=0.5, omega=(1.0, 1.4), coupling=0.3), (0.3, -0.2, 0.8, 0.5)),
        (ModelSpec.oscillator(n=2, omega=(1.0, 1.7)), (0.1, 0.9, -0.4, 0.2)),
    ],
)
def test_symplectic_and_energy(model, x0):
    tr = integrate(model, PhasePoint.from_array(x0), 9.0)
    J = symplectic_form(model.n)
    M = tr.monodromy
    assert np.max(np.abs(M.T @ J @ M - J)) <= 1e-8
    e = tr.energies()
    assert np.max(np.abs(e - e[0])) <= 1e-9 * abs(e[0])


def test_legendre_forms_agree_across_reps():
    model = ModelSpec.quartic(n=2, lam=0.5, omega=(1.0, 1.4), coupling=0.3)
    tr = integrate(model, PhasePoint((0.3, -0.2), (0.8, 0.5)), 6.0)
    for rep in Representation.all(2):
        assert action_mixed(tr, rep) == pytest.approx(action_mixed_quadrature(tr, rep), abs=1e-9)


def test_propagation_batches_match_single(ho):
    x0s = np.array([[0.1, 1.0], [0.5, -0.3], [-1.0, 0.2]])
    prop = propagate(ho, x0s, 5.0)
    for b, x0 in enumerate(x0s):
        np.testing.assert_allclose(prop.state(b, 4.2), ho_exact(*x0, 4.2), atol=1e-9)


def test_oscillator_caustics_are_turning_points(ho, pos1, mom1):
    # q0 = 0.5, p0 = 0.7: qdot = 0 where tan t = 1.4, pdot = 0 where tan t = -0.5/0.7
    tr = integrate(ho, PhasePoint((0.5,), (0.7,)), 3 * np.pi + 0.3)
    t1 = np.arctan(1.4)
    np.testing.assert_allclose(tr.caustic_log[pos1.key], t1 + np.pi * np.arange(3), atol=1e-9)
    t2 = np.pi - np.arctan(0.5 / 0.7)
    np.testing.assert_allclose(tr.caustic_log[mom1.key], t2 + np.pi * np.arange(3), atol=1e-9)


def test_json_round_trip(ho):
    tr = integrate(ho, PhasePoint((0.5,), (0.7,)), 4.0)
    back = trajectory_from_json(ho, json.loads(json.dumps(trajectory_to_json(tr))))
    np.testing.assert_array_equal(back.states, tr.states)
    assert back.action_full == tr.action_full
    assert back.caustic_log == tr.caustic_log
