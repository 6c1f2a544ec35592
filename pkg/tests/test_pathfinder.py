import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixed_greens.dynamics import ModelSpec, Representation
from mixed_greens.errors import ConfigError, DimensionError, DomainError
from mixed_greens.pathfinder import BoundaryCondition, SearchParams, find_trajectories, refine, residual


def test_free_particle_single_path(free, pos1):
    trs = find_trajectories(free, BoundaryCondition(pos1, (0.0,), (1.0,), 0.5), SearchParams())
    assert len(trs) == 1
    tr = trs[0]
    assert tr.x0[1] == pytest.approx(1.0, abs=1e-10)
    assert tr.t_f == pytest.approx(1.0, abs=1e-10)
    assert tr.action_full == pytest.approx(1.0, abs=1e-10)


def test_oscillator_returns_at_half_periods(ho, pos1):
    bc = BoundaryCondition(pos1, (0.0,), (0.0,), 0.5)
    trs = find_trajectories(ho, bc, SearchParams(t_max=3.5 * np.pi))
    times = sorted({round(t.t_f, 8) for t in trs})
    np.testing.assert_allclose(times, [np.pi, 2 * np.pi, 3 * np.pi], atol=1e-8)


def test_oscillator_momentum_rep(ho, mom1):
    bc = BoundaryCondition(mom1, (1.0,), (0.0,), 0.5)
    trs = find_trajectories(ho, bc, SearchParams(t_max=1.2 * np.pi))
    assert trs
    assert trs[0].t_f == pytest.approx(np.pi / 2, abs=1e-9)
    for tr in trs:
        assert abs(np.cos(tr.t_f)) < 1e-8


@given(st.floats(-1.3, 1.3), st.floats(-1.3, 1.3), st.floats(0.9, 2.0))
@settings(max_examples=20, deadline=None)
def test_every_solution_satisfies_boundary(q1, q2, E):
    ho = ModelSpec.oscillator()
    bc = BoundaryCondition(Representation(1), (q1,), (q2,), E)
    for tr in find_trajectories(ho, bc, SearchParams(t_max=8.0)):
        assert np.max(np.abs(residual(tr, bc))) < 1e-8
        assert 0 < tr.t_f <= 8.0


def test_oscillator_count_per_period(ho, pos1):
    # strictly inside the well every period contributes two paths
    bc = BoundaryCondition(pos1, (0.3,), (0.4,), 2.0)
    trs = find_trajectories(ho, bc, SearchParams(t_max=4 * np.pi))
    assert len(trs) == 8


def test_two_dimensional_solutions():
    m = ModelSpec.oscillator(n=2, omega=(1.0, np.sqrt(2.0)))
    rep = Representation(2, (1,))
    bc = BoundaryCondition(rep, (0.2, 0.3), (0.5, -0.1), 1.5)
    trs = find_trajectories(m, bc, SearchParams(t_max=4.0))
    assert trs
    for tr in trs:
        assert np.max(np.abs(residual(tr, bc))) < 1e-8


def test_refine_free_particle(free, pos1):
    bc = BoundaryCondition(pos1, (0.0,), (1.0,), 0.5)
    tr = refine(free, bc, ((0.9,), 1.1), SearchParams(max_newton_iters=5))
    assert tr.x0[1] == pytest.approx(1.0, abs=1e-10)
    assert tr.t_f == pytest.approx(1.0, abs=1e-10)


def test_refine_oscillator_half_period(ho, pos1):
    bc = BoundaryCondition(pos1, (0.0,), (0.0,), 0.5)
    tr = refine(ho, bc, ((1.0,), 3.0), SearchParams())
    assert tr.t_f == pytest.approx(np.pi, abs=1e-10)


def test_refine_rejects_nonpositive_time(free, pos1):
    with pytest.raises(ConfigError):
        refine(free, BoundaryCondition(pos1, (0.0,), (1.0,), 0.5), ((1.0,), 0.0), SearchParams())


def test_energy_below_potential(ho, pos1):
    with pytest.raises(DomainError):
        find_trajectories(ho, BoundaryCondition(pos1, (2.0,), (0.0,), 0.5), SearchParams())


def test_boundary_dimension_checked(pos1):
    with pytest.raises(DimensionError):
        BoundaryCondition(pos1, (0.0, 1.0), (1.0,), 0.5)


def test_search_params_validated():
    with pytest.raises(ConfigError):
        SearchParams(t_max=-1.0)
