import cmath

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixed_greens.bench import exact_free_particle_G, ho_spectral_G
from mixed_greens.dynamics import ModelSpec, Representation
from mixed_greens.errors import ConfigError
from mixed_greens.greens import (
    assemble,
    contribution_term,
    energy_scan,
    greens_to_json,
    momentum_greens,
    position_greens,
    prefactor,
)
from mixed_greens.pathfinder import BoundaryCondition, SearchParams


def test_prefactor_one_dimension():
    # 2 pi / (2 pi i hbar)^1 = 1/(i hbar)
    assert prefactor(1, 0.5) == pytest.approx(1 / 0.5j)
    assert prefactor(2, 1.0) == pytest.approx(2 * np.pi / (2j * np.pi) ** 1.5)
    assert prefactor(1, 1.0, exponent=1.5) == pytest.approx(2 * np.pi / (2j * np.pi) ** 1.5)


def test_contribution_phase_and_damping():
    t = contribution_term(1, 1.0, action=0.7, det=4.0, maslov=1, t_f=2.0, eta=0.1)
    expected = -1j * 2.0 * cmath.exp(1j * (0.7 - np.pi / 2)) * np.exp(-0.2)
    assert t == pytest.approx(expected, rel=1e-14)


def test_free_particle_value(free):
    g = position_greens(free, (1.0,), (0.0,), 0.5, 1.0, SearchParams())
    assert g.value == pytest.approx(0.8414709848078965 - 0.5403023058681398j, rel=1e-9)
    assert g.n_traj == 1


def test_mixed_pipeline_reduces_to_position(free):
    bc = BoundaryCondition(Representation(1, ()), (0.0,), (1.0,), 0.5)
    a = assemble(free, bc, 1.0, SearchParams()).value
    b = position_greens(free, (1.0,), (0.0,), 0.5, 1.0, SearchParams()).value
    assert abs(a - b) <= 1e-10 * abs(b)


@given(st.floats(0.1, 2.0), st.floats(-2.0, 2.0), st.floats(0.2, 3.0))
@settings(max_examples=15, deadline=None)
def test_free_particle_any_distance(E, dq, hbar):
    g = position_greens(ModelSpec.free(), (dq,), (0.0,), E, hbar, SearchParams(t_max=100.0)).value
    ref = exact_free_particle_G(0.0, dq, E, hbar=hbar)
    if abs(dq) > 1e-6:
        assert abs(g - ref) <= 1e-9 * abs(ref)


def test_value_is_sum_of_terms(ho):
    g = position_greens(ho, (0.4,), (0.3,), 2.0, 0.5, SearchParams(t_max=12.0))
    assert g.n_traj > 2
    assert abs(g.value - sum(c.term for c in g.contributions)) <= 1e-12 * abs(g.value)
    for c in g.contributions:
        assert abs(c.term) == pytest.approx(abs(prefactor(1, 0.5)) * np.sqrt(abs(c.det)), rel=1e-12)


def test_oscillator_self_duality(ho):
    params = SearchParams(t_max=9.0)
    a = momentum_greens(ho, (0.8,), (-0.2,), 1.1, 1.0, params).value
    b = position_greens(ho, (0.8,), (-0.2,), 1.1, 1.0, params).value
    assert abs(a - b) <= 1e-8 * abs(b)


def test_damped_sum_tracks_spectral_oracle(ho):
    # long traversal sums with a small imaginary energy approach the exact Green function
    hbar, E, eta = 0.1, 2.0, 0.01
    params = SearchParams(t_max=30 * np.pi)
    g = position_greens(ho, (0.4,), (0.3,), E, hbar, params, eta=eta, derivatives="linearized")
    ref = ho_spectral_G(0.3, 0.4, E + 1j * eta, hbar=hbar)
    assert abs(g.value - ref) / abs(ref) < 0.1


def test_energy_scan_singleton_matches_assemble(ho):
    bc = BoundaryCondition(Representation(1), (0.3,), (0.4,), 1.0)
    params = SearchParams(t_max=10.0)
    [(E, g)] = energy_scan(ho, bc, [1.2], 1.0, params)
    assert E == 1.2
    assert g.value == assemble(ho, bc.with_energy(1.2), 1.0, params).value


def test_energy_scan_validation(ho):
    bc = BoundaryCondition(Representation(1), (0.3,), (0.4,), 1.0)
    with pytest.raises(ConfigError):
        energy_scan(ho, bc, [], 1.0, SearchParams())
    with pytest.raises(ConfigError):
        energy_scan(ho, bc, [1.0, 0.9], 1.0, SearchParams())


def test_energy_scan_records_failures(ho):
    # below the potential at q' = 0.3 there is no classical path
    bc = BoundaryCondition(Representation(1), (0.3,), (0.4,), 1.0)
    out = energy_scan(ho, bc, [0.01, 1.0], 1.0, SearchParams(t_max=5.0))
    assert np.isnan(out[0][1].value.real)
    assert out[0][1].diagnostics
    assert np.isfinite(out[1][1].value.real)


def test_hbar_validated(free):
    with pytest.raises(ConfigError):
        position_greens(free, (1.0,), (0.0,), 0.5, 0.0, SearchParams())


def test_json_export(free):
    g = position_greens(free, (1.0,), (0.0,), 0.5, 1.0, SearchParams())
    d = greens_to_json(g)
    assert d["value"] == [g.value.real, g.value.imag]
    assert len(d["contributions"]) == 1


def test_two_dimensional_reduction():
    m = ModelSpec.oscillator(n=2, omega=(1.0, np.sqrt(2.0)))
    params = SearchParams(t_max=3.0)
    a, b, E = (0.2, -0.1), (0.4, 0.3), 1.6
    k0 = assemble(m, BoundaryCondition(Representation(2, (), (0, 1)), a, b, E), 1.0, params, derivatives="linearized")
    pos = position_greens(m, b, a, E, 1.0, params, derivatives="linearized")
    kn = assemble(m, BoundaryCondition(Representation(2, (0, 1), ()), a, b, E), 1.0, params, derivatives="linearized")
    mom = momentum_greens(m, b, a, E, 1.0, params, derivatives="linearized")
    assert pos.n_traj > 0 and mom.n_traj > 0
    assert abs(k0.value - pos.value) <= 1e-10 * abs(pos.value)
    assert abs(kn.value - mom.value) <= 1e-10 * abs(mom.value)
