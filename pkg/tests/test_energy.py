from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wgflow import energy as E
from wgflow import ot_core as O

UNIT = O.Grid(0.0, 1.0, 200)


def spec_of(internal=None, potential=None, interaction=None) -> E.EnergySpec:
    return E.EnergySpec(internal or E.InternalEnergy.zero(), potential or E.Potential.zero(),
                        interaction or E.Interaction.zero())


# --------------------------------------------------------------------------
# frozen energy values


def test_boltzmann_uniform_is_zero():
    spec = spec_of(E.InternalEnergy.boltzmann())
    assert E.energy(spec, O.GridMeasure.uniform(UNIT)) == pytest.approx(0.0, abs=1e-12)


def test_quadratic_potential_uniform():
    spec = spec_of(potential=E.Potential.quadratic(1.0))
    # midpoint rule on x^2/2 is exact up to dx^2/24
    assert E.energy(spec, O.GridMeasure.uniform(UNIT)) == pytest.approx(1 / 6, abs=UNIT.dx ** 2)


def test_renyi_two_uniform():
    spec = spec_of(E.InternalEnergy.renyi(2.0))
    assert E.energy(spec, O.GridMeasure.uniform(UNIT)) == pytest.approx(1.0, abs=1e-12)


def test_overflow_rejected():
    g = O.Grid(0.0, 1.0, 16)
    with pytest.warns(E.AssumptionWarning):
        spec = spec_of(E.InternalEnergy.renyi(400.0))
    mu = O.GridMeasure.point_mass(g, 0.5)
    with pytest.raises(ValueError, match="density out of admissible range"):
        E.energy(spec, mu)


def test_flow_energy_halves_internal_and_interaction():
    g = O.Grid(-3, 3, 120)
    mu = O.GridMeasure.gaussian(g, 0.2, 0.7)
    spec = E.EnergySpec(E.InternalEnergy.renyi(2.0), E.Potential.quadratic(1.0), E.Interaction.quadratic(0.5))
    u, v, w = E.energy_parts(spec, mu)
    assert E.flow_energy(spec, mu) == pytest.approx(0.5 * u + v + 0.5 * w, abs=1e-14)
    assert E.energy(spec, mu) == pytest.approx(u + v + w, abs=1e-14)


# --------------------------------------------------------------------------
# pressure


@pytest.mark.parametrize("internal,r,expected", [
    (E.InternalEnergy.boltzmann(), 2.0, 2.0),
    (E.InternalEnergy.renyi(2.0), 3.0, 9.0),
    (E.InternalEnergy.boltzmann(), 0.0, 0.0),
    (E.InternalEnergy.renyi(2.0), 0.0, 0.0),
    (E.InternalEnergy.renyi(1.5), 0.0, 0.0),
])
def test_pressure_values(internal, r, expected):
    assert E.pressure(internal, r) == pytest.approx(expected, abs=1e-14)


def test_pressure_negative_rejected():
    with pytest.raises(ValueError):
        E.pressure(E.InternalEnergy.boltzmann(), -1.0)


@pytest.mark.parametrize("internal", [E.InternalEnergy.boltzmann(), E.InternalEnergy.renyi(2.0),
                                      E.InternalEnergy.renyi(1.5), E.InternalEnergy.renyi(3.0)])
def test_pressure_derivative_identity(internal):
    r = np.linspace(0.1, 10.0, 50)
    h = 1e-5
    dP = (E.pressure(internal, r + h) - E.pressure(internal, r - h)) / (2 * h)
    rel = np.abs(dP - r * internal.d2U(r)) / np.maximum(1.0, np.abs(dP))
    assert np.max(rel) < 1e-8


# --------------------------------------------------------------------------
# structural checks


@pytest.mark.parametrize("internal", [E.InternalEnergy.boltzmann(), E.InternalEnergy.renyi(2.0),
                                      E.InternalEnergy.renyi(1.5)])
def test_mccann_checks_pass(internal):
    with warnings.catch_warnings():
        warnings.simplefilter("error", E.AssumptionWarning)
        assert internal.validate() == []


def test_nonconvex_internal_warns():
    with pytest.warns(E.AssumptionWarning):
        E.InternalEnergy.custom(lambda r: -np.asarray(r) ** 2, lambda r: -2 * np.asarray(r),
                                lambda r: -2 * np.ones_like(np.asarray(r)))


def test_potential_convexity_warning():
    with pytest.warns(E.AssumptionWarning):
        E.Potential.custom(lambda x: -np.asarray(x) ** 2, lambda x: -2 * np.asarray(x), 0.0)


def test_interaction_symmetry_warning():
    with pytest.warns(E.AssumptionWarning):
        E.Interaction.custom(lambda x: np.exp(np.asarray(x)), lambda x: np.exp(np.asarray(x)), 0.0)


def test_kappa_from_parts():
    spec = E.EnergySpec(E.InternalEnergy.boltzmann(), E.Potential.quadratic(1.0), E.Interaction.quadratic(0.5))
    assert spec.kappa == 1.0
    assert spec.kappa_sum == 1.5
    assert E.EnergySpec(potential=E.Potential.cosine(1.0, 2.0)).kappa == -4.0


# --------------------------------------------------------------------------
# slope


def test_slope_undefined_when_all_vacuum():
    g = O.Grid(-1, 1, 32)
    with pytest.raises(ValueError, match="slope undefined"):
        E.subdifferential_field(spec_of(E.InternalEnergy.boltzmann()), _all_vacuum(g))


def _all_vacuum(g: O.Grid) -> O.GridMeasure:
    """Alternating single-cell spikes: every 3-point stencil touches an empty cell."""
    rho = np.zeros(g.n_cells)
    rho[::2] = 1.0
    return O.GridMeasure.from_density(g, rho)


def test_heat_slope_zero_on_uniform():
    g = O.Grid(0.0, 1.0, 100)
    spec = spec_of(E.InternalEnergy.boltzmann())
    assert E.metric_slope_sq(spec, O.GridMeasure.uniform(g)) == pytest.approx(0.0, abs=1e-20)


def test_plateau_interior_field_vanishes():
    g = O.Grid(-2.0, 2.0, 200)
    mu = O.GridMeasure.uniform(g, -1.0, 1.0)
    w = E.subdifferential_field(spec_of(E.InternalEnergy.boltzmann()), mu)
    interior = np.abs(g.centers) < 0.9
    assert np.nanmax(np.abs(w[interior])) < 1e-10


def test_ou_stationary_slope_small():
    g = O.Grid(-5.0, 5.0, 512)
    spec = E.EnergySpec(E.InternalEnergy.boltzmann(), E.Potential.quadratic(1.0))
    mu = O.GridMeasure.gaussian(g, 0.0, np.sqrt(0.5))
    assert E.metric_slope_sq(spec, mu) < 2.5e-3
    w = E.subdifferential_field(spec, mu)
    assert np.sqrt(np.nansum(w * w * mu.masses)) < 0.05


@pytest.mark.parametrize("sigma", [0.3, 0.7, 1.0])
def test_pure_potential_slope_is_variance(sigma):
    g = O.Grid(-8.0, 8.0, 800)
    spec = spec_of(potential=E.Potential.quadratic(1.0))
    mu = O.GridMeasure.gaussian(g, 0.0, sigma)
    assert E.metric_slope_sq(spec, mu) == pytest.approx(sigma ** 2, rel=1e-3)


SPECS = [
    E.EnergySpec(E.InternalEnergy.boltzmann()),
    E.EnergySpec(E.InternalEnergy.boltzmann(), E.Potential.quadratic(1.0)),
    E.EnergySpec(E.InternalEnergy.renyi(2.0)),
    E.EnergySpec(E.InternalEnergy.boltzmann(), E.Potential.quadratic(0.5), E.Interaction.quadratic(0.3)),
]
GRID = O.Grid(-5.0, 5.0, 400)


def gauss(m, s):
    return O.GridMeasure.gaussian(GRID, m, s)


@given(st.sampled_from(range(len(SPECS))), st.floats(-1.5, 1.5), st.floats(0.4, 1.0),
       st.floats(-1.5, 1.5), st.floats(0.4, 1.0))
@settings(max_examples=30, deadline=None)
def test_subdifferential_inequality(k, m1, s1, m2, s2):
    # the gap error is O(dx^2); sub-cell translations need a fine grid
    g = O.Grid(-5.0, 5.0, 1024)
    mu, nu = O.GridMeasure.gaussian(g, m1, s1), O.GridMeasure.gaussian(g, m2, s2)
    assert E.subdifferential_gap(SPECS[k], mu, nu) >= -1e-4


@given(st.sampled_from(range(len(SPECS))), st.floats(-1.5, 1.5), st.floats(0.4, 1.0),
       st.floats(-1.5, 1.5), st.floats(0.4, 1.0))
@settings(max_examples=15, deadline=None)
def test_geodesic_convexity_chord(k, m1, s1, m2, s2):
    spec = SPECS[k]
    a, b = gauss(m1, s1), gauss(m2, s2)
    d2 = O.w2_sq(a, b)
    Fa, Fb = E.flow_energy(spec, a), E.flow_energy(spec, b)
    for s in (0.25, 0.5, 0.75):
        Fs = E.flow_energy(spec, O.displacement_interpolation(a, b, s))
        chord = (1 - s) * Fa + s * Fb - 0.5 * spec.kappa * s * (1 - s) * d2
        assert Fs <= chord + 1e-4


# --------------------------------------------------------------------------
# quadratic lower bound


def test_lower_bound_midpoint_rule():
    spec = E.EnergySpec(E.InternalEnergy.boltzmann(), E.Potential.quadratic(1.0))
    qlb = E.calibrate_lower_bound(spec, gauss(0.0, np.sqrt(0.5)))
    assert qlb.c1 == -0.5
    assert -spec.kappa < qlb.c1 < -spec.kappa + 1


def test_lower_bound_zero_at_minimiser():
    spec = E.EnergySpec(E.InternalEnergy.boltzmann(), E.Potential.quadratic(1.0))
    stat = gauss(0.0, np.sqrt(0.5))
    qlb = E.calibrate_lower_bound(spec, stat, probes=[stat], default_family=False)
    assert qlb(stat) == pytest.approx(0.0, abs=1e-6)


def test_lower_bound_empty_family():
    with pytest.raises(ValueError):
        E.calibrate_lower_bound(SPECS[0], gauss(0, 1), probes=[], default_family=False)


@pytest.mark.parametrize("k", range(len(SPECS)))
def test_lower_bound_nonnegative_on_stress_family(k):
    spec = SPECS[k]
    qlb = E.calibrate_lower_bound(spec, gauss(0.3, 0.8))
    rng = np.random.default_rng(k)
    stress = [gauss(rng.uniform(-2, 2), rng.uniform(0.2, 1.2)) for _ in range(30)]
    stress += E.gaussian_probe_family(GRID)
    assert min(qlb(m) for m in stress) >= -1e-6
