from __future__ import annotations

import math

import numpy as np
import pytest

from wgflow import energy as E
from wgflow import evi
from wgflow import flow as F
from wgflow import ot_core as O

HEAT = E.EnergySpec()
OU = E.EnergySpec(E.InternalEnergy.boltzmann(), E.Potential.quadratic(1.0))
G_HEAT = O.Grid(-6.0, 6.0, 256)
G_OU = O.Grid(-5.0, 5.0, 400)
NARROW = O.GridMeasure.gaussian(G_HEAT, 0.0, 0.3)
WIDE = O.GridMeasure.gaussian(G_HEAT, 0.0, 1.0)


def test_config_validation():
    assert evi.EviAuditConfig().c_tol == 10.0
    with pytest.raises(ValueError):
        evi.EviAuditConfig(tol=0.0)
    with pytest.raises(ValueError):
        evi.EviAuditConfig(c_tol=-1.0)


# --------------------------------------------------------------------------
# pointwise EVI


def test_evi_heat_vs_wide():
    tr = F.evolve(HEAT, NARROW, None, 0.5, 0.005, track_speed=False)
    rep = evi.evi_pointwise(HEAT, tr, WIDE, tol=5e-3)
    assert rep.passed
    # frozen: worst slack on this grid and step
    assert rep.slack == pytest.approx(0.0197, abs=2e-3)


def test_evi_reversed_fails():
    tr = F.evolve(HEAT, NARROW, None, 0.5, 0.005, track_speed=False)
    rep = evi.evi_pointwise(HEAT, tr.reversed(), WIDE, tol=5e-3)
    assert not rep.passed
    assert rep.slack < -1.0


def test_evi_same_state_slack_vanishes():
    stat = O.GridMeasure.gaussian(G_OU, 0.0, math.sqrt(0.5))
    tr = F.evolve(OU, stat, None, 0.2, 0.004, track_speed=False)
    rep = evi.evi_pointwise(OU, tr, tr.state(len(tr) // 2))
    assert rep.passed
    assert abs(rep.slack) < 1e-3


def test_evi_needs_three_states():
    tr = F.evolve(HEAT, NARROW, None, 0.01, 0.01)
    with pytest.raises(ValueError):
        evi.evi_pointwise(HEAT, tr, WIDE)


# --------------------------------------------------------------------------
# contraction


def test_ou_contraction_equal_variances():
    mu = O.GridMeasure.gaussian(G_OU, -1.0, 1.0)
    nu = O.GridMeasure.gaussian(G_OU, 1.0, 1.0)
    rep = evi.contraction_audit(OU, mu, nu, 1.0, 0.004, tol=0.0, rel_tol=0.02)
    assert rep.passed
    s = rep.details["series"]
    assert np.allclose(s["w2"], 2 * np.exp(-s["t"]), rtol=0.01)


def test_contraction_identical_pair():
    rep = evi.contraction_audit(OU, O.GridMeasure.gaussian(G_OU, 0.3, 0.7),
                                O.GridMeasure.gaussian(G_OU, 0.3, 0.7), 0.5, 0.004, tol=1e-12)
    assert rep.passed
    assert np.max(np.abs(rep.details["series"]["w2"])) < 1e-12


def test_heat_contraction_nonincreasing():
    rep = evi.contraction_audit(HEAT, NARROW, O.GridMeasure.gaussian(G_HEAT, 0.5, 0.4), 0.5, 0.005)
    assert rep.passed
    assert np.all(np.diff(rep.details["series"]["w2"]) <= 1e-9)


def test_contraction_weaker_and_sharper_rates():
    mu = O.GridMeasure.gaussian(G_OU, -1.0, 1.0)
    nu = O.GridMeasure.gaussian(G_OU, 1.0, 1.0)
    assert evi.contraction_audit(OU, mu, nu, 1.0, 0.004, tol=0.0, rel_tol=0.02, kappa=0.9).passed
    assert not evi.contraction_audit(OU, mu, nu, 1.0, 0.004, tol=0.0, rel_tol=0.02, kappa=1.5).passed


def test_verdict_monotone_in_tolerance():
    mu = O.GridMeasure.gaussian(G_OU, -1.0, 1.0)
    nu = O.GridMeasure.gaussian(G_OU, 1.0, 1.0)
    rep = evi.contraction_audit(OU, mu, nu, 1.0, 0.004, tol=0.0, kappa=1.2)
    verdicts = [evi.contraction_audit(OU, mu, nu, 1.0, 0.004, tol=t, kappa=1.2).passed
                for t in (0.0, abs(rep.slack) / 2, abs(rep.slack) * 2, 1.0)]
    assert verdicts == sorted(verdicts)
    assert verdicts[-1]


# --------------------------------------------------------------------------
# monotonicity


@pytest.mark.parametrize("spec,mu", [
    (HEAT, NARROW),
    (OU, O.GridMeasure.gaussian(G_OU, 1.5, 0.4)),
    (E.EnergySpec(E.InternalEnergy.renyi(2.0)), O.GridMeasure.barenblatt(O.Grid(-3, 3, 200), 0.0, 1.0)),
])
def test_energy_nonincreasing(spec, mu):
    assert evi.monotonicity_audit(spec, mu, 0.5, 0.004, substep=True).passed


# --------------------------------------------------------------------------
# short-time expansion


def test_integral_factor():
    assert evi._I(0.0, 0.3) == 0.3
    assert evi._I(-2.0, 0.5) == pytest.approx((1 - math.exp(-1.0)) / 2.0, rel=1e-14)


def test_asymptotics_heat():
    rep = evi.asymptotic_expansion_audit(HEAT, NARROW, WIDE, [0.01, 0.05, 0.1], tol=5e-3)
    assert rep.passed
    # frozen slacks at t = 0.01, 0.05, 0.1
    assert np.allclose(rep.details["series"]["slack"], [0.0053, 0.0225, 0.0395], atol=2e-3)


def test_asymptotics_zero_time():
    rep = evi.asymptotic_expansion_audit(HEAT, NARROW, WIDE, [0.0])
    assert rep.lhs == 0.0 and rep.rhs == 0.0


def test_asymptotics_stationary_pair():
    g = O.Grid(0.0, 1.0, 64)
    mu = O.GridMeasure.uniform(g)
    rep = evi.asymptotic_expansion_audit(HEAT, mu, mu, [0.01, 0.1])
    assert rep.passed
    assert np.all(np.abs(rep.details["series"]["lhs"]) < 1e-12)


def test_asymptotics_requires_nonpositive_kappa():
    mu = O.GridMeasure.gaussian(G_OU, 0.0, 0.5)
    with pytest.raises(ValueError, match="hypothesis κ ≤ 0 violated"):
        evi.asymptotic_expansion_audit(OU, mu, mu, [0.01])


def test_asymptotics_semiconvex_potential():
    spec = E.EnergySpec(E.InternalEnergy.boltzmann(), E.Potential.cosine(0.2, 1.0))
    mu = O.GridMeasure.gaussian(G_HEAT, 0.3, 0.4)
    nu = O.GridMeasure.gaussian(G_HEAT, -0.2, 0.8)
    assert evi.asymptotic_expansion_audit(spec, mu, nu, [0.01, 0.05, 0.1], substep=True).passed
