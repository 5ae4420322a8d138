"""Audits of the uncontrolled EVI properties of the gradient flow.

All statements refer to the flow energy ``F`` and its convexity constant
``kappa = spec.kappa``:

* EVI: ``1/2 d/dt W^2(mu_t, nu) + kappa/2 W^2(mu_t, nu) + F(mu_t) <= F(nu)``;
* contraction: ``W(S_t mu, S_t nu) <= e^{-kappa t} W(mu, nu)``;
* monotonicity: ``t -> F(S_t mu)`` non-increasing;
* short-time expansion (``kappa <= 0``):
  ``e^{2 kappa t}/2 W^2(S_t mu, nu) - 1/2 W^2(mu, nu)
  <= I_{2 kappa}(t) (F(nu) - F(mu)) + t^2/2 |dF|^2(mu)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .audit import AuditReport
from .energy import EnergySpec, flow_energy, metric_slope_sq
from .flow import ControlledTrajectory, default_tol, evolve
from .ot_core import GridMeasure, w2, w2_sq

logger = logging.getLogger(__name__)


@dataclass
class EviAuditConfig:
    """Tolerance model ``c (dx + dt)`` and the time grid for EVI audits."""

    dt: float = 0.01
    T: float = 1.0
    c_tol: float = 10.0
    tol: float | None = None
    pairs: list = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.tol is not None and self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.c_tol <= 0:
            raise ValueError("tolerance constant must be positive")


def evi_pointwise(spec: EnergySpec, traj: ControlledTrajectory, nu: GridMeasure,
                  tol: float | None = None, c_tol: float = 10.0) -> AuditReport:
    """EVI slack at interior stored times (centred derivative of ``W^2/2``)."""
    t = traj.times
    if len(t) < 3:
        raise ValueError("need at least three stored states")
    states = traj.states
    W2 = np.array([w2_sq(m, nu) for m in states])
    F = np.array([flow_energy(spec, m) for m in states])
    Fnu = flow_energy(spec, nu)
    D = 0.5 * (W2[2:] - W2[:-2]) / (t[2:] - t[:-2])
    lhs = D + 0.5 * spec.kappa * W2[1:-1] + F[1:-1]
    slack = Fnu - lhs
    j = int(np.argmin(slack))
    tol = default_tol(traj, c_tol) if tol is None else tol
    return AuditReport("evi_pointwise", float(lhs[j]), float(Fnu), float(slack[j]), float(tol),
                       details={"t_worst": float(t[1:-1][j]),
                                "series": {"t": t[1:-1], "lhs": lhs, "slack": slack}})


def contraction_audit(spec: EnergySpec, mu: GridMeasure, nu: GridMeasure, T: float, dt: float,
                      tol: float | None = None, rel_tol: float = 0.0, kappa: float | None = None,
                      c_tol: float = 10.0, substep: bool = False) -> AuditReport:
    """Check ``W(S_t mu, S_t nu) <= e^{-kappa t} W(mu, nu) (1 + rel_tol) + tol``.

    ``kappa`` defaults to ``spec.kappa``; passing another value probes
    sharpness. ``tol`` defaults to ``c_tol (dx + dt)``.
    """
    k = spec.kappa if kappa is None else float(kappa)
    ta = evolve(spec, mu, None, T, dt, substep=substep, track_speed=False)
    tb = evolve(spec, nu, None, T, dt, substep=substep, track_speed=False)
    t = ta.times
    W = np.array([w2(a, b) for a, b in zip(ta.states, tb.states)])
    bound = np.exp(-k * t) * W[0] * (1.0 + rel_tol)
    slack = bound - W
    j = int(np.argmin(slack))
    if tol is None:
        tol = default_tol(ta, c_tol)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(W[0] > 0, W / W[0], 0.0)
    return AuditReport("contraction", float(W[j]), float(bound[j]), float(slack[j]), float(tol),
                       details={"kappa": k, "rel_tol": rel_tol,
                                "series": {"t": t, "w2": W, "bound": bound, "ratio": ratio}})


def monotonicity_audit(spec: EnergySpec, mu: GridMeasure, T: float, dt: float,
                       tol: float = 1e-6, substep: bool = False) -> AuditReport:
    """``F(S_t mu)`` non-increasing up to ``tol`` per step."""
    tr = evolve(spec, mu, None, T, dt, substep=substep, track_speed=False)
    F = np.array([flow_energy(spec, m) for m in tr.states])
    inc = np.diff(F)
    j = int(np.argmax(inc)) if len(inc) else 0
    worst = float(inc[j]) if len(inc) else 0.0
    return AuditReport("monotonicity", worst, 0.0, -worst, float(tol),
                       details={"series": {"t": tr.times, "energy": F}})


def _I(two_kappa: float, t: float) -> float:
    """``int_0^t e^{2 kappa s} ds`` in closed form."""
    if two_kappa == 0:
        return t
    return math.expm1(two_kappa * t) / two_kappa


def asymptotic_expansion_audit(spec: EnergySpec, mu: GridMeasure, nu: GridMeasure,
                               t_list: Sequence[float], dt: float | None = None,
                               tol: float = 5e-3, substep: bool = False) -> AuditReport:
    """Short-time expansion audit, valid for ``kappa <= 0``.

    Raises
    ------
    ValueError
        ``"hypothesis κ ≤ 0 violated"`` if ``spec.kappa > 0``.
    """
    k = spec.kappa
    if k > 0:
        raise ValueError("hypothesis κ ≤ 0 violated")
    slope = metric_slope_sq(spec, mu)
    Fmu, Fnu = flow_energy(spec, mu), flow_energy(spec, nu)
    W0 = w2_sq(mu, nu)
    rows = []
    for t in t_list:
        t = float(t)
        if t == 0:
            St = mu
        else:
            h = dt if dt is not None else min(t / 10.0, 1e-3)
            St = evolve(spec, mu, None, t, h, substep=substep, track_speed=False).final
        lhs = 0.5 * math.exp(2 * k * t) * w2_sq(St, nu) - 0.5 * W0
        rhs = _I(2 * k, t) * (Fnu - Fmu) + 0.5 * t * t * slope
        rows.append((t, lhs, rhs, rhs - lhs))
    arr = np.array(rows)
    j = int(np.argmin(arr[:, 3]))
    return AuditReport("asymptotic_expansion", float(arr[j, 1]), float(arr[j, 2]), float(arr[j, 3]),
                       float(tol), details={"slope_sq": slope,
                                            "series": {"t": arr[:, 0], "lhs": arr[:, 1],
                                                       "rhs": arr[:, 2], "slack": arr[:, 3]}})
