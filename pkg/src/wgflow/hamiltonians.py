"""Cylindrical test functions and the upper/lower Hamiltonian images.

For ``a > 0``, an increasing ``phi`` and anchors ``rho, mu_1..mu_k``:

    f_dag(pi) = a/2 W^2(pi, rho) + phi(1/2 W^2(pi, mu))
    g_dag(pi) = g_E(pi) + g_W2(pi)

with

    g_E  = a (F(rho) - F(pi) - kappa/2 W^2(pi, rho))
           + sum_i d_i phi (F(mu_i) - F(pi) - kappa/2 W^2(pi, mu_i))
    g_W2 = 1/2 (a W(pi, rho) + sum_i d_i phi W(pi, mu_i))^2,

and the mirrored pair ``(f_ddag, g_ddag)``. ``F`` is the flow energy, whose
convexity constant is ``spec.kappa``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .energy import EnergySpec, flow_energy
from .ot_core import GridMeasure, displacement_norm_sq, transport_map, w2_sq


@dataclass(frozen=True)
class CylindricalPhi:
    """Smooth ``phi: [0, inf)^k -> R`` with positive partial derivatives.

    Built-ins: ``linear`` (``c . x``) and ``log_saturating``
    (``sum c_i log(1 + x_i)``), both with ``c_i > 0``.
    """

    kind: str
    coeffs: tuple
    f: Callable[[np.ndarray], float] | None = field(default=None, compare=False)
    grad_fn: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        c = tuple(float(v) for v in self.coeffs)
        object.__setattr__(self, "coeffs", c)
        if self.kind in ("linear", "log_saturating"):
            if not c or any(v <= 0 for v in c):
                raise ValueError("phi coefficients must be positive")
        elif self.kind == "custom":
            if self.f is None or self.grad_fn is None:
                raise ValueError("custom phi needs f and grad_fn")
            rng = np.random.default_rng(0)
            pts = rng.uniform(0.0, 10.0, size=(256, self.k))
            pts[0] = 0.0
            for x in pts:
                if np.any(np.asarray(self.grad_fn(x)) <= 0):
                    raise ValueError("custom phi must have positive partial derivatives")
        else:
            raise ValueError(f"unknown phi kind {self.kind!r}")

    @classmethod
    def linear(cls, coeffs: Sequence[float]) -> "CylindricalPhi":
        return cls("linear", tuple(coeffs))

    @classmethod
    def log_saturating(cls, coeffs: Sequence[float]) -> "CylindricalPhi":
        return cls("log_saturating", tuple(coeffs))

    @classmethod
    def custom(cls, k: int, f, grad_fn) -> "CylindricalPhi":
        return cls("custom", (1.0,) * k, f, grad_fn)

    @property
    def k(self) -> int:
        return len(self.coeffs)

    def __call__(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.coeffs)
        if self.kind == "linear":
            return float(c @ x)
        if self.kind == "log_saturating":
            return float(c @ np.log1p(x))
        return float(self.f(x))

    def grad(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.coeffs)
        if self.kind == "linear":
            return c.copy()
        if self.kind == "log_saturating":
            return c / (1.0 + x)
        return np.asarray(self.grad_fn(x), dtype=float)


def _check_common(a: float, phi: CylindricalPhi, center: GridMeasure, anchors: Sequence[GridMeasure]) -> None:
    if not a > 0:
        raise ValueError("a must be positive")
    if len(anchors) != phi.k:
        raise ValueError(f"phi takes {phi.k} arguments but {len(anchors)} anchors were given")
    for m in anchors:
        if m.grid != center.grid:
            raise ValueError("grid mismatch")


@dataclass(frozen=True, eq=False)
class TestFunctionDagger:
    """Tuple ``(a, phi, rho, mu)`` defining ``(f_dag, g_dag)``."""

    __test__ = False  # not a pytest class

    a: float
    phi: CylindricalPhi
    rho: GridMeasure
    anchors: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchors", tuple(self.anchors))
        _check_common(self.a, self.phi, self.rho, self.anchors)

    @property
    def center(self) -> GridMeasure:
        return self.rho


@dataclass(frozen=True, eq=False)
class TestFunctionDdagger:
    """Tuple ``(a, phi, gamma, pi)`` defining ``(f_ddag, g_ddag)``."""

    __test__ = False

    a: float
    phi: CylindricalPhi
    gamma: GridMeasure
    anchors: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "anchors", tuple(self.anchors))
        _check_common(self.a, self.phi, self.gamma, self.anchors)

    @property
    def center(self) -> GridMeasure:
        return self.gamma


def _dist_sq(tf, pi: GridMeasure) -> tuple[float, np.ndarray]:
    if pi.grid != tf.center.grid:
        raise ValueError("grid mismatch")
    d0 = w2_sq(pi, tf.center)
    dk = np.array([w2_sq(pi, m) for m in tf.anchors])
    return d0, dk


def f_dagger(tf: TestFunctionDagger, pi: GridMeasure) -> float:
    """``a/2 W^2(pi, rho) + phi(1/2 W^2(pi, mu))``."""
    d0, dk = _dist_sq(tf, pi)
    return 0.5 * tf.a * d0 + tf.phi(0.5 * dk)


def f_ddagger(tf: TestFunctionDdagger, mu: GridMeasure) -> float:
    """``-a/2 W^2(mu, gamma) - phi(1/2 W^2(mu, pi))``."""
    d0, dk = _dist_sq(tf, mu)
    return -0.5 * tf.a * d0 - tf.phi(0.5 * dk)


def _energies(spec: EnergySpec, tf, pi: GridMeasure) -> tuple[float, float, np.ndarray]:
    return (flow_energy(spec, pi), flow_energy(spec, tf.center),
            np.array([flow_energy(spec, m) for m in tf.anchors]))


def g_dagger(tf: TestFunctionDagger, pi: GridMeasure, spec: EnergySpec) -> tuple[float, float, float]:
    """``(g_E, g_W2, g_E + g_W2)`` for the dagger tuple."""
    d0, dk = _dist_sq(tf, pi)
    Fpi, Frho, Fmu = _energies(spec, tf, pi)
    k = spec.kappa
    dphi = tf.phi.grad(0.5 * dk)
    gE = tf.a * (Frho - Fpi - 0.5 * k * d0) + float(dphi @ (Fmu - Fpi - 0.5 * k * dk))
    s = tf.a * np.sqrt(d0) + float(dphi @ np.sqrt(dk))
    gW = 0.5 * s * s
    return float(gE), float(gW), float(gE + gW)


def g_ddagger(tf: TestFunctionDdagger, mu: GridMeasure, spec: EnergySpec) -> tuple[float, float, float]:
    """``(g_E, g_W2, g_E + g_W2)`` for the ddagger tuple.

    ``g_W2 = a^2 W^2(mu, gamma) - 1/2 (a W(mu, gamma) + sum_i d_i phi W(mu, pi_i))^2``.
    """
    d0, dk = _dist_sq(tf, mu)
    Fmu, Fgam, Fpi = _energies(spec, tf, mu)
    k = spec.kappa
    dphi = tf.phi.grad(0.5 * dk)
    gE = tf.a * (Fmu - Fgam + 0.5 * k * d0) + float(dphi @ (Fmu - Fpi + 0.5 * k * dk))
    s = tf.a * np.sqrt(d0) + float(dphi @ np.sqrt(dk))
    gW = tf.a ** 2 * d0 - 0.5 * s * s
    return float(gE), float(gW), float(gE + gW)


def g_dagger_expanded(tf: TestFunctionDagger, pi: GridMeasure, spec: EnergySpec) -> float:
    """Term-by-term expansion of ``g_dag`` (independent evaluation path)."""
    a = tf.a
    k = spec.kappa
    W0 = np.sqrt(w2_sq(pi, tf.rho))
    Wi = [np.sqrt(w2_sq(pi, m)) for m in tf.anchors]
    half = np.array([0.5 * w * w for w in Wi])
    dphi = tf.phi.grad(half)
    Fpi = flow_energy(spec, pi)
    total = a * (flow_energy(spec, tf.rho) - Fpi - 0.5 * k * W0 ** 2) + 0.5 * a * a * W0 ** 2
    cross = 0.0
    for i, m in enumerate(tf.anchors):
        total += dphi[i] * (flow_energy(spec, m) - Fpi - 0.5 * k * Wi[i] ** 2)
        cross += dphi[i] * Wi[i]
    total += 0.5 * cross ** 2 + a * W0 * cross
    return float(total)


def g_ddagger_expanded(tf: TestFunctionDdagger, mu: GridMeasure, spec: EnergySpec) -> float:
    """Term-by-term expansion of ``g_ddag`` (independent evaluation path)."""
    a = tf.a
    k = spec.kappa
    W0 = np.sqrt(w2_sq(mu, tf.gamma))
    Wi = [np.sqrt(w2_sq(mu, m)) for m in tf.anchors]
    half = np.array([0.5 * w * w for w in Wi])
    dphi = tf.phi.grad(half)
    Fmu = flow_energy(spec, mu)
    total = a * (Fmu - flow_energy(spec, tf.gamma) + 0.5 * k * W0 ** 2) + 0.5 * a * a * W0 ** 2
    cross = 0.0
    for i, m in enumerate(tf.anchors):
        total += dphi[i] * (Fmu - flow_energy(spec, m) + 0.5 * k * Wi[i] ** 2)
        cross += dphi[i] * Wi[i]
    total += -0.5 * cross ** 2 - a * W0 * cross
    return float(total)


def young_field(tf, pi: GridMeasure) -> np.ndarray:
    """``a b_pi^center + sum_i d_i phi b_pi^{anchor_i}`` at cell centres."""
    _, dk = _dist_sq(tf, pi)
    dphi = tf.phi.grad(0.5 * dk)
    Y = tf.a * transport_map(pi, tf.center).barycentric_values
    for c, m in zip(dphi, tf.anchors):
        Y = Y + c * transport_map(pi, m).barycentric_values
    return Y


def control_pairing(tf, pi: GridMeasure, u_center: np.ndarray) -> float:
    """``<u, Y>_{L^2(pi)}`` with ``Y`` from :func:`young_field`."""
    return float(np.sum(np.asarray(u_center) * young_field(tf, pi) * pi.masses))


def young_norm_sq(tf, pi: GridMeasure) -> float:
    """Exact ``||Y||^2_{L^2(pi)}`` for the field of :func:`young_field`."""
    _, dk = _dist_sq(tf, pi)
    dphi = tf.phi.grad(0.5 * dk)
    return displacement_norm_sq(pi, (tf.center,) + tuple(tf.anchors), [tf.a] + list(dphi))
