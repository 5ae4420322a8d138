"""McCann-type energies on grid measures.

An :class:`EnergySpec` bundles an internal energy ``U``, a confining
potential ``V`` and an even interaction kernel ``W``.  Two functionals are
exposed:

``energy``
    The plain sum ``int U(rho) + int V dmu + iint W(x-y) dmu dmu``.
``flow_energy``
    ``1/2 int U(rho) + int V dmu + 1/2 iint W dmu dmu``, the functional whose
    Wasserstein gradient flow is the drift-diffusion equation solved in
    :mod:`wgflow.flow` (diffusion ``1/2 d_xx P(rho)``, drift ``-V' - W' * mu``).
    All inequality audits are stated for this functional.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ot_core import GridMeasure, Grid, transport_map, w2_sq

logger = logging.getLogger(__name__)

RHO_FLOOR = 1e-12

Fn = Callable[[np.ndarray], np.ndarray]


class AssumptionWarning(UserWarning):
    """A sampled structural check on U, V or W failed."""


# --------------------------------------------------------------------------
# internal energy


@dataclass(frozen=True)
class InternalEnergy:
    """Internal energy density ``U`` with derivative and pressure.

    Use the factories :meth:`boltzmann`, :meth:`renyi`, :meth:`zero` or
    :meth:`custom`.
    """

    kind: str
    U: Fn
    dU: Fn
    d2U: Fn
    P: Fn
    alpha: float | None = None
    # limit of P(r)/r as r -> 0, used by the diffusion solver in vacuum
    c0: float = 0.0

    @classmethod
    def boltzmann(cls) -> "InternalEnergy":
        def U(r):
            r = np.asarray(r, dtype=float)
            return np.where(r > 0, r * np.log(np.where(r > 0, r, 1.0)), 0.0)

        def dU(r):
            with np.errstate(divide="ignore"):
                return np.log(r) + 1.0

        return cls("boltzmann", U, dU, lambda r: 1.0 / np.asarray(r, dtype=float),
                   lambda r: np.asarray(r, dtype=float) * 1.0, None, 1.0)

    @classmethod
    def renyi(cls, alpha: float) -> "InternalEnergy":
        a = float(alpha)
        if a <= 0 or a == 1.0:
            raise ValueError("renyi exponent must be positive and different from 1")

        def U(r):
            return np.asarray(r, dtype=float) ** a / (a - 1.0)

        def dU(r):
            return a * np.asarray(r, dtype=float) ** (a - 1.0) / (a - 1.0)

        def d2U(r):
            return a * np.asarray(r, dtype=float) ** (a - 2.0)

        def P(r):
            return np.asarray(r, dtype=float) ** a

        obj = cls("renyi", U, dU, d2U, P, a, 0.0 if a > 1 else np.inf)
        obj.validate()
        return obj

    @classmethod
    def zero(cls) -> "InternalEnergy":
        z = lambda r: np.zeros_like(np.asarray(r, dtype=float))  # noqa: E731
        return cls("none", z, z, z, z, None, 0.0)

    @classmethod
    def custom(cls, U: Fn, dU: Fn, d2U: Fn, P: Fn | None = None) -> "InternalEnergy":
        if P is None:
            P = lambda r: np.asarray(r) * dU(r) - U(r)  # noqa: E731
        obj = cls("custom", U, dU, d2U, P, None, 0.0)
        obj.validate()
        return obj

    def validate(self) -> list[str]:
        """Sampled checks of convexity, superlinearity and the McCann map.

        Failures are reported as :class:`AssumptionWarning` and returned.
        """
        issues: list[str] = []
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r = np.logspace(-6, 4, 400)
            u = self.U(r)
            if abs(float(self.U(np.array([0.0]))[0])) > 1e-12:
                issues.append("U(0) != 0")
            # second divided differences on a nonuniform grid
            h0, h1 = np.diff(r)[:-1], np.diff(r)[1:]
            dd = 2 * (h0 * u[2:] - (h0 + h1) * u[1:-1] + h1 * u[:-2]) / (h0 * h1 * (h0 + h1))
            if np.min(dd) < -1e-10:
                issues.append("U not convex on sampled densities")
            big = r[r >= 10.0]
            ratio = self.U(big) / big
            if np.any(np.diff(ratio) <= 0):
                issues.append("U(r)/r not increasing for large r (superlinear growth)")
            s = np.logspace(-4, 4, 400)
            m = s * self.U(1.0 / s)
            if np.any(np.diff(m) > 1e-9 * (1 + np.abs(m[1:]))):
                issues.append("s U(1/s) not non-increasing")
            k0, k1 = np.diff(s)[:-1], np.diff(s)[1:]
            ddm = 2 * (k0 * m[2:] - (k0 + k1) * m[1:-1] + k1 * m[:-2]) / (k0 * k1 * (k0 + k1))
            if np.min(ddm) < -1e-8 * (1 + np.max(np.abs(ddm))):
                issues.append("s U(1/s) not convex")
            # doubling: U(2r) <= C (1 + U(r)) with C estimated on the sample
            c_est = np.max((np.abs(self.U(2 * r)) + 1.0) / (1.0 + np.abs(u)))
            if not np.isfinite(c_est):
                issues.append("doubling constant not finite on sample")
        for msg in issues:
            warnings.warn(f"internal energy {self.kind}: {msg}", AssumptionWarning, stacklevel=3)
        return issues

    def value(self, r: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore"):
            out = self.U(r)
        if not np.all(np.isfinite(out)):
            raise ValueError("density out of admissible range")
        return out

    def pressure_coefficient(self, rho: np.ndarray) -> np.ndarray:
        """``P(rho)/rho`` with the vacuum limit substituted at ``rho = 0``."""
        rho = np.asarray(rho, dtype=float)
        safe = np.where(rho > 0, rho, 1.0)
        with np.errstate(over="ignore", invalid="ignore"):
            c = np.where(rho > 0, self.P(safe) / safe, self.c0)
        if not np.all(np.isfinite(c)):
            raise ValueError("density out of admissible range")
        return c


def pressure(spec: InternalEnergy, r) -> float | np.ndarray:
    """Pressure ``P(r) = r U'(r) - U(r)``.

    Raises
    ------
    ValueError
        If any ``r < 0``.
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0):
        raise ValueError("pressure requires r >= 0")
    out = spec.P(arr)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# potentials


def _second_diff_min(f: Fn, lo: float = -10.0, hi: float = 10.0, n: int = 2001) -> float:
    x = np.linspace(lo, hi, n)
    h = x[1] - x[0]
    v = f(x)
    return float(np.min((v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2))


@dataclass(frozen=True)
class Potential:
    """Confining potential ``V`` with derivative and convexity constant."""

    kind: str
    V: Fn
    dV: Fn
    kappa: float
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if _second_diff_min(self.V) < self.kappa - 1e-6:
            warnings.warn(f"potential {self.kind}: sampled convexity below kappa_V",
                          AssumptionWarning, stacklevel=3)

    @classmethod
    def zero(cls) -> "Potential":
        z = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
        return cls("zero", z, z, 0.0)

    @classmethod
    def quadratic(cls, kappa: float = 1.0, center: float = 0.0) -> "Potential":
        k, c = float(kappa), float(center)
        return cls("quadratic", lambda x: 0.5 * k * (np.asarray(x) - c) ** 2,
                   lambda x: k * (np.asarray(x) - c), k, {"kappa_v": k, "center": c})

    @classmethod
    def cosine(cls, amplitude: float = 1.0, wavenumber: float = 1.0) -> "Potential":
        """``V(x) = A cos(k x)``, semiconvex with constant ``-|A| k^2``."""
        A, k = float(amplitude), float(wavenumber)
        return cls("cosine", lambda x: A * np.cos(k * np.asarray(x)),
                   lambda x: -A * k * np.sin(k * np.asarray(x)), -abs(A) * k * k,
                   {"amplitude": A, "wavenumber": k})

    @classmethod
    def custom(cls, V: Fn, dV: Fn, kappa: float) -> "Potential":
        return cls("custom", V, dV, float(kappa))


@dataclass(frozen=True)
class Interaction:
    """Even interaction kernel ``W >= 0`` with derivative and convexity constant."""

    kind: str
    W: Fn
    dW: Fn
    kappa: float
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        x = np.linspace(-10, 10, 2001)
        if np.max(np.abs(self.W(x) - self.W(-x))) > 1e-12:
            warnings.warn(f"interaction {self.kind}: kernel not even", AssumptionWarning, stacklevel=3)
        if np.min(self.W(x)) < 0:
            warnings.warn(f"interaction {self.kind}: kernel negative", AssumptionWarning, stacklevel=3)
        if _second_diff_min(self.W) < self.kappa - 1e-6:
            warnings.warn(f"interaction {self.kind}: sampled convexity below kappa_W",
                          AssumptionWarning, stacklevel=3)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero"

    @classmethod
    def zero(cls) -> "Interaction":
        z = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
        return cls("zero", z, z, 0.0)

    @classmethod
    def quadratic(cls, c: float = 1.0) -> "Interaction":
        c = float(c)
        if c < 0:
            raise ValueError("quadratic interaction requires c >= 0")
        return cls("quadratic", lambda x: 0.5 * c * np.asarray(x) ** 2,
                   lambda x: c * np.asarray(x), c, {"kappa_w": c})

    @classmethod
    def custom(cls, W: Fn, dW: Fn, kappa: float) -> "Interaction":
        return cls("custom", W, dW, float(kappa))


@dataclass(frozen=True)
class EnergySpec:
    """The triple ``(U, V, W)``.

    ``kappa`` is the geodesic convexity constant of :func:`flow_energy`:
    ``kappa_V + min(kappa_W, 0)``. A positive ``kappa_W`` does not add
    convexity along translations, on which the interaction energy is flat.
    """

    internal: InternalEnergy = field(default_factory=InternalEnergy.boltzmann)
    potential: Potential = field(default_factory=Potential.zero)
    interaction: Interaction = field(default_factory=Interaction.zero)

    @property
    def kappa(self) -> float:
        return self.potential.kappa + min(self.interaction.kappa, 0.0)

    @property
    def kappa_sum(self) -> float:
        """``kappa_V + kappa_W``."""
        return self.potential.kappa + self.interaction.kappa

    def describe(self) -> dict:
        return {
            "internal": self.internal.kind,
            "alpha": self.internal.alpha,
            "potential": self.potential.kind,
            "potential_params": dict(self.potential.params),
            "interaction": self.interaction.kind,
            "interaction_params": dict(self.interaction.params),
            "kappa": self.kappa,
        }


# --------------------------------------------------------------------------
# evaluation


def _kernel_conv(values_at_offsets: np.ndarray, rho: np.ndarray, n_out: int) -> np.ndarray:
    """``out[i] = sum_j K(i - j) rho_j`` with ``K`` sampled at offsets -(n-1)..(n-1)."""
    n = rho.shape[0]
    full = np.convolve(rho, values_at_offsets, mode="full")
    return full[n - 1 : n - 1 + n_out]


def interaction_potential(spec: EnergySpec, mu: GridMeasure) -> np.ndarray:
    """``(W * mu)(x_i)`` at cell centres."""
    g = mu.grid
    if spec.interaction.is_zero:
        return np.zeros(g.n_cells)
    k = np.arange(-(g.n_cells - 1), g.n_cells) * g.dx
    return _kernel_conv(spec.interaction.W(k), mu.density, g.n_cells) * g.dx


def interaction_force_centers(spec: EnergySpec, mu: GridMeasure) -> np.ndarray:
    """``(W' * mu)(x_i)`` at cell centres."""
    g = mu.grid
    if spec.interaction.is_zero:
        return np.zeros(g.n_cells)
    k = np.arange(-(g.n_cells - 1), g.n_cells) * g.dx
    return _kernel_conv(spec.interaction.dW(k), mu.density, g.n_cells) * g.dx


def interaction_force_faces(spec: EnergySpec, mu: GridMeasure) -> np.ndarray:
    """``(W' * mu)`` at the ``n - 1`` interior faces."""
    g = mu.grid
    if spec.interaction.is_zero:
        return np.zeros(g.n_cells - 1)
    k = (np.arange(-(g.n_cells - 1), g.n_cells) + 0.5) * g.dx
    return _kernel_conv(spec.interaction.dW(k), mu.density, g.n_cells - 1) * g.dx


def energy_parts(spec: EnergySpec, mu: GridMeasure) -> tuple[float, float, float]:
    """Internal, potential and interaction energies (no prefactors)."""
    g = mu.grid
    rho = mu.density
    e_u = float(np.sum(spec.internal.value(rho)) * g.dx)
    e_v = float(np.sum(spec.potential.V(g.centers) * rho) * g.dx)
    if spec.interaction.is_zero:
        e_w = 0.0
    else:
        e_w = float(np.sum(interaction_potential(spec, mu) * rho) * g.dx)
    return e_u, e_v, e_w


def energy(spec: EnergySpec, mu: GridMeasure) -> float:
    """``sum U(rho_i) dx + sum V(x_i) rho_i dx + sum_ij W(x_i - x_j) rho_i rho_j dx^2``.

    Raises
    ------
    ValueError
        ``"density out of admissible range"`` if ``U`` overflows.
    """
    e_u, e_v, e_w = energy_parts(spec, mu)
    return e_u + e_v + e_w


def flow_energy(spec: EnergySpec, mu: GridMeasure) -> float:
    """Driving functional of the flow: ``1/2 U-part + V-part + 1/2 W-part``."""
    e_u, e_v, e_w = energy_parts(spec, mu)
    return 0.5 * e_u + e_v + 0.5 * e_w


def subdifferential_field(spec: EnergySpec, mu: GridMeasure,
                          rho_floor: float = RHO_FLOOR) -> np.ndarray:
    """Minimal subgradient ``w = 1/2 (U'(rho))' + V' + W' * mu`` at cell centres.

    Derivatives of ``U'(rho)`` use centred differences (one-sided at the
    grid ends). Cells whose stencil touches a density below ``rho_floor``
    are masked with NaN.

    Raises
    ------
    ValueError
        ``"slope undefined"`` if every cell is masked.
    """
    g = mu.grid
    rho = mu.density
    ok = rho >= rho_floor
    mask = ok.copy()
    mask[1:] &= ok[:-1]
    mask[:-1] &= ok[1:]
    if not np.any(mask):
        raise ValueError("slope undefined")
    w = spec.potential.dV(g.centers) + interaction_force_centers(spec, mu)
    if spec.internal.kind != "none":
        safe = np.where(ok, rho, 1.0)
        up = spec.internal.dU(safe)
        w = w + 0.5 * np.gradient(up, g.dx)
    return np.where(mask, w, np.nan)


def metric_slope_sq(spec: EnergySpec, mu: GridMeasure,
                    rho_floor: float = RHO_FLOOR) -> float:
    """``||w||^2_{L^2(mu)}`` for the field of :func:`subdifferential_field`."""
    w = subdifferential_field(spec, mu, rho_floor)
    return float(np.nansum(w * w * mu.masses))


def subdifferential_gap(spec: EnergySpec, mu: GridMeasure, nu: GridMeasure) -> float:
    """Slack of the subdifferential inequality at ``(mu, nu)``.

    ``F(nu) - F(mu) - <w, t - id>_{L^2(mu)} - kappa/2 W2^2(mu, nu)``;
    nonnegative for the exact flow energy ``F``.
    """
    w = subdifferential_field(spec, mu)
    tm = transport_map(mu, nu)
    pair = float(np.nansum(w * tm.barycentric_values * mu.masses))
    return (flow_energy(spec, nu) - flow_energy(spec, mu) - pair
            - 0.5 * spec.kappa * w2_sq(mu, nu))


# --------------------------------------------------------------------------
# quadratic lower bound


@dataclass(frozen=True)
class QuadraticLowerBound:
    """``Fbar(mu) = F(mu) + c1/2 W2^2(mu, anchor) + c2`` with ``inf Fbar = 0``."""

    spec: EnergySpec
    anchor: GridMeasure
    c1: float
    c2: float
    n_probes: int = 0

    def __call__(self, mu: GridMeasure) -> float:
        return flow_energy(self.spec, mu) + 0.5 * self.c1 * w2_sq(mu, self.anchor) + self.c2

    def M(self, rho: GridMeasure) -> float:
        """``max{F(rho) + c1 W2^2(rho, anchor) + c2, 0}``."""
        return max(flow_energy(self.spec, rho) + self.c1 * w2_sq(rho, self.anchor) + self.c2, 0.0)


def gaussian_probe_family(grid: Grid, n_means: int = 7, stds: Sequence[float] | None = None) -> list[GridMeasure]:
    """Gaussians with means across the central half of the grid."""
    L = grid.length
    if stds is None:
        stds = [L / 64, L / 24, L / 12, L / 6]
    means = np.linspace(grid.x_min + 0.25 * L, grid.x_max - 0.25 * L, n_means)
    return [GridMeasure.gaussian(grid, m, s) for m in means for s in stds]


def _descend(spec: EnergySpec, anchor: GridMeasure, c1: float, mu: GridMeasure,
             T: float, dt: float) -> float:
    """Lowest ``F + c1/2 W2^2(., anchor)`` along its gradient flow from ``mu``.

    The flow is the energy flow plus the control ``c1 b_mu^anchor``, frozen
    on each step. Stops early once the value stalls.
    """
    from .flow import ControlField, max_stable_dt, step

    g = mu.grid

    def fbar(m: GridMeasure) -> float:
        return flow_energy(spec, m) + 0.5 * c1 * w2_sq(m, anchor)

    best = cur = fbar(mu)
    t = 0.0
    while t < T:
        psi = np.cumsum(c1 * transport_map(mu, anchor).barycentric_values) * g.dx
        u = ControlField.constant(g, psi)
        h = min(dt, T - t, 0.9 * max_stable_dt(spec, mu, u))
        try:
            mu = step(spec, mu, u, 0.0, h)
        except ValueError as exc:  # keep the probe minimum
            logger.debug("lower-bound descent stopped: %s", exc)
            break
        t += h
        nxt = fbar(mu)
        best = min(best, nxt)
        if cur - nxt < 1e-10 * h:
            break
        cur = nxt
    return best


def calibrate_lower_bound(spec: EnergySpec, anchor: GridMeasure,
                          probes: Sequence[GridMeasure] | None = None,
                          default_family: bool = True, descent_time: float = 8.0,
                          descent_dt: float = 0.02) -> QuadraticLowerBound:
    """Choose ``c1`` in ``(-kappa, -kappa+1)`` and ``c2`` so that ``inf Fbar = 0``.

    ``c1`` is the midpoint of the interval, clamped to ``>= 0.05 - kappa``.
    The probe family is the supplied ``probes``, the anchor, and (unless
    ``default_family`` is False) a Gaussian family on the grid. From the best
    probe, the ``(kappa + c1)``-convex functional ``F + c1/2 W2^2(., anchor)``
    is descended along its gradient flow for ``descent_time`` (0 disables)
    and ``c2`` is minus the lowest value seen.

    Raises
    ------
    ValueError
        If the probe family is empty.
    """
    family = list(probes or [])
    if default_family:
        family += [anchor] + gaussian_probe_family(anchor.grid)
    if not family:
        raise ValueError("probe family is empty")
    k = spec.kappa
    c1 = max(-k + 0.5, 0.05 - k)
    vals = [flow_energy(spec, p) + 0.5 * c1 * w2_sq(p, anchor) for p in family]
    j = int(np.argmin(vals))
    low = vals[j]
    if descent_time > 0:
        low = min(low, _descend(spec, anchor, c1, family[j], descent_time, descent_dt))
    return QuadraticLowerBound(spec, anchor, c1, -low, len(family))
