"""Discounted value function of the control problem and its audits.

The value of a controlled curve is

    A(mu, u) = int_0^inf e^{-t/lam} (-1/2 ||u_t||^2_{L^2(mu_t)} + h(mu_t)/lam) dt,

and ``Phi(mu)`` is its supremum over admissible curves starting at ``mu``.
Here the supremum runs over gradient controls spanned by a fixed basis of
potentials, piecewise constant on geometric time windows, and the integral
is truncated at ``T`` with the reward frozen afterwards:

    Phi_hat = A_T + e^{-T/lam} h(mu_T),   |Phi - Phi_hat| <= tail + opt. gap,

where ``tail = e^{-T/lam} ||h||_inf`` is always reported. ``Phi_hat`` is a
lower bound of ``Phi`` up to discretisation error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .audit import AuditReport, combine
from .energy import EnergySpec
from .flow import ControlField, ControlledTrajectory, default_basis, evolve, geometric_windows
from .hamiltonians import (TestFunctionDagger, TestFunctionDdagger, f_dagger, f_ddagger,
                           g_dagger, g_ddagger, young_field, young_norm_sq)
from .ot_core import Grid, GridMeasure, TransportMap, pushforward, w2_sq, wasserstein_p

logger = logging.getLogger(__name__)

PHI_STAR_NOTE = "relaxations Phi*, Phi_* not computed; Phi_hat at probes stands in"


# --------------------------------------------------------------------------
# rewards


@dataclass(frozen=True)
class Reward:
    """Bounded reward ``h`` on measures.

    ``sup_norm`` is a bound on ``||h||_inf`` and ``p_order`` the declared
    ``W_p`` continuity order (must be below 2).
    """

    name: str
    fn: Callable[[GridMeasure], float] = field(compare=False)
    sup_norm: float
    p_order: float = 1.0
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if not math.isfinite(self.sup_norm) or self.sup_norm < 0:
            raise ValueError("reward bound must be finite and nonnegative")
        if not 1.0 <= self.p_order < 2.0:
            raise ValueError("reward continuity order p must satisfy 1 <= p < 2")

    def __call__(self, mu: GridMeasure) -> float:
        return float(self.fn(mu))

    @classmethod
    def constant(cls, c: float) -> "Reward":
        c = float(c)
        return cls("constant", lambda mu: c, abs(c), 1.0, {"c": c})

    @classmethod
    def target_distance(cls, target: GridMeasure, p: float = 1.0) -> "Reward":
        """``-W_p^2(mu, target) / (1 + W_p^2(mu, target))``, bounded by 1."""

        def h(mu: GridMeasure) -> float:
            d = wasserstein_p(mu, target, p) ** 2
            return -d / (1.0 + d)

        return cls("target_distance", h, 1.0, p, {"p": p})

    @classmethod
    def mean_cosine(cls, amplitude: float = 1.0, wavenumber: float = 1.0) -> "Reward":
        """``A cos(k mean(mu))``; Lipschitz in ``W_1``."""
        A, k = float(amplitude), float(wavenumber)
        return cls("mean_cosine", lambda mu: A * math.cos(k * mu.mean()), abs(A), 1.0,
                   {"amplitude": A, "wavenumber": k})

    @classmethod
    def custom(cls, fn: Callable[[GridMeasure], float], sup_norm: float, p_order: float = 1.0,
               name: str = "custom") -> "Reward":
        return cls(name, fn, float(sup_norm), p_order)


# --------------------------------------------------------------------------
# problem and action


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Discounted control problem on a fixed grid.

    Parameters
    ----------
    lam : float
        Discount time scale (the integrand carries ``e^{-t/lam}``).
    T : float, optional
        Horizon, default ``8 lam``; must be at least ``5 lam``.
    basis : ndarray, optional
        Potentials ``(B, n_cells)``; default :func:`wgflow.flow.default_basis`.
        A ``(0, n_cells)`` array gives the uncontrolled problem.
    step0, min_step : float
        Initial and final compass step of the optimiser.
    """

    spec: EnergySpec
    grid: Grid
    reward: Reward
    lam: float = 1.0
    T: float | None = None
    dt: float = 0.02
    n_windows: int = 6
    window_ratio: float = 2.0
    basis: np.ndarray | None = None
    basis_names: tuple = ()
    step0: float = 0.5
    min_step: float = 1.0 / 32
    n_starts: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ValueError("discount lam must be positive")
        T = 8.0 * self.lam if self.T is None else float(self.T)
        if T < 5.0 * self.lam - 1e-12:
            raise ValueError("horizon T must be at least 5 lam")
        object.__setattr__(self, "T", T)
        if self.basis is None:
            names, B = default_basis(self.grid)
            object.__setattr__(self, "basis", B)
            object.__setattr__(self, "basis_names", names)
        B = np.asarray(self.basis, dtype=float)
        if B.ndim != 2 or B.shape[1] != self.grid.n_cells:
            raise ValueError("basis must have shape (B, n_cells)")
        object.__setattr__(self, "basis", B)
        if not self.basis_names:
            object.__setattr__(self, "basis_names", tuple(f"psi{i}" for i in range(B.shape[0])))

    @property
    def h_sup(self) -> float:
        return self.reward.sup_norm

    @property
    def tail_bound(self) -> float:
        return math.exp(-self.T / self.lam) * self.h_sup

    @property
    def tol_visc(self) -> float:
        return 0.05 * (1.0 + self.h_sup)

    def windows(self, T: float | None = None) -> np.ndarray:
        return geometric_windows(self.T if T is None else T, self.n_windows, self.window_ratio)

    @property
    def coef_shape(self) -> tuple[int, int]:
        return (self.n_windows, self.basis.shape[0])

    def control(self, coef: np.ndarray, T: float | None = None) -> ControlField:
        if self.basis.shape[0] == 0:
            return ControlField.zero()
        return ControlField.from_basis(self.grid, coef, self.windows(T), self.basis, self.basis_names)


@dataclass
class ActionValue:
    """Truncated action and the derived value estimate.

    ``phi_estimate = action + e^{-T/lam} h(mu_T)``; ``action =
    reward_integral - control_cost``.
    """

    action: float
    tail_bound: float
    phi_estimate: float
    control_cost: float
    reward_integral: float
    coefficients: np.ndarray | None = None
    control: ControlField | None = field(default=None, repr=False)
    n_evals: int = 1
    budget_exhausted: bool = False
    baseline: float | None = None
    final_state: GridMeasure | None = field(default=None, repr=False)
    lifted: bool = False

    def within_bound(self, h_sup: float, slack: float = 1e-12) -> bool:
        return abs(self.phi_estimate) <= h_sup + self.tail_bound + slack

    def to_dict(self) -> dict:
        d = {"action": self.action, "tail_bound": self.tail_bound, "phi_estimate": self.phi_estimate,
             "control_cost": self.control_cost, "reward_integral": self.reward_integral,
             "n_evals": self.n_evals, "budget_exhausted": self.budget_exhausted}
        if self.baseline is not None:
            d["baseline"] = self.baseline
        if self.coefficients is not None:
            d["coefficients"] = np.asarray(self.coefficients).tolist()
        return d


def _exp_weights(t0: np.ndarray, t1: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Weights so that ``int_{t0}^{t1} e^{-t/lam} f dt = w0 f(t0) + w1 f(t1)`` for linear f."""
    z = (t1 - t0) / lam
    E0 = np.exp(-t0 / lam)
    q = np.where(z > 0, -np.expm1(-z) / np.where(z > 0, z, 1.0), 1.0)
    w1 = E0 * lam * (q - np.exp(-z))
    w0 = E0 * lam * (1.0 - q)
    return w0, w1


def _discounted(problem: ControlProblem, traj: ControlledTrajectory,
                control: ControlField | None = None) -> tuple[float, float, float]:
    """``(reward_integral, control_cost, h(mu_T))`` over the stored horizon."""
    lam = problem.lam
    t = traj.times
    states = traj.states
    hv = np.array([problem.reward(m) for m in states])
    u = traj.control if control is None else control
    if len(t) < 2:
        return 0.0, 0.0, float(hv[-1])
    w0, w1 = _exp_weights(t[:-1], t[1:], lam)
    reward = float(np.sum(w0 * hv[:-1] + w1 * hv[1:])) / lam
    cost = 0.0
    if not u.is_zero:
        g = traj.grid
        m = traj.densities * g.dx
        c0 = np.empty(len(t) - 1)
        c1 = np.empty(len(t) - 1)
        for k in range(len(t) - 1):
            v = u.center_velocity(float(t[k]), g)
            v2 = v * v
            c0[k] = v2 @ m[k]
            c1[k] = v2 @ m[k + 1]
        cost = 0.5 * float(np.sum(w0 * c0 + w1 * c1))
    return reward, cost, float(hv[-1])


def action(problem: ControlProblem, traj: ControlledTrajectory,
           control: ControlField | None = None, horizon: float | None = None) -> ActionValue:
    """Truncated discounted action of a stored trajectory.

    ``control`` overrides the control used in the cost (the states are not
    recomputed). ``horizon`` defaults to ``problem.T``.

    Raises
    ------
    ValueError
        ``"horizon mismatch"`` if the trajectory does not span the horizon.
    """
    T = problem.T if horizon is None else float(horizon)
    if abs(traj.T - T) > 1e-9 * max(1.0, T) or abs(traj.times[0]) > 1e-12:
        raise ValueError(f"horizon mismatch: trajectory spans [{traj.times[0]}, {traj.T}], expected [0, {T}]")
    reward, cost, hT = _discounted(problem, traj, control)
    tail = math.exp(-T / problem.lam)
    a = reward - cost
    return ActionValue(a, tail * problem.h_sup, a + tail * hT, cost, reward,
                       control=traj.control if control is None else control,
                       final_state=traj.final)


def evaluate(problem: ControlProblem, mu0: GridMeasure, control: ControlField | None,
             horizon: float | None = None) -> ActionValue:
    """Run the controlled flow from ``mu0`` and return its action."""
    T = problem.T if horizon is None else float(horizon)
    traj = evolve(problem.spec, mu0, control, T, problem.dt, substep=True, track_speed=False)
    return action(problem, traj, horizon=T)


# --------------------------------------------------------------------------
# optimiser


def _compass(f: Callable[[np.ndarray], float], x0: np.ndarray, f0: float, step0: float,
             min_step: float, budget: int) -> tuple[np.ndarray, float, int, bool]:
    """Opportunistic compass search, strict improvement only.

    Coordinates are polled in flat (window-major) order, ``+step`` before
    ``-step``. Returns ``(x, f(x), evaluations, budget_exhausted)``.
    """
    x, fx = x0.copy(), f0
    n = 0
    step = step0
    flat = x.reshape(-1)
    while step >= min_step:
        improved = False
        for i in range(flat.size):
            for sgn in (1.0, -1.0):
                if n >= budget:
                    return x, fx, n, True
                y = x.copy()
                y.reshape(-1)[i] += sgn * step
                fy = f(y)
                n += 1
                if fy > fx:
                    x, fx, improved = y, fy, True
                    break
        if not improved:
            step *= 0.5
    return x, fx, n, False


def value_function(problem: ControlProblem, mu0: GridMeasure, budget: int = 200,
                   extra_starts: Sequence[np.ndarray] = ()) -> ActionValue:
    """Maximise ``Phi_hat`` over basis coefficients.

    Deterministic multi-start compass search. The first start is ``u = 0``
    (its value is the ``baseline``); further starts are the given
    ``extra_starts`` and ``n_starts - 1`` seeded random points. The result is
    never below the baseline. If the evaluation budget runs out the best
    point found is returned with ``budget_exhausted`` set.
    """
    shape = problem.coef_shape
    cache: dict[bytes, ActionValue] = {}

    def run(coef: np.ndarray) -> ActionValue:
        key = np.round(coef, 12).tobytes()
        if key not in cache:
            try:
                cache[key] = evaluate(problem, mu0, problem.control(coef))
            except ValueError as exc:
                logger.debug("control rejected: %s", exc)
                cache[key] = ActionValue(-math.inf, problem.tail_bound, -math.inf, math.inf, 0.0)
        return cache[key]

    zero = np.zeros(shape)
    base = run(zero)
    best_x, best = zero, base
    n_total = 1
    exhausted = False
    if shape[1] > 0 and budget > 1:
        starts = [zero] + [np.asarray(s, dtype=float).reshape(shape) for s in extra_starts]
        rng = np.random.default_rng(problem.seed)
        starts += [problem.step0 * rng.standard_normal(shape) for _ in range(problem.n_starts - 1)]
        share = [budget - 1] if len(starts) == 1 else \
            [(budget - 1) // 2] + [max((budget - 1) // (2 * (len(starts) - 1)), 1)] * (len(starts) - 1)
        for x0, b in zip(starts, share):
            f0 = run(x0).phi_estimate
            n_total += 0 if x0 is zero else 1
            x, fx, n, ex = _compass(lambda c: run(c).phi_estimate, x0, f0, problem.step0,
                                    problem.min_step, b)
            n_total += n
            exhausted = exhausted or ex
            if fx > best.phi_estimate or (fx == best.phi_estimate and tuple(x.ravel()) < tuple(best_x.ravel())):
                best_x, best = x, run(x)
    out = replace(best, coefficients=best_x, n_evals=n_total, budget_exhausted=exhausted,
                  baseline=base.phi_estimate)
    return out


# --------------------------------------------------------------------------
# audits


def value_bounds_audit(problem: ControlProblem, results: Sequence[ActionValue]) -> AuditReport:
    """``|phi| <= ||h|| + tail`` and ``phi >= baseline`` for every result."""
    parts = []
    for k, r in enumerate(results):
        bound = problem.h_sup + r.tail_bound
        parts.append(AuditReport(f"phi_bound[{k}]", abs(r.phi_estimate), bound,
                                 bound - abs(r.phi_estimate), 1e-12))
        if r.baseline is not None:
            parts.append(AuditReport(f"baseline[{k}]", r.baseline, r.phi_estimate,
                                     r.phi_estimate - r.baseline, 1e-12))
    return combine("value_bounds", parts)


def usc_surrogate_audit(problem: ControlProblem, mu: GridMeasure, t: float, budget: int = 200,
                        tol: float | None = None) -> AuditReport:
    """``Phi_hat(S_t mu) <= Phi_hat(mu) + 2 t ||h|| + tol``."""
    tol = problem.tol_visc if tol is None else tol
    St = evolve(problem.spec, mu, None, t, problem.dt, substep=True, track_speed=False).final
    a = value_function(problem, St, budget).phi_estimate
    b = value_function(problem, mu, budget).phi_estimate + 2.0 * t * problem.h_sup
    return AuditReport("usc_surrogate", a, b, b - a, tol, details={"t": t})


def dpp_residual(problem: ControlProblem, mu0: GridMeasure, T_mid: float, budget: int = 200,
                 tol: float | None = None, outer_budget: int = 0) -> AuditReport:
    """Compare the one-stage value with the two-stage split at ``T_mid``.

    One stage: ``Phi_hat(mu0)`` on ``[0, T]``. Two stages: the best of
    ``A_{T_mid}(u) + e^{-T_mid/lam} Phi_hat(mu_{T_mid})`` over first-stage
    controls ``u`` (zero, the one-stage optimiser restricted to
    ``[0, T_mid]``, plus an optional compass search with ``outer_budget``
    evaluations), where ``Phi_hat(mu_{T_mid})`` is re-optimised on a fresh
    horizon ``T`` and also compared with the continuation of the one-stage
    control. ``tol`` defaults to ``0.05 ||h|| + 2 tail``.
    """
    if not 0 < T_mid <= 0.5 * problem.T + 1e-12:
        raise ValueError("need 0 < T_mid <= T/2")
    lam = problem.lam
    one = value_function(problem, mu0, budget)

    def two_stage(u: ControlField, continuation: ControlField | None) -> tuple[float, dict]:
        tr = evolve(problem.spec, mu0, u, T_mid, problem.dt, substep=True, track_speed=False)
        first = action(problem, tr, horizon=T_mid)
        mid = tr.final
        inner = value_function(problem, mid, budget)
        best_inner = inner.phi_estimate
        if continuation is not None and not continuation.is_zero:
            best_inner = max(best_inner, evaluate(problem, mid, continuation).phi_estimate)
        # first.phi_estimate includes a frozen tail; use the bare action
        val = first.action + math.exp(-T_mid / lam) * best_inner
        return val, {"first_stage_action": first.action, "inner_phi": best_inner}

    cands = [("zero", ControlField.zero(), None)]
    if one.control is not None and not one.control.is_zero:
        cands.append(("restricted", one.control, one.control.shifted(T_mid)))
    rows = []
    for name, u, cont in cands:
        v, info = two_stage(u, cont)
        rows.append((v, name, info))
    if outer_budget > 0 and problem.basis.shape[0] > 0:
        shape = problem.coef_shape
        cache: dict[bytes, float] = {}

        def f(c: np.ndarray) -> float:
            k = np.round(c, 12).tobytes()
            if k not in cache:
                cache[k] = two_stage(problem.control(c, T_mid), None)[0]
            return cache[k]

        x, fx, _, _ = _compass(f, np.zeros(shape), f(np.zeros(shape)), problem.step0,
                               problem.min_step, outer_budget)
        rows.append((fx, "searched", {}))
    two, which, info = max(rows, key=lambda r: r[0])
    tail2 = math.exp(-(T_mid + problem.T) / lam) * problem.h_sup
    if tol is None:
        tol = 0.05 * problem.h_sup + one.tail_bound + tail2
    res = abs(one.phi_estimate - two)
    return AuditReport("dpp", one.phi_estimate, two, -res, float(tol),
                       details={"T_mid": T_mid, "residual": res, "two_stage_control": which,
                                "one_stage_budget_exhausted": one.budget_exhausted, **info})


def affine_push(mu: GridMeasure, shift: float = 0.0, scale: float = 1.0) -> GridMeasure:
    """Image of ``mu`` under ``x -> m + scale (x - m) + shift``, ``m`` the mean."""
    g = mu.grid
    m = mu.mean()
    t = m + scale * (g.centers - m) + shift
    return pushforward(mu, TransportMap(g, t, t - g.centers, mu, None))


def default_probes(center: GridMeasure, delta: float | None = None) -> list[GridMeasure]:
    """Translations and dilations of ``center`` by about ``delta``."""
    g = center.grid
    d = 8.0 * g.dx if delta is None else delta
    out = []
    for s in (-d, d):
        out.append(affine_push(center, shift=s))
    for k in (1.0 - 0.2, 1.0 + 0.2):
        out.append(affine_push(center, scale=k))
    return out


@dataclass
class _Probe:
    mu: GridMeasure
    origin: str
    value: ActionValue | None = None
    expanded: bool = False


def _relaxation_time(problem: ControlProblem) -> float:
    """About ``0.1 lam``, at least two steps."""
    return max(2, int(round(0.1 * problem.lam / problem.dt))) * problem.dt


def subsolution_residual(problem: ControlProblem, tf: TestFunctionDagger, budget: int = 200,
                         probes: Sequence[GridMeasure] | None = None, rounds: int = 3,
                         t_relax: float | None = None, tol: float | None = None) -> AuditReport:
    """Viscosity subsolution audit ``Phi_hat - lam g_dag - h <= tol`` at the
    maximiser of ``Phi_hat - f_dag`` over a probe family.

    The family holds the test-function centre and anchors, the given
    ``probes``, translations/dilations of the centre, and, added over
    ``rounds`` passes, endpoints of short near-optimally controlled and
    uncontrolled runs started at the current maximiser.

    Raises
    ------
    ValueError
        If the probe family is empty.
    """
    fam = [_Probe(tf.rho, "center")] + [_Probe(m, f"anchor{i}") for i, m in enumerate(tf.anchors)]
    fam += [_Probe(m, f"seed{i}") for i, m in enumerate(probes or [])]
    fam += [_Probe(m, f"perturb{i}") for i, m in enumerate(default_probes(tf.rho))]
    if not fam:
        raise ValueError("probe family is empty")
    tr = _relaxation_time(problem) if t_relax is None else t_relax
    best = _search_probes(problem, fam, lambda m: -f_dagger(tf, m), budget, rounds, tr, None, maximize=True)
    pi = best.mu
    phi = best.value.phi_estimate
    gE, gW, g = g_dagger(tf, pi, problem.spec)
    h = problem.reward(pi)
    r = phi - problem.lam * g - h
    tol = problem.tol_visc if tol is None else tol
    return AuditReport("subsolution", phi - problem.lam * g, h, -r, float(tol),
                       details={"residual": r, "phi_hat": phi, "g_E": gE, "g_W2": gW, "h": h,
                                "argmax": best.origin, "n_probes": len(fam), "note": PHI_STAR_NOTE,
                                "budget_exhausted": best.value.budget_exhausted})


def _search_probes(problem: ControlProblem, fam: list, fscore: Callable[[GridMeasure], float],
                   budget: int, rounds: int, t_relax: float, young: Callable | None,
                   maximize: bool) -> _Probe:
    """Evaluate ``Phi_hat`` on the family and refine around the optimiser.

    The score ``Phi_hat + fscore`` is maximised (``maximize``) or minimised.
    In each round the current optimiser is relaxed for ``t_relax`` along the
    uncontrolled flow, its own optimal control and (if given) ``young(mu)``;
    the endpoints join the family. The optimiser's ``Phi_hat`` is raised to
    ``A_t(u) + e^{-t/lam} Phi_hat(endpoint)`` when that is larger, since the
    concatenated control is admissible. Ties go to the earlier probe.
    """
    sign = 1.0 if maximize else -1.0
    memo: dict[bytes, ActionValue] = {}

    def value(p: _Probe) -> ActionValue:
        key = p.mu.density.tobytes()
        if key not in memo:
            memo[key] = value_function(problem, p.mu, budget)
        p.value = memo[key]
        return p.value

    def score(p: _Probe) -> float:
        return sign * (value(p).phi_estimate + fscore(p.mu))

    disc = math.exp(-t_relax / problem.lam)
    best = None
    for rnd in range(rounds + 1):
        best = max(fam, key=score)  # max keeps the first of equal scores
        if best.expanded or rnd == rounds:
            break
        best.expanded = True
        ctrls = [("flow", None)]
        if best.value.control is not None and not best.value.control.is_zero:
            ctrls.append(("opt", best.value.control))
        if young is not None:
            u = young(best.mu)
            if u is not None and not u.is_zero:
                ctrls.append(("young", u))
        for name, u in ctrls:
            tr = evolve(problem.spec, best.mu, u, t_relax, problem.dt, substep=True, track_speed=False)
            child = _Probe(tr.final, f"{best.origin}>{name}")
            fam.append(child)
            lifted = action(problem, tr, horizon=t_relax).action + disc * value(child).phi_estimate
            if lifted > value(best).phi_estimate:
                best.value = replace(best.value, phi_estimate=lifted, lifted=True)
                memo[best.mu.density.tobytes()] = best.value
    return best


def young_projection(problem: ControlProblem, tf: TestFunctionDdagger,
                     mu: GridMeasure) -> tuple[np.ndarray, np.ndarray, float]:
    """Least-squares fit of basis gradients to the Young field in ``L^2(mu)``.

    Returns ``(coefficients, fitted gradient at centres, relative residual)``.
    The Young field is ``a b^gamma + grad phi . b^pi`` (barycentric maps at
    ``mu``).
    """
    Y = young_field(tf, mu)
    g = mu.grid
    if problem.basis.shape[0] == 0:
        return np.zeros(0), np.zeros(g.n_cells), 1.0
    G = np.array([np.gradient(p, g.dx) for p in problem.basis])
    w = np.sqrt(mu.masses)
    A = (G * w).T
    c, *_ = np.linalg.lstsq(A, Y * w, rcond=None)
    fit = c @ G
    den = math.sqrt(float(np.sum(Y * Y * mu.masses)))
    rel = math.sqrt(float(np.sum((fit - Y) ** 2 * mu.masses))) / den if den > 0 else 0.0
    return c, fit, rel


def supersolution_residual(problem: ControlProblem, tf: TestFunctionDdagger, budget: int = 200,
                           probes: Sequence[GridMeasure] | None = None, rounds: int = 3,
                           t_smooth: float | None = None, t_relax: float | None = None,
                           tol: float | None = None) -> AuditReport:
    """Viscosity supersolution audit at the minimiser of ``Phi_hat - f_ddag``.

    The family holds the raw seeds (centre, anchors, given ``probes`` and
    perturbations of the centre) and their images under a short gradient
    flow of length ``t_smooth``. At the minimiser ``mu_hat`` the sub-audits
    are

    ``corduroy_init[psi]``
        ``Phi_hat - h - lam (g_E + <grad psi, Y> - 1/2 ||grad psi||^2) >= -tol``
        for ``psi = 0``, the Young-optimal projection ``psi*`` and every basis
        element;
    ``young_full``
        the same with ``grad psi = Y`` (the ``L^2`` limit of the projections);
    ``cauchy_schwarz``
        ``1/2 ||Y||^2 >= g_W2`` (both sides computed independently);
    ``supersolution``
        ``r = Phi_hat - lam g_ddag - h >= -tol``.

    Raises
    ------
    ValueError
        If the probe family is empty, or the transport map fails at ``mu_hat``.
    """
    raw = [_Probe(tf.gamma, "center")] + [_Probe(m, f"anchor{i}") for i, m in enumerate(tf.anchors)]
    raw += [_Probe(m, f"seed{i}") for i, m in enumerate(probes or [])]
    raw += [_Probe(m, f"perturb{i}") for i, m in enumerate(default_probes(tf.gamma))]
    if not raw:
        raise ValueError("probe family is empty")
    ts = _relaxation_time(problem) if t_smooth is None else t_smooth
    tr = _relaxation_time(problem) if t_relax is None else t_relax
    smooth = [_Probe(evolve(problem.spec, p.mu, None, ts, problem.dt, substep=True, track_speed=False).final,
                     p.origin + ">smooth") for p in raw]
    fam = raw + smooth

    def young_ctrl(mu: GridMeasure) -> ControlField | None:
        c, _, _ = young_projection(problem, tf, mu)
        if c.size == 0:
            return None
        coef = np.zeros(problem.coef_shape)
        coef[:] = c
        return problem.control(coef)

    best = _search_probes(problem, fam, lambda m: -f_ddagger(tf, m), budget, rounds, tr, young_ctrl,
                          maximize=False)
    mu = best.mu
    phi = best.value.phi_estimate
    lam = problem.lam
    tol = problem.tol_visc if tol is None else tol
    try:
        Y = young_field(tf, mu)
    except Exception as exc:  # pragma: no cover
        raise ValueError(f"transport map failure at the minimiser: {exc}") from exc
    gE, gW, g = g_ddagger(tf, mu, problem.spec)
    h = problem.reward(mu)
    m = mu.masses
    base = phi - h - lam * gE

    def cord(name: str, grad: np.ndarray) -> AuditReport:
        pair = float(np.sum(grad * Y * m)) - 0.5 * float(np.sum(grad * grad * m))
        val = base - lam * pair
        return AuditReport(name, val, 0.0, val, float(tol), details={"young_term": pair})

    c, fit, rel = young_projection(problem, tf, mu)
    parts = [cord("corduroy_init[0]", np.zeros_like(Y)), cord("corduroy_init[psi*]", fit)]
    for nm, p in zip(problem.basis_names, problem.basis):
        parts.append(cord(f"corduroy_init[{nm}]", np.gradient(p, mu.grid.dx)))
    half_y2 = 0.5 * young_norm_sq(tf, mu)
    v5 = base - lam * half_y2
    parts.append(AuditReport("young_full", v5, 0.0, v5, float(tol)))
    parts.append(AuditReport("cauchy_schwarz", gW, half_y2, half_y2 - gW,
                             1e-9 * max(1.0, abs(half_y2))))
    r = phi - lam * g - h
    parts.append(AuditReport("supersolution", r, 0.0, r, float(tol)))
    rep = combine("supersolution", parts,
                  {"residual": r, "phi_hat": phi, "g_E": gE, "g_W2": gW, "h": h, "argmin": best.origin,
                   "n_probes": len(fam), "projection_rel_residual": rel, "psi_star_coefficients": c,
                   "note": PHI_STAR_NOTE, "budget_exhausted": best.value.budget_exhausted})
    # headline numbers are those of the target inequality
    rep.lhs, rep.rhs, rep.slack, rep.tol = r, 0.0, r, float(tol)
    return rep
