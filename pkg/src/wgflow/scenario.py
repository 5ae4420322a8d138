"""Scenario configs: parsing, validation and audit dispatch.

A scenario is a TOML file with sections ``[grid]``, ``[energy]``,
``[measures.<name>]``, optional ``[reward]``, ``[problem]`` and
``[test_functions.<name>]``, and an ordered ``[[audits]]`` array. See the
bundled files in ``wgflow/scenarios`` for complete examples.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from . import evi, flow, value
from .audit import AuditReport, _clean
from .energy import EnergySpec, InternalEnergy, Interaction, Potential, calibrate_lower_bound, flow_energy
from .hamiltonians import CylindricalPhi, TestFunctionDagger, TestFunctionDdagger
from .ot_core import Grid, GridMeasure, w2

logger = logging.getLogger(__name__)

BUNDLED = Path(__file__).parent / "scenarios"

AUDIT_GROUPS = {
    "flow": {"flow", "controlled_evi", "lemma35"},
    "evi": {"evi", "contraction", "monotonicity", "asymptotics"},
    "value": {"value", "usc"},
    "dpp": {"dpp"},
    "subsol": {"subsol"},
    "supersol": {"supersol"},
}
AUDIT_KINDS = set().union(*AUDIT_GROUPS.values())


class ConfigError(ValueError):
    """Malformed or inconsistent scenario (CLI exit code 2)."""


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON form; stable under key reordering."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def resolve_path(name: str | Path) -> Path:
    """A file path, or the stem of a bundled scenario."""
    p = Path(name)
    if p.exists():
        return p
    b = BUNDLED / f"{name}.toml"
    if b.exists():
        return b
    raise FileNotFoundError(f"no such config or bundled scenario: {name}")


def bundled_names() -> list[str]:
    return sorted(p.stem for p in BUNDLED.glob("*.toml"))


def load_config(path: str | Path) -> dict:
    """Parse TOML; syntax errors become :class:`ConfigError` with line/column."""
    text = Path(path).read_bytes().decode("utf-8")
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# builders


def _req(d: dict, key: str, where: str) -> Any:
    if key not in d:
        raise ConfigError(f"missing key {key!r} in {where}")
    return d[key]


def build_grid(d: dict) -> Grid:
    return Grid(float(_req(d, "x_min", "[grid]")), float(_req(d, "x_max", "[grid]")),
                int(_req(d, "n_cells", "[grid]")))


def build_energy(d: dict) -> EnergySpec:
    kind = d.get("internal", "boltzmann")
    if kind == "boltzmann":
        U = InternalEnergy.boltzmann()
    elif kind == "renyi":
        U = InternalEnergy.renyi(float(_req(d, "alpha", "[energy]")))
    elif kind == "none":
        U = InternalEnergy.zero()
    else:
        raise ConfigError(f"unknown internal energy {kind!r}")
    pk = d.get("potential", "zero")
    if pk == "zero":
        V = Potential.zero()
    elif pk == "quadratic":
        V = Potential.quadratic(float(d.get("potential_kappa", 1.0)), float(d.get("potential_center", 0.0)))
    elif pk == "cosine":
        V = Potential.cosine(float(d.get("potential_amplitude", 1.0)), float(d.get("potential_wavenumber", 1.0)))
    else:
        raise ConfigError(f"unknown potential {pk!r}")
    ik = d.get("interaction", "zero")
    if ik == "zero":
        W = Interaction.zero()
    elif ik == "quadratic":
        W = Interaction.quadratic(float(d.get("interaction_c", 1.0)))
    else:
        raise ConfigError(f"unknown interaction {ik!r}")
    return EnergySpec(U, V, W)


def build_measure(grid: Grid, d: dict, base: Path, where: str) -> GridMeasure:
    fam = _req(d, "family", where)
    if fam == "gaussian":
        return GridMeasure.gaussian(grid, float(d.get("mean", 0.0)), float(d.get("std", 1.0)))
    if fam == "uniform":
        return GridMeasure.uniform(grid, d.get("a"), d.get("b"))
    if fam == "barenblatt":
        return GridMeasure.barenblatt(grid, float(d.get("center", 0.0)), float(d.get("radius", 1.0)))
    if fam == "point_mass":
        return GridMeasure.point_mass(grid, float(_req(d, "x", where)))
    if fam == "csv":
        p = Path(_req(d, "path", where))
        return GridMeasure.from_csv(p if p.is_absolute() else base / p, grid)
    raise ConfigError(f"unknown measure family {fam!r} in {where}")


def build_reward(d: dict, measures: dict) -> value.Reward:
    kind = _req(d, "kind", "[reward]")
    if kind == "constant":
        return value.Reward.constant(float(_req(d, "c", "[reward]")))
    if kind == "mean_cosine":
        return value.Reward.mean_cosine(float(d.get("amplitude", 1.0)), float(d.get("wavenumber", 1.0)))
    if kind == "target_distance":
        t = _req(d, "target", "[reward]")
        if t not in measures:
            raise ConfigError(f"reward target {t!r} is not a declared measure")
        return value.Reward.target_distance(measures[t], float(d.get("p", 1.0)))
    raise ConfigError(f"unknown reward kind {kind!r}")


def build_test_function(d: dict, measures: dict, where: str):
    kind = _req(d, "kind", where)
    a = float(d.get("a", 1.0))
    anchors = d.get("anchors", [])
    coeffs = d.get("coeffs", [1.0] * len(anchors))
    pk = d.get("phi", "linear")
    for n in [_req(d, "center", where)] + list(anchors):
        if n not in measures:
            raise ConfigError(f"{where}: unknown measure {n!r}")
    if pk == "linear":
        phi = CylindricalPhi.linear(coeffs)
    elif pk == "log_saturating":
        phi = CylindricalPhi.log_saturating(coeffs)
    else:
        raise ConfigError(f"{where}: unknown phi {pk!r}")
    center = measures[d["center"]]
    anc = [measures[n] for n in anchors]
    if kind == "dagger":
        return TestFunctionDagger(a, phi, center, anc)
    if kind == "ddagger":
        return TestFunctionDdagger(a, phi, center, anc)
    raise ConfigError(f"{where}: unknown test function kind {kind!r}")


@dataclass
class Scenario:
    """Fully resolved scenario."""

    name: str
    grid: Grid
    spec: EnergySpec
    measures: dict
    reward: value.Reward | None
    problem: value.ControlProblem | None
    problem_cfg: dict
    test_functions: dict
    audits: list
    seed: int
    raw: dict
    hash: str
    source: Path | None = None
    defaults: dict = field(default_factory=dict)


def build_scenario(cfg: dict, base: Path = Path("."), seed: int | None = None,
                   source: Path | None = None) -> Scenario:
    """Resolve every name and build all objects; raises :class:`ConfigError`."""
    try:
        grid = build_grid(_req(cfg, "grid", "config"))
        spec = build_energy(cfg.get("energy", {}))
        measures = {n: build_measure(grid, d, base, f"[measures.{n}]")
                    for n, d in cfg.get("measures", {}).items()}
        reward = build_reward(cfg["reward"], measures) if "reward" in cfg else None
        pc = dict(cfg.get("problem", {}))
        sd = int(cfg.get("seed", 0) if seed is None else seed)
        problem = None
        if reward is not None:
            kw = {k: pc[k] for k in ("lam", "T", "dt", "n_windows", "window_ratio", "step0",
                                      "min_step", "n_starts") if k in pc}
            if pc.get("basis") == "none":
                kw["basis"] = np.zeros((0, grid.n_cells))
            problem = value.ControlProblem(spec, grid, reward, seed=sd, **kw)
        tfs = {n: build_test_function(d, measures, f"[test_functions.{n}]")
               for n, d in cfg.get("test_functions", {}).items()}
        audits = list(cfg.get("audits", []))
        for i, a in enumerate(audits):
            kind = a.get("kind")
            if kind not in AUDIT_KINDS:
                raise ConfigError(f"audit #{i}: unknown kind {kind!r}")
            for key in ("mu", "nu", "rho", "mu0"):
                if key in a and a[key] not in measures:
                    raise ConfigError(f"audit #{i}: unknown measure {a[key]!r}")
            for key in ("tf",):
                if key in a and a[key] not in tfs:
                    raise ConfigError(f"audit #{i}: unknown test function {a[key]!r}")
            if kind in ("value", "usc", "dpp", "subsol", "supersol") and problem is None:
                raise ConfigError(f"audit #{i}: {kind} needs a [reward] section")
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError, FileNotFoundError) as exc:
        raise ConfigError(str(exc)) from exc
    return Scenario(str(cfg.get("name", source.stem if source else "scenario")), grid, spec, measures,
                    reward, problem, pc, tfs, audits, sd, cfg, config_hash(cfg), source)


def load_scenario(path: str | Path, seed: int | None = None) -> Scenario:
    p = resolve_path(path)
    return build_scenario(load_config(p), p.parent, seed, p)


# --------------------------------------------------------------------------
# controls used by trajectory audits


def make_control(sc: Scenario, kind: str, T: float, tf=None, mu0: GridMeasure | None = None,
                 scale: float = 0.5, n_windows: int = 3, salt: int = 0) -> flow.ControlField:
    """``zero``, ``random`` (seeded basis coefficients) or ``adversarial``.

    The adversarial control is the basis projection of the Young field of
    ``tf`` at ``mu0`` scaled to unit size times ``scale``; it makes the
    control pairing in the controlled EVI as large as possible.
    """
    g = sc.grid
    edges = flow.geometric_windows(T, n_windows)
    names, B = flow.default_basis(g)
    if kind == "zero":
        return flow.ControlField.zero()
    if kind == "random":
        rng = np.random.default_rng([sc.seed, salt])
        return flow.ControlField.from_basis(g, scale * rng.standard_normal((n_windows, B.shape[0])), edges, B, names)
    if kind == "adversarial":
        if tf is None or mu0 is None:
            raise ConfigError("adversarial control needs a test function and mu0")
        from .hamiltonians import young_field

        Y = young_field(tf, mu0)
        G = np.array([np.gradient(p, g.dx) for p in B])
        w = np.sqrt(mu0.masses)
        c, *_ = np.linalg.lstsq((G * w).T, Y * w, rcond=None)
        nrm = math.sqrt(float(np.sum((c @ G) ** 2 * mu0.masses)))
        c = c * (scale * 4.0 / nrm if nrm > 0 else 0.0)
        return flow.ControlField.from_basis(g, np.tile(c, (n_windows, 1)), edges, B, names)
    raise ConfigError(f"unknown control kind {kind!r}")


# --------------------------------------------------------------------------
# dispatch


def _series_csv(path: Path, series: dict) -> None:
    keys = [k for k, v in series.items() if np.ndim(v) == 1]
    if not keys:
        return
    n = max(len(series[k]) for k in keys)
    cols = [np.asarray(series[k], dtype=float) for k in keys]
    rows = np.full((n, len(cols)), np.nan)
    for j, c in enumerate(cols):
        rows[: len(c), j] = c
    np.savetxt(path, rows, delimiter=",", header=",".join(keys), comments="", fmt="%.17g")


def run_audit(sc: Scenario, a: dict, tol_scale: float = 1.0) -> AuditReport:
    """Run a single audit entry; returns its report."""
    kind = a["kind"]
    M = sc.measures
    spec = sc.spec
    dt = float(a.get("dt", 0.01))
    T = float(a.get("T", 1.0))
    substep = bool(a.get("substep", True))

    def scaled(default: float) -> float:
        return tol_scale * float(a.get("tol", default))

    if kind == "flow":
        tr = flow.evolve(spec, M[a["mu0"]], None, T, dt, substep=substep, track_speed=False)
        F = np.array([flow_energy(spec, m) for m in tr.states])
        inc = float(np.max(np.diff(F))) if len(F) > 1 else 0.0
        mass = float(np.max(tr.diagnostics["mass_defect"])) if len(F) > 1 else 0.0
        rep = AuditReport("flow", inc, 0.0, -inc, scaled(1e-6),
                          details={"max_mass_defect": mass,
                                   "series": {"t": tr.times, "energy": F,
                                              "mean": [m.mean() for m in tr.states],
                                              "variance": [m.variance() for m in tr.states]}})
        return rep
    if kind == "evi":
        tr = flow.evolve(spec, M[a["mu"]], None, T, dt, substep=substep, track_speed=False)
        if a.get("reversed", False):
            tr = tr.reversed()
        c = tol_scale * float(a.get("c_tol", 10.0))
        return evi.evi_pointwise(spec, tr, M[a["nu"]], tol=scaled(a["tol"]) if "tol" in a else None, c_tol=c)
    if kind == "contraction":
        tol = scaled(a.get("tol", 0.0))
        return evi.contraction_audit(spec, M[a["mu"]], M[a["nu"]], T, dt, tol=tol,
                                     rel_tol=float(a.get("rel_tol", 0.0)), kappa=a.get("kappa"),
                                     substep=substep)
    if kind == "monotonicity":
        return evi.monotonicity_audit(spec, M[a["mu"]], T, dt, tol=scaled(1e-6), substep=substep)
    if kind == "asymptotics":
        return evi.asymptotic_expansion_audit(spec, M[a["mu"]], M[a["nu"]], a.get("t_list", [0.01, 0.05, 0.1]),
                                              a.get("dt"), tol=scaled(5e-3), substep=substep)
    if kind in ("controlled_evi", "lemma35"):
        tf = sc.test_functions.get(a.get("tf")) if "tf" in a else None
        mu0 = M[a["mu0"]]
        u = make_control(sc, a.get("control", "zero"), T, tf, mu0, float(a.get("scale", 0.5)),
                         salt=int(a.get("salt", 0)))
        tr = flow.evolve(spec, mu0, u, T, dt, substep=substep)
        if a.get("reversed", False):
            tr = tr.reversed()
        if kind == "controlled_evi":
            c = tol_scale * float(a.get("c_tol", 10.0))
            return flow.controlled_evi_residual(spec, tr, tf, c_tol=c)
        rho = M[a["rho"]]
        qlb = calibrate_lower_bound(spec, rho)
        alpha = float(a.get("alpha", 3.0 * (spec.kappa - 1.0)))
        return flow.lemma35_bounds(spec, tr, rho, qlb, alpha, tol=scaled(2e-2))
    p = sc.problem
    budget = int(a.get("budget", sc.problem_cfg.get("budget", 100)))
    if kind == "value":
        names = a.get("mu0s", [a["mu0"]] if "mu0" in a else list(M))
        res = [value.value_function(p, M[n], budget) for n in names]
        rep = value.value_bounds_audit(p, res)
        rep.details["values"] = {n: r.to_dict() for n, r in zip(names, res)}
        return rep
    if kind == "usc":
        return value.usc_surrogate_audit(p, M[a["mu0"]], float(a.get("t", 0.1)), budget,
                                         tol=scaled(p.tol_visc))
    if kind == "dpp":
        T_mid = float(a.get("T_mid", p.T / 4))
        tol = scaled(a["tol"]) if "tol" in a else \
            tol_scale * (0.05 * p.h_sup + p.tail_bound + math.exp(-(T_mid + p.T) / p.lam) * p.h_sup)
        return value.dpp_residual(p, M[a["mu0"]], T_mid, budget, tol=tol,
                                  outer_budget=int(a.get("outer_budget", 0)))
    if kind in ("subsol", "supersol"):
        tf = sc.test_functions[a["tf"]]
        probes = [M[n] for n in a.get("probes", [])]
        fn = value.subsolution_residual if kind == "subsol" else value.supersolution_residual
        want = TestFunctionDagger if kind == "subsol" else TestFunctionDdagger
        if not isinstance(tf, want):
            raise ConfigError(f"{kind} needs a {'dagger' if kind == 'subsol' else 'ddagger'} test function")
        return fn(p, tf, budget, probes=probes, rounds=int(a.get("rounds", 3)), tol=scaled(p.tol_visc))
    raise ConfigError(f"unknown audit kind {kind!r}")  # pragma: no cover


def audit_label(a: dict, i: int) -> str:
    return str(a.get("name", f"{i:02d}_{a['kind']}"))


def run_scenario(sc: Scenario, out: Path | None, tol_scale: float = 1.0, parallel: int = 1,
                 only: set | None = None) -> dict:
    """Run audits in declared order and write per-audit JSON/CSV plus a summary.

    Returns the summary dict. Raises the first audit exception (after all
    audits have been attempted) wrapped as ``RuntimeError``.
    """
    todo = [(i, a) for i, a in enumerate(sc.audits) if only is None or a["kind"] in only]

    def job(item):
        i, a = item
        t0 = time.perf_counter()
        try:
            rep = run_audit(sc, a, tol_scale)
        except Exception as exc:  # reported as an audit error
            logger.exception("audit %s failed with an error", audit_label(a, i))
            return i, a, None, exc
        rep.config_hash = sc.hash
        rep.runtime_s = time.perf_counter() - t0
        return i, a, rep, None

    if parallel > 1 and len(todo) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallel) as ex:
            results = list(ex.map(job, todo))
    else:
        results = [job(t) for t in todo]
    results.sort(key=lambda r: r[0])

    rows = []
    errors = []
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for i, a, rep, exc in results:
        label = audit_label(a, i)
        if exc is not None:
            errors.append((label, exc))
            rows.append({"audit": label, "kind": a["kind"], "verdict": "ERROR", "error": str(exc)})
            continue
        row = {"audit": label, "kind": a["kind"], "verdict": rep.verdict, "lhs": rep.lhs,
               "rhs": rep.rhs, "slack": rep.slack, "tol": rep.tol}
        if "expect" in a:
            row["expect"] = a["expect"]
        rows.append(row)
        if out is not None:
            d = rep.to_dict(include_runtime=True)
            series = d.get("details", {}).pop("series", None) if "details" in d else None
            (out / f"{label}.json").write_text(json.dumps(d, sort_keys=True, indent=2) + "\n")
            if series:
                _series_csv(out / f"{label}.csv", series)
    ok = all(r["verdict"] in ("PASS", "N/A") or r.get("expect") == r["verdict"] for r in rows)
    summary = _clean({"scenario": sc.name, "config_hash": sc.hash, "seed": sc.seed, "tol_scale": tol_scale,
                      "audits": rows, "all_pass": ok and not errors})
    if out is not None:
        (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    if errors:
        label, exc = errors[0]
        raise RuntimeError(f"audit {label} raised: {exc}") from exc
    return summary


def format_table(summary: dict) -> str:
    lines = [f"scenario {summary['scenario']}  hash {summary['config_hash'][:12]}"]
    for r in summary["audits"]:
        if r["verdict"] == "ERROR":
            lines.append(f"  {r['audit']:<32} ERROR  {r['error']}")
            continue
        exp = f"  (expected {r['expect']})" if "expect" in r else ""
        lines.append(f"  {r['audit']:<32} {r['verdict']:<5} slack={r['slack']:+.3e} tol={r['tol']:.3e}{exp}")
    return "\n".join(lines)
