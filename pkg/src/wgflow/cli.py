"""Command-line entry point ``wgflow``.

Exit codes: 0 all audits pass, 1 some audit fails, 2 config error,
3 an audit raised.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import energy as _energy
from . import flow as _flow
from . import ot_core as _ot
from . import scenario as _sc

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ERROR = 0, 1, 2, 3

DEFAULT_CONFIG = {
    "flow": "heat_smoke",
    "evi": "ou",
    "value": "value_heat",
    "dpp": "value_heat",
    "subsol": "value_heat",
    "supersol": "value_heat",
}


# --------------------------------------------------------------------------
# selftest


def _oracle_pairs(n_pairs: int = 200, seed: int = 1234):
    """Fixed suite of pairs of measures with at most four atoms."""
    rng = np.random.default_rng(seed)
    for _ in range(n_pairs):
        k1, k2 = rng.integers(1, 5, size=2)
        x = np.sort(rng.uniform(-3, 3, k1))
        y = np.sort(rng.uniform(-3, 3, k2))
        a = rng.dirichlet(np.ones(k1))
        b = rng.dirichlet(np.ones(k2))
        yield x, a, y, b


def check_lp_oracle(n_pairs: int = 200, tol: float = 1e-9) -> tuple[bool, str]:
    t0 = time.perf_counter()
    worst = 0.0
    for x, a, y, b in _oracle_pairs(n_pairs):
        qa = _ot.QuantileFn.from_atoms(x, a)
        qb = _ot.QuantileFn.from_atoms(y, b)
        w_q = _ot.wasserstein_p(qa, qb, 2)
        w_lp = _ot.wasserstein_lp(x, a, y, b, 2)
        worst = max(worst, abs(w_q - w_lp))
    dt = time.perf_counter() - t0
    return worst < tol, f"max |W2_quantile - W2_LP| = {worst:.2e} over {n_pairs} pairs in {dt:.2f} s"


def check_pressure(tol: float = 1e-12) -> tuple[bool, str]:
    r = np.linspace(0.01, 5.0, 50)
    b = _energy.InternalEnergy.boltzmann()
    e1 = float(np.max(np.abs(_energy.pressure(b, r) - r)))
    rn = _energy.InternalEnergy.renyi(2.0)
    e2 = float(np.max(np.abs(_energy.pressure(rn, r) - r ** 2)))
    rn3 = _energy.InternalEnergy.renyi(1.5)
    e3 = float(np.max(np.abs(_energy.pressure(rn3, r) - r ** 1.5)))
    err = max(e1, e2, e3)
    return err < tol * 10, f"pressure identities max error {err:.1e}"


def check_gaussians(tol: float = 1e-6) -> tuple[bool, str]:
    g = _ot.Grid(-10.0, 10.0, 2048)
    a = _ot.GridMeasure.gaussian(g, -0.5, 0.7)
    b = _ot.GridMeasure.gaussian(g, 1.0, 1.2)
    exact = math.sqrt(1.5 ** 2 + 0.5 ** 2)
    err = abs(_ot.w2(a, b) - exact)
    return err < 1e-3, f"Gaussian W2 closed form error {err:.1e}"


def check_heat_variance(rel: float = 0.01) -> tuple[bool, str]:
    g = _ot.Grid(-6.0, 6.0, 512)
    s0 = 0.5
    mu = _ot.GridMeasure.gaussian(g, 0.0, s0)
    tr = _flow.evolve(_energy.EnergySpec(), mu, None, 0.5, 0.005, track_speed=False)
    worst = 0.0
    for t, m in zip(tr.times, tr.states):
        exact = s0 ** 2 + t
        worst = max(worst, abs(m.variance() - exact) / exact)
    return worst < rel, f"heat variance max relative error {worst:.1e}"


SELFTEST_CHECKS = [
    ("lp_oracle", check_lp_oracle),
    ("pressure", check_pressure),
    ("gaussian_w2", check_gaussians),
    ("heat_variance", check_heat_variance),
]


def selftest(verbose: bool = True) -> int:
    ok_all = True
    for name, fn in SELFTEST_CHECKS:
        try:
            ok, msg = fn()
        except Exception as exc:  # a broken routine is a failed check
            ok, msg = False, f"raised {type(exc).__name__}: {exc}"
        ok_all = ok_all and ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {msg}")
    return EXIT_OK if ok_all else EXIT_FAIL


# --------------------------------------------------------------------------
# run


def run_config(config: str, out: str | None, seed: int | None, tol_scale: float, parallel: int,
               only: set | None = None, quiet: bool = False) -> int:
    try:
        sc = _sc.load_scenario(config, seed)
    except (_sc.ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(out) if out else Path("wgflow_out") / sc.name
    try:
        summary = _sc.run_scenario(sc, out_dir, tol_scale, parallel, only)
    except _sc.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"audit error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not quiet:
        print(_sc.format_table(summary))
        print(f"summary written to {out_dir / 'summary.json'}")
    return EXIT_OK if summary["all_pass"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wgflow", description="Controlled Wasserstein gradient flow audits.")
    p.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--parallel", type=int, default=1, help="run independent audits concurrently")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run every audit of a scenario")
    r.add_argument("config", help="TOML file or bundled scenario name")
    sub.add_parser("selftest", help="oracle and analytic checks")
    sub.add_parser("list", help="list bundled scenarios")
    for name in _sc.AUDIT_GROUPS:
        s = sub.add_parser(name, help=f"run only the {name} audits of a scenario")
        s.add_argument("config", nargs="?", default=DEFAULT_CONFIG[name])
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.tol_scale <= 0 or args.parallel < 1:
        print("config error: --tol-scale must be positive and --parallel >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.cmd == "selftest":
        return selftest()
    if args.cmd == "list":
        print("\n".join(_sc.bundled_names()))
        return EXIT_OK
    only = None if args.cmd == "run" else _sc.AUDIT_GROUPS[args.cmd]
    return run_config(args.config, args.out, args.seed, args.tol_scale, args.parallel, only)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
