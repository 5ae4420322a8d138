from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from wgflow import cli
from wgflow import ot_core as O
from wgflow import scenario as S

HEAT_SMOKE = S.BUNDLED / "heat_smoke.toml"


def test_selftest_passes(capsys):
    assert cli.main(["selftest"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == len(cli.SELFTEST_CHECKS)


def test_selftest_catches_corrupted_quantiles(monkeypatch):
    real = O._piece_ends

    def corrupted(qf, s0, s1):
        a0, a1 = real(qf, s0, s1)
        return a0, a1 + 1e-3 * np.sign(a1)

    monkeypatch.setattr(O, "_piece_ends", corrupted)
    assert cli.selftest(verbose=False) != cli.EXIT_OK


def test_list(capsys):
    assert cli.main(["list"]) == cli.EXIT_OK
    names = capsys.readouterr().out.split()
    assert "heat_smoke" in names and names == sorted(names)


def test_syntax_error_exit_two_no_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('name = "x"\n[grid\nx_min = 0\n')
    out = tmp_path / "out"
    assert cli.main(["--out", str(out), "run", str(bad)]) == cli.EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize("old,new", [('kind = "flow"', 'kind = "nope"'),
                                     ('mu0 = "narrow"', 'mu0 = "missing"'),
                                     ('n_cells = 256', 'n_cells = -3')])
def test_inconsistent_config_exit_two_no_outputs(tmp_path, old, new):
    text = HEAT_SMOKE.read_text()
    assert old in text
    bad = tmp_path / "bad.toml"
    bad.write_text(text.replace(old, new, 1))
    out = tmp_path / "out"
    assert cli.main(["--out", str(out), "run", str(bad)]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_missing_file_exit_two(tmp_path):
    assert cli.main(["--out", str(tmp_path / "o"), "run", str(tmp_path / "none.toml")]) == cli.EXIT_CONFIG


def test_bad_flags_exit_two():
    assert cli.main(["--tol-scale", "0", "selftest"]) == cli.EXIT_CONFIG
    assert cli.main(["--parallel", "0", "selftest"]) == cli.EXIT_CONFIG


def test_empty_audit_list(tmp_path):
    cfg = tmp_path / "empty.toml"
    cfg.write_text('name = "empty"\nseed = 0\n[grid]\nx_min = -1.0\nx_max = 1.0\nn_cells = 8\n'
                   '[energy]\ninternal = "boltzmann"\n')
    out = tmp_path / "out"
    assert cli.main(["--out", str(out), "run", str(cfg)]) == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["audits"] == [] and summary["all_pass"]


def test_config_hash_stable_under_reordering():
    a = {"name": "x", "grid": {"x_min": 0, "x_max": 1, "n_cells": 4}, "seed": 1}
    b = {"seed": 1, "grid": {"n_cells": 4, "x_max": 1, "x_min": 0}, "name": "x"}
    assert S.config_hash(a) == S.config_hash(b)
    assert S.config_hash(a) != S.config_hash({**a, "seed": 2})


def test_hash_ignores_toml_key_order(tmp_path):
    text = HEAT_SMOKE.read_text()
    swapped = text.replace('name = "heat_smoke"\nseed = 7', 'seed = 7\nname = "heat_smoke"', 1)
    assert swapped != text
    p = tmp_path / "swapped.toml"
    p.write_text(swapped)
    assert S.load_scenario(p).hash == S.load_scenario(HEAT_SMOKE).hash


def _summary(tmp_path: Path, name: str, argv: list[str]) -> bytes:
    out = tmp_path / name
    code = cli.main(["--out", str(out), *argv])
    assert code == cli.EXIT_OK
    return (out / "summary.json").read_bytes()


def test_heat_smoke_and_noop_flags(tmp_path):
    default = _summary(tmp_path, "a", ["run", "heat_smoke"])
    noop = _summary(tmp_path, "b", ["--tol-scale", "1.0", "--seed", "7", "--parallel", "1", "run", "heat_smoke"])
    assert default == noop
    files = {p.name for p in (tmp_path / "a").iterdir()}
    assert {"summary.json", "flow_energy.json", "flow_energy.csv"} <= files
    rep = json.loads((tmp_path / "a" / "evi_wide.json").read_text())
    assert set(rep) >= {"name", "lhs", "rhs", "slack", "tol", "verdict", "config_hash", "runtime_s"}


def test_parallel_matches_serial(tmp_path):
    serial = _summary(tmp_path, "s", ["flow", "heat_smoke"])
    par = _summary(tmp_path, "p", ["--parallel", "2", "flow", "heat_smoke"])
    assert serial == par


def test_shortcut_runs_only_its_group(tmp_path):
    out = tmp_path / "f"
    assert cli.main(["--out", str(out), "flow", "heat_smoke"]) == cli.EXIT_OK
    kinds = {r["kind"] for r in json.loads((out / "summary.json").read_text())["audits"]}
    assert kinds and kinds <= S.AUDIT_GROUPS["flow"]


def test_failing_audit_exit_one(tmp_path):
    text = HEAT_SMOKE.read_text().replace('reversed = true\nexpect = "FAIL"', "reversed = true", 1)
    cfg = tmp_path / "strict.toml"
    cfg.write_text(text)
    assert cli.main(["--out", str(tmp_path / "o"), "evi", str(cfg)]) == cli.EXIT_FAIL


def test_raising_audit_exit_three(tmp_path):
    # an OU-type potential gives kappa > 0, which the expansion audit rejects at run time
    text = HEAT_SMOKE.read_text().replace('potential = "zero"', 'potential = "quadratic"', 1)
    cfg = tmp_path / "raise.toml"
    cfg.write_text(text)
    assert cli.main(["--out", str(tmp_path / "o"), "evi", str(cfg)]) == cli.EXIT_ERROR
