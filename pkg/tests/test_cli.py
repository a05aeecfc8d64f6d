import csv
import json
import math

import pytest
from click.testing import CliRunner

from ahconstraint.cli import OUT_ENV, emit_report, format_json, main
from ahconstraint.config import RunConfig


def _run(args, env=None):
    return CliRunner().invoke(main, args, env=env or {}, catch_exceptions=False)


def _tree(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_evaluate_passes(tmp_path):
    res = _run(["evaluate", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    doc = json.loads((tmp_path / "evaluate.json").read_text())
    assert doc["passed"] and doc["schema"] == "ahconstraint-report"
    assert float(doc["records"][0]["sup_hamiltonian"]) <= 1e-10
    rows = list(csv.DictReader((tmp_path / "summary.csv").open()))
    assert rows[0]["probe"] == "evaluate" and rows[0]["passed"] == "True"


def test_gate_failure_exit_code(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[tolerances]\nphi = 1e-300\n")
    res = _run(["evaluate", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 1
    assert not json.loads((tmp_path / "o" / "summary.json").read_text())["passed"]


def test_malformed_config_writes_nothing(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[run]\nseed = x\n")
    out = tmp_path / "o"
    res = _run(["all", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 2
    assert not out.exists()
    res = _run(["evaluate", "--config", str(tmp_path / "missing.cfg"), "--out", str(out)])
    assert res.exit_code == 2


def test_strict_window_is_config_error(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[weights]\ndeltas = -3\n")
    assert _run(["kernel-probe", "--config", str(cfg), "--strict", "--out", str(tmp_path / "o")]).exit_code == 2


def test_out_precedence(tmp_path):
    env_dir, flag_dir = tmp_path / "env", tmp_path / "flag"
    assert _run(["evaluate"], env={OUT_ENV: str(env_dir)}).exit_code == 0
    assert (env_dir / "summary.csv").exists()
    assert _run(["evaluate", "--out", str(flag_dir)], env={OUT_ENV: str(env_dir / "x")}).exit_code == 0
    assert (flag_dir / "summary.csv").exists() and not (env_dir / "x").exists()


def test_repeat_runs_identical(tmp_path):
    for name in ("a", "b"):
        assert _run(["evaluate", "--seed", "7", "--out", str(tmp_path / name)]).exit_code == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")


def test_empty_probe_list(tmp_path):
    emit_report([], tmp_path, RunConfig(probes=()))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["rows"] == [] and summary["passed"] is True
    assert (tmp_path / "summary.csv").read_text().count("\n") == 1


def test_delta_scan_rows(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[run]\nprobes = inequalities\n[weights]\ndeltas = -1.2, -1.35, -1.5, -1.65, -1.8\n"
                   "[ladder]\nresolutions = 6, 8\n[families]\nsize = 2\n")
    res = _run(["run", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code in (0, 1)
    rows = list(csv.DictReader((tmp_path / "o" / "scan.csv").open()))
    assert len(rows) == 5
    assert [float(r["delta"]) for r in rows] == [-1.2, -1.35, -1.5, -1.65, -1.8]


def test_format_json():
    text = format_json({"b": [1.0, math.inf, math.nan], "a": 0.1, "c": True, "d": None})
    assert text.index('"a"') < text.index('"b"')
    assert "0.10000000000000001" in text and '"inf"' in text and '"nan"' in text
    assert json.loads(text)["c"] is True


@pytest.mark.parametrize("cmd", ["evaluate", "verify-identities", "probe-inequalities", "kernel-probe",
                                 "lipschitz", "convergence", "all"])
def test_subcommands_exist(cmd):
    assert _run([cmd, "--help"]).exit_code == 0
