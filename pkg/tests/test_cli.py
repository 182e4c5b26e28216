from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from keplersr import cli
from keplersr.dataset import load_reference_table, reference_table_path
from keplersr.expr import parse

FAST = ["--max-bits", "15", "--max-candidates", "2000"]


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_missing_column_exits_with_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("anomalia_eccentri,intercolumnium,intervallu\n0 0 0,0,166458\n")
    code, _, err = run_cli(capsys, "ingest", bad, "-o", tmp_path / "n.csv")
    assert code == 2
    assert "anomalia_coaequata" in err


def test_malformed_row_reports_row_number(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("anomalia_eccentri,intercolumnium,anomalia_coaequata,intervallu\n"
                   "0 0 0,0,0 0 0,166458\n1 0 0,0,0 x 41,166455\n")
    code, _, err = run_cli(capsys, "ingest", bad, "-o", tmp_path / "n.csv")
    assert code == 2 and "2" in err


def test_two_point_ellipse_fit_is_numerical_failure(tmp_path, capsys):
    two = tmp_path / "two.csv"
    two.write_text("theta_rad,r\n0.0,1.4\n3.0,1.6\n")
    code, _, err = run_cli(capsys, "fit-ellipse", "--data", two)
    assert code == 3 and "underdetermined" in err


def test_ingest_reference_table(tmp_path, capsys):
    out = tmp_path / "norm.csv"
    code, stdout, _ = run_cli(capsys, "ingest", reference_table_path(), "-o", out)
    assert code == 0 and "180 rows" in stdout
    with out.open() as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert len(rows) == 180 and list(rows[0]) == ["theta_rad", "r"]
    again = tmp_path / "again.csv"
    assert run_cli(capsys, "ingest", out, "-o", again)[0] == 0
    assert again.read_bytes() == out.read_bytes()


def test_fit_ellipse_on_reference(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "fit-ellipse", "--out-dir", tmp_path)
    assert code == 0
    d = json.loads((tmp_path / "ellipse.json").read_text())
    assert d["a"] == pytest.approx(1.5235, abs=1e-3)
    assert d["eps"] == pytest.approx(0.0926, abs=1e-3)


@pytest.mark.parametrize("equation, flags, mse, tol", [
    ("1.50000000000000", (), 0.0106, 0.03),
    ("1/(0.662416338920593 - 0.0612923018634319*cos(x0))", (), 7.26e-7, 0.03),
    ("0.142857142857143*x0 + 1.5", ("--observational",), 3.09e-4, 0.20),
    ("0.02*x0^3 - 0.09*x0^2 - 0.01*x0 + 1.67", (), 4.41e-5, 0.20),
])
def test_eval_reference_values(capsys, equation, flags, mse, tol):
    code, out, _ = run_cli(capsys, "eval", equation, *flags)
    assert code == 0
    res = json.loads(out)
    assert res["mse"] == pytest.approx(mse, rel=tol)
    assert res["dl"] > 0


def test_eval_domain_failure_exits_3(capsys):
    code, out, _ = run_cli(capsys, "eval", "log(x0 - 10)")
    assert code == 3 and json.loads(out)["mse"] is None


def test_eval_bad_equation_exits_2(capsys):
    assert run_cli(capsys, "eval", "1 + * x0")[0] == 2


def test_custom_and_experiment_are_exclusive(capsys):
    with pytest.raises(SystemExit):
        cli.main(["run", "--experiment", "1", "--custom", "inductive"])


def _run(tmp_path, name, capsys, *extra):
    out = tmp_path / name
    code, stdout, _ = run_cli(capsys, "run", *extra, *FAST, "--out-dir", out)
    assert code == 0, stdout
    return out


def test_run_writes_report(tmp_path, capsys):
    out = _run(tmp_path, "r", capsys, "--experiment", "2")
    rep = json.loads((out / "report.json").read_text())
    for key in ("schema", "version", "config", "data", "search", "ellipse_fit", "decomposition", "pareto"):
        assert key in rep
    assert rep["config"]["bias"] == {"observational": True, "inductive": False}
    assert rep["decomposition"]["kind"] == "none"
    rows = rep["pareto"]
    assert rows
    bits = [r["bits"] for r in rows]
    assert bits == sorted(bits)
    for r in rows:
        expr, consts = parse(r["equation"])
        assert expr is not None
    assert (out / "pareto.txt").read_text().startswith(" Complexity") or "Equation" in (out / "pareto.txt").read_text()
    assert len(list((out / "plots").glob("eq_*.csv"))) == len(rows)
    with (out / "plots" / "eq_00.csv").open() as fh:
        plot = list(csv.DictReader(fh))
    theta = [float(p["theta"]) for p in plot]
    assert theta == sorted(theta) and len(theta) == 180
    audit = (out / "audit.jsonl").read_text().splitlines()
    assert len(audit) == rep["search"]["n_scored"]
    assert json.loads((out / "report.timing.json").read_text())["wall_seconds"] > 0


def test_report_is_byte_identical(tmp_path, capsys):
    a = _run(tmp_path, "a", capsys, "--experiment", "4")
    b = _run(tmp_path, "b", capsys, "--experiment", "4")
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    assert (a / "audit.jsonl").read_bytes() == (b / "audit.jsonl").read_bytes()


def test_inductive_bias_shrinks_the_search(tmp_path, capsys):
    one = json.loads((_run(tmp_path, "1", capsys, "--experiment", "1", "--max-candidates", "1e9") / "report.json").read_text())
    three = json.loads((_run(tmp_path, "3", capsys, "--experiment", "3", "--max-candidates", "1e9") / "report.json").read_text())
    assert one["search"]["status"] == three["search"]["status"] == "complete"
    assert three["search"]["n_candidates"] < one["search"]["n_candidates"]


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": 3, "max_bits": 10, "seed": 5, "loss": "mse"}))
    out = tmp_path / "c"
    code, _, _ = run_cli(capsys, "run", "--config", cfg, "--max-bits", "12", "--out-dir", out)
    assert code == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["budget"]["max_bits"] == 12
    assert rep["config"]["seed"] == 5 and rep["config"]["loss"] == "mse"
    assert rep["config"]["bias"] == {"observational": False, "inductive": True}


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experimnet": 3}))
    assert run_cli(capsys, "run", "--config", cfg, "--out-dir", tmp_path / "x")[0] == 2


def test_custom_bias(tmp_path, capsys):
    out = _run(tmp_path, "cust", capsys, "--custom", "observational,inductive")
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["experiment"] is None
    assert rep["config"]["bias"] == {"observational": True, "inductive": True}


def test_synthetic_run(tmp_path, capsys):
    out = _run(tmp_path, "syn", capsys, "--experiment", "2", "--synthetic", "a=1.5237,eps=0.0934,n=60,noise=0,seed=3")
    rep = json.loads((out / "report.json").read_text())
    assert rep["data"]["n"] == 60
    assert rep["ellipse_fit"]["eps"] == pytest.approx(0.0934, abs=1e-9)


def test_bad_synthetic_spec(capsys):
    assert run_cli(capsys, "fit-ellipse", "--synthetic", "a=-1")[0] == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "keplersr", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("keplersr ")
