import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose

from synthpi import __version__
from synthpi.cli import main
from synthpi.qclp import ConicProblem

from test_qclp import random_instance


def _run(*argv):
    return main([str(a) for a in argv])


def test_fit_on_sample(tmp_path):
    out = tmp_path / "fit.json"
    assert _run("fit", "--input", "@sample", "--out", out) == 0
    data = json.loads(out.read_text())
    w = np.array(data["w_hat"])
    assert len(data["donors"]) == w.size == 10
    assert np.all(w >= -1e-12) and abs(w.sum() - 1) <= 1e-9


def test_missing_file_exit_code(tmp_path, capsys):
    missing = tmp_path / "absent.csv"
    assert _run("fit", "--input", missing, "--treated-unit", "a", "--T0", 5) == 2
    err = capsys.readouterr().err
    assert str(missing) in err and err.startswith("synthpi: error [")


def test_unconstrained_matches_ols(tmp_path):
    out, design_out = tmp_path / "fit.json", tmp_path / "design.json"
    assert _run("fit", "--input", "@sample", "--constraint", "unconstrained", "--intercept",
                "--features", "gdp", "--design-out", design_out, "--out", out) == 0
    design = json.loads(design_out.read_text())
    A = np.array(design["A"])
    Z = np.hstack([np.array(design["B"]), np.array(design["C"])])
    ols = np.linalg.lstsq(Z, A, rcond=None)[0]
    assert_allclose(json.loads(out.read_text())["beta_hat"], ols, atol=1e-8)


def test_pi_single_period_structure(tmp_path):
    assert _run("pi", "--input", "@sample", "--periods", "31", "--draws", 200, "--out-dir", tmp_path) == 0
    data = json.loads((tmp_path / "intervals.json").read_text())
    assert len(data["periods"]) == 1
    entry = data["periods"][0]
    approaches = [r["approach"] for r in entry["intervals"]]
    assert approaches == ["insample", "subg", "locscale", "qreg"]
    m1 = entry["insample"]
    for rec in entry["intervals"]:
        # every record is built on the same in-sample bounds
        assert rec["lower"] == pytest.approx(rec["point"] + m1["M1_L"] + rec["M2_L"], abs=1e-12)
        assert rec["upper"] == pytest.approx(rec["point"] + m1["M1_U"] + rec["M2_U"], abs=1e-12)
        assert "tau" in rec
    rows = list(csv.DictReader((tmp_path / "intervals.csv").read_text().splitlines()))
    assert list(rows[0]) == ["period", "point", "lower", "upper", "alpha1", "alpha2", "approach"]
    assert len(rows) == 4


def test_pi_in_sample_only(tmp_path):
    assert _run("pi", "--input", "@sample", "--alpha2", 0, "--draws", 200, "--out-dir", tmp_path) == 0
    data = json.loads((tmp_path / "intervals.json").read_text())
    assert len(data["periods"]) == 10
    for entry in data["periods"]:
        assert [r["approach"] for r in entry["intervals"]] == ["insample"]
        rec = entry["intervals"][0]
        assert (rec["M2_L"], rec["M2_U"], rec["alpha2"]) == (0.0, 0.0, 0.0)


def test_pi_sensitivity_records(tmp_path):
    assert _run("pi", "--input", "@sample", "--periods", "35", "--draws", 200, "--approaches", "subg",
                "--sensitivity", "0.25,0.5,1,1.5,2", "--out-dir", tmp_path) == 0
    entry = json.loads((tmp_path / "intervals.json").read_text())["periods"][0]
    sens = [r for r in entry["intervals"] if r["approach"].startswith("subg*")]
    assert [r["approach"] for r in sens] == ["subg*0.25", "subg*0.5", "subg*1", "subg*1.5", "subg*2"]
    widths = [r["M2_U"] - r["M2_L"] for r in sens]
    assert_allclose(np.array(widths) / [0.25, 0.5, 1, 1.5, 2], widths[2], rtol=1e-10)
    plain = next(r for r in entry["intervals"] if r["approach"] == "subg")
    assert plain["M2_U"] == pytest.approx(sens[2]["M2_U"], abs=1e-12)


def test_pi_bad_levels(tmp_path):
    assert _run("pi", "--input", "@sample", "--alpha1", 0.6, "--alpha2", 0.5, "--out-dir", tmp_path) == 2


def test_mc_quick_mode_and_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert _run("mc", "--reps", 100, "--methods", "oracle,subg", "--draws", 200, "--seed", 3, "--out", out) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(a.read_text().splitlines()))
    assert len(rows) == 10
    for r in rows:
        cp = float(r["CP"])
        assert float(r["mc_se"]) == pytest.approx(np.sqrt(cp * (1 - cp) / 100))


def test_qclp_solve(tmp_path, capsys):
    problem, _ = random_instance(np.random.default_rng(0))
    path = tmp_path / "p.json"
    path.write_text(json.dumps(problem.to_dict()))
    assert _run("qclp-solve", "--problem", path) == 0
    sol = json.loads(capsys.readouterr().out)
    assert sol["status"] == "optimal"
    from synthpi.qclp import solve

    assert sol["value"] == solve(ConicProblem.load(path)).value


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nalpha1 = 0.1\ndraws = 300\nintercept = true\n")
    assert _run("pi", "--config", cfg, "--draws", 500, "--config-dump") == 0
    dump = capsys.readouterr().out
    assert "alpha1 = 0.1\n" in dump  # from the file
    assert "draws = 500\n" in dump  # flag beats file
    assert "alpha2 = 0.05\n" in dump  # default
    assert "intercept = True\n" in dump
    cfg.write_text("nonsense = 1\n")
    assert _run("pi", "--config", cfg, "--config-dump") == 2


def test_version():
    out = subprocess.run([sys.executable, "-m", "synthpi.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout
