import json
import subprocess
import sys

import numpy as np
import pytest

from varsketch.cli import cli
from varsketch.io import load_profiles


@pytest.fixture
def exp(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({
        "problem": {"mode_lengths": [4, 4, 4], "rank": 1, "points": 4},
        "operator": {"kind": "khatri_rao", "m": 16},
        "k": 1, "eps": 0.5, "trials": 10, "seed": 3, "committee_sizes": [1, 3],
    }))
    return path


@pytest.fixture
def problem(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"variety": {"mode": "polymap", "n": 3, "d_poly": 2},
                                "eps": 0.5, "delta": 0.01, "N": 1024}))
    return path


def run(argv, capsys):
    code = cli([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestBounds:
    def test_json_report(self, problem, capsys):
        code, out, _ = run(["bounds", "--config", problem], capsys)
        assert code == 0
        rep = json.loads(out)
        assert rep["subgaussian_dim"] == 80 and rep["fjlt_dim"] == 2664
        assert rep["constants"]["C1"] == 1.0

    def test_constant_override(self, problem, capsys):
        code, out, _ = run(["bounds", "--config", problem, "--C1", "2", "--c-phi", "3"], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["constants"]["C1"] == 2.0 and rep["constants"]["c_phi"] == 3.0
        assert rep["subgaussian_dim"] > 80

    def test_csv_and_out(self, problem, tmp_path, capsys):
        out_path = tmp_path / "r.csv"
        code, out, _ = run(["bounds", "--config", problem, "--format", "csv", "--out", out_path], capsys)
        assert code == 0 and out == ""
        lines = out_path.read_text().splitlines()
        assert lines[0] == "field,value"
        assert "subgaussian_dim,80" in lines

    def test_missing_config(self, tmp_path, capsys):
        code, _, err = run(["bounds", "--config", tmp_path / "nope.json"], capsys)
        assert code == 1 and "nope.json" in err

    def test_bad_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        code, _, err = run(["bounds", "--config", bad], capsys)
        assert code == 1 and "bad.json" in err

    def test_missing_field(self, tmp_path, capsys):
        p = tmp_path / "p.json"
        p.write_text(json.dumps({"variety": {"mode": "polymap", "n": 3, "d_poly": 2}}))
        code, _, err = run(["bounds", "--config", p], capsys)
        assert code == 1 and "eps" in err


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        code, _, err = run(["frobnicate"], capsys)
        assert code == 1 and "usage" in err

    def test_unknown_flag(self, capsys):
        code, _, err = run(["mom", "--p", "0.2", "--k", "1", "--bogus"], capsys)
        assert code == 1 and "usage" in err

    def test_no_subcommand(self, capsys):
        code, _, err = run([], capsys)
        assert code == 1 and "COMMAND" in err

    def test_validation_error(self, capsys):
        code, _, err = run(["mom", "--p", "0.9", "--k", "1"], capsys)
        assert code == 1 and "error" in err

    def test_runtime_error(self, exp, capsys, monkeypatch):
        import varsketch.harness

        def boom(*a, **k):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr(varsketch.harness, "run_distortion", boom)
        code, _, err = run(["distort", "--config", exp], capsys)
        assert code == 2 and "disk on fire" in err


class TestExperiments:
    def test_mom(self, capsys):
        code, out, _ = run(["mom", "--p", "0.2", "--k", "5", "--trials", "100000"], capsys)
        rep = json.loads(out)
        assert code == 0
        assert rep["rate"] <= 0.06455 + rep["half_width"]
        assert rep["within_bound"] is True

    def test_polycert(self, capsys):
        code, out, _ = run(["polycert", "--eps", "0.5", "--M", "3", "--eta", "0.25"], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["passed"]
        assert rep["upper"]["degree"] <= rep["upper"]["degree_bound"]

    def test_distort_seed_override(self, exp, capsys):
        _, a, _ = run(["distort", "--config", exp], capsys)
        _, b, _ = run(["distort", "--config", exp, "--seed", "4"], capsys)
        ra, rb = json.loads(a), json.loads(b)
        assert ra["provenance"]["seed"] == 3 and rb["provenance"]["seed"] == 4
        assert ra["result"]["per_trial_max"] != rb["result"]["per_trial_max"]

    def test_distort_deterministic_result(self, exp, capsys):
        _, a, _ = run(["distort", "--config", exp], capsys)
        _, b, _ = run(["distort", "--config", exp], capsys)
        assert json.loads(a)["result"] == json.loads(b)["result"]

    def test_compare_csv(self, exp, capsys):
        code, out, _ = run(["compare", "--config", exp, "--format", "csv"], capsys)
        assert code == 0 and len(out.strip().splitlines()) == 3

    def test_pairwise_csv(self, exp, capsys):
        code, out, _ = run(["pairwise", "--config", exp, "--format", "csv"], capsys)
        rows = out.strip().splitlines()
        assert code == 0 and rows[0] == "id,p0,p1,p2,p3"

    def test_sketch_profiles_dump(self, exp, tmp_path, capsys):
        prof = tmp_path / "prof.bin"
        code, out, _ = run(["sketch", "--config", exp, "--profiles", prof], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["committee_size"] == 3
        profiles = load_profiles(prof, 3)
        assert profiles.shape == (4, 3, 16)
        for sel, y, p in zip(rep["selected"], rep["sketches"], profiles):
            np.testing.assert_array_equal(np.array(y), p[sel])

    def test_sketch_requires_config(self, capsys):
        code, _, err = run(["sketch"], capsys)
        assert code == 1 and "--config" in err

    def test_calibrate(self, capsys):
        code, out, _ = run(["calibrate", "--kind", "gaussian", "--trials", "1000", "--m-grid", "16,32,48,64"], capsys)
        rep = json.loads(out)
        assert code == 0 and rep["kind"] == "gaussian" and len(rep["m_grid"]) == 4

    def test_calibrate_bad_grid(self, capsys):
        code, _, _ = run(["calibrate", "--m-grid", "16,x"], capsys)
        assert code == 1


def test_console_script_entry_point(problem):
    proc = subprocess.run([sys.executable, "-m", "varsketch.cli", "bounds", "--config", str(problem)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["committee_k"] >= 0
    proc = subprocess.run([sys.executable, "-m", "varsketch.cli", "bounds", "--config", "/nonexistent/x.json"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and "/nonexistent/x.json" in proc.stderr
