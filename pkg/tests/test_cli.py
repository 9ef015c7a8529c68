import csv
import json

import numpy as np
import pytest

from trunccox.cli import main


def write_csv(path, time, left, right, z):
    z = np.atleast_2d(np.asarray(z, dtype=float).T).T
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["time", "left", "right"] + [f"z{j + 1}" for j in range(z.shape[1])])
        for row in zip(time, left, right, *z.T):
            w.writerow([repr(float(v)) for v in row])
    return path


@pytest.fixture
def truncated_csv(tmp_path):
    rng = np.random.default_rng(0)
    t = rng.uniform(1, 3, 40)
    left = np.where(np.arange(40) % 3 == 0, -np.inf, t - rng.uniform(0, 1, 40))
    right = np.where(np.arange(40) % 2 == 0, np.inf, t + rng.uniform(0, 1, 40))
    return write_csv(tmp_path / "d.csv", t, left, right, rng.normal(size=(40, 3)))


def run_json(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, json.loads(out.out) if code == 0 else json.loads(out.err)


class TestFit:
    def test_three_covariates(self, truncated_csv, capsys):
        code, rep = run_json(["fit", str(truncated_csv), "--bootstrap", "5"], capsys)
        assert code == 0
        assert [c["name"] for c in rep["coefficients"]] == ["z1", "z2", "z3"]
        for c in rep["coefficients"]:
            assert c["se"] > 0 and 0 <= c["p_value"] <= 1
        assert rep["diagnostics"]["converged"]
        assert rep["diagnostics"]["bootstrap"]["B"] == 5
        cum = rep["baseline"]["cumulative"]
        assert np.all(np.diff(cum) >= 0)

    def test_weighted_equals_standard_for_full_windows(self, tmp_path, capsys):
        rng = np.random.default_rng(1)
        t = rng.exponential(size=30)
        path = write_csv(tmp_path / "u.csv", t, np.full(30, -np.inf), np.full(30, np.inf), rng.normal(size=30))
        _, w = run_json(["fit", str(path), "--method", "weighted", "--bootstrap", "0"], capsys)
        _, s = run_json(["fit", str(path), "--method", "standard", "--bootstrap", "0"], capsys)
        assert w["coefficients"][0]["estimate"] == pytest.approx(s["coefficients"][0]["estimate"], abs=1e-10)
        assert w["coefficients"][0]["se"] is None  # NaN without a bootstrap

    def test_byte_identical_reports(self, truncated_csv, tmp_path):
        outs = []
        for k in range(2):
            (tmp_path / str(k)).mkdir()
            out = tmp_path / str(k) / "r.json"
            assert main(["fit", str(truncated_csv), "--bootstrap", "4", "--seed", "3", "-o", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        assert (tmp_path / "0" / "r.json.manifest.json").exists()

    def test_no_convergence_exit_code(self, truncated_csv, capsys):
        code, err = run_json(["fit", str(truncated_csv), "--bootstrap", "0", "--max-iter", "1"], capsys)
        assert code == 3 and err["error"] == "no_convergence"

    def test_missing_column_exit_code(self, truncated_csv, capsys):
        code, err = run_json(["fit", str(truncated_csv), "--covariates", "z9"], capsys)
        assert code == 2 and "error" in err

    def test_missing_file(self, tmp_path, capsys):
        code, err = run_json(["fit", str(tmp_path / "nope.csv")], capsys)
        assert code == 2 and err["error"] == "io_error"

    def test_violation_and_skip(self, tmp_path, capsys):
        path = write_csv(tmp_path / "v.csv", [1.0, 2.0, 3.0, 4.0], [0.5, 2.5, 1.0, 0.0], [2.0, 3.0, 4.0, 5.0],
                         [0.1, 0.2, -0.3, 0.4])
        code, _ = run_json(["fit", str(path), "--bootstrap", "0"], capsys)
        assert code == 2
        with pytest.warns(UserWarning, match="skipped 1"):
            code, rep = run_json(["fit", str(path), "--bootstrap", "0", "--skip-invalid"], capsys)
        assert code == 0 and rep["n"] == 3 and rep["skipped_rows"] == [2]


class TestSimulate:
    def test_single_replicate_gives_na(self, tmp_path):
        out = tmp_path / "sim"
        code = main(["simulate", "table1_rho035_n100", "--reps", "1", "--n", "40", "--bootstrap", "3",
                     "--estimators", "em", "-o", str(out), "-q"])
        assert code == 0
        rows = list(csv.DictReader(open(out / "report.csv")))
        assert {r["estimator"] for r in rows} == {"em", "standard"}
        assert all(r["sd"] == "NA" and r["coverage"] == "NA" for r in rows)
        assert json.loads((out / "manifest.json").read_text())["command"] == "simulate"

    def test_grid(self, tmp_path):
        out = tmp_path / "grid"
        grid = "0.1,0.25,0.4"
        code = main(["simulate", "fig3_independent_n250", "--reps", "2", "--n", "40", "--estimators", "em",
                     "--grid-left", grid, "--grid-right", grid, "-o", str(out), "-q"])
        assert code == 0
        rows = list(csv.DictReader(open(out / "report.csv")))
        assert len({r["scenario"] for r in rows}) == 9
        long = list(csv.DictReader(open(out / "figure_long.csv")))
        assert len({(r["target_left"], r["target_right"]) for r in long}) == 9

    def test_unknown_estimator(self, tmp_path, capsys):
        code = main(["simulate", "fig3_independent_n250", "--estimators", "magic", "-o", str(tmp_path)])
        assert code == 2
        assert json.loads(capsys.readouterr().err)["error"]


class TestIndependence:
    def test_constant_bounds(self, tmp_path, capsys):
        t = np.arange(1.0, 9.0)
        path = write_csv(tmp_path / "c.csv", t, np.zeros(8), np.full(8, 20.0), np.zeros(8))
        code = main(["test-independence", str(path), "--permutations", "19"])
        out = capsys.readouterr()
        assert code == 0
        rep = json.loads(out.out)
        assert (rep["tau_L"], rep["tau_R"]) == (0.0, 0.0)
        assert len(rep["warnings"]) == 2 and "warning" in out.err

    def test_report_fields(self, truncated_csv, capsys):
        code, rep = run_json(["test-independence", str(truncated_csv), "--permutations", "49", "--seed", "2"],
                             capsys)
        assert code == 0
        assert 0 < rep["p_value"] <= 1 and rep["permutations"] == 49


def test_scenarios_listing(capsys):
    assert main(["scenarios"]) == 0
    assert "table1_rho035_n100" in capsys.readouterr().out.split()
