import csv
import json

import numpy as np
import pytest
import statsmodels.api as sm
from numpy.testing import assert_allclose

from wlcox.cli import main
from wlcox.io import read_input_table, write_input_table
from wlcox.simlab import ScenarioConfig, run_replicate

from conftest import ROOT

FIXTURE = ROOT / "tests" / "data" / "full_cohort.csv"
SCENARIO = ROOT / "scenarios" / "fp_case_aux.json"


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def known_design(tmp_path):
    return write_json(tmp_path / "design.json", {"mode": "bernoulli_known"})


@pytest.fixture
def small_scenario(tmp_path):
    spec = json.loads(SCENARIO.read_text())
    spec.update(n_subjects=300, replicates=3, master_seed=11)
    return write_json(tmp_path / "scenario.json", spec), spec


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


class TestFit:
    def test_full_cohort_matches_statsmodels(self, tmp_path, known_design,
                                             capsys):
        out = tmp_path / "report.json"
        code, _, _ = run(["fit", FIXTURE, "--design", known_design,
                          "--out", out], capsys)
        assert code == 0
        report = json.loads(out.read_text())
        table = read_input_table(FIXTURE)
        ref = sm.PHReg(table.times, table.covariates, status=table.status,
                       ties="breslow").fit()
        assert_allclose(report["beta"], ref.params, atol=1e-6)
        assert_allclose(report["se"]["model_based"], ref.bse, rtol=1e-6)
        assert report["schema_version"] == "1.0"
        assert report["covariates"] == ["age", "treat"]
        assert report["convergence"]["converged"]
        assert set(report["se"]) == {"model_based", "bernoulli_known",
                                     "bernoulli_empirical"}
        assert report["strata"] == [{"stratum": 1, "N_j": 40, "n_j": 40,
                                     "always_sampled": False,
                                     "pi_mean": 1.0}]

    def test_unsampled_row_with_empty_z(self, tmp_path, capsys):
        src = list(csv.reader(FIXTURE.open()))
        src[0] = [c for c in src[0] if c != "pi"]
        rows = [src[0]]
        for k, r in enumerate(src[1:]):
            r = r[:5] + r[6:]
            if k % 3 == 1:
                r[1], r[2], r[4], r[5], r[6] = "", "", "0", "", ""
            rows.append(r)
        path = tmp_path / "phase2.csv"
        with path.open("w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        design = write_json(tmp_path / "d.json",
                            {"mode": "estimated_stratified"})
        code, out, _ = run(["fit", path, "--design", design], capsys)
        assert code == 0
        report = json.loads(out)
        assert report["n_sampled"] < report["n_phase1"] == 40
        assert "fp_or_estimated" in report["se"]

    def test_sampled_row_without_time(self, tmp_path, known_design, capsys):
        lines = FIXTURE.read_text().splitlines()
        parts = lines[4].split(",")
        parts[1] = ""
        lines[4] = ",".join(parts)
        path = tmp_path / "bad.csv"
        path.write_text("\n".join(lines) + "\n")
        code, _, err = run(["fit", path, "--design", known_design], capsys)
        assert code == 1
        payload = json.loads(err)["error"]
        assert payload["row"] == 4
        assert "time" in payload["message"]

    def test_missing_file(self, tmp_path, known_design, capsys):
        code, _, _ = run(["fit", tmp_path / "none.csv", "--design",
                          known_design], capsys)
        assert code == 1

    def test_model_error_exit_two(self, tmp_path, known_design, capsys):
        path = tmp_path / "mono.csv"
        path.write_text("id,time,status,stratum,sampled,pi,z.x\n"
                        "1,1.0,1,1,1,1.0,1.0\n2,2.0,0,1,1,1.0,0.0\n")
        out = tmp_path / "err.json"
        code, _, err = run(["fit", path, "--design", known_design, "--out",
                            out], capsys)
        assert code == 2
        assert json.loads(err)["error"]["code"] == "monotone_likelihood"
        assert json.loads(out.read_text())["error"]["code"] == \
            "monotone_likelihood"

    def test_bad_design(self, tmp_path, capsys):
        design = write_json(tmp_path / "d.json", {"mode": "cluster"})
        code, _, _ = run(["fit", FIXTURE, "--design", design], capsys)
        assert code == 1


class TestSimulate:
    def test_single_replicate(self, tmp_path, small_scenario, capsys):
        path, _ = small_scenario
        code, _, _ = run(["simulate", path, "--replicates", 1,
                          "--out-dir", tmp_path / "o"], capsys)
        assert code == 0
        rows = list(csv.DictReader((tmp_path / "o" / "replicates.csv").open()))
        assert len(rows) == 1
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["n_replicates"] == 1

    def test_same_seed_identical_files(self, tmp_path, small_scenario,
                                       capsys):
        path, _ = small_scenario
        for name, threads in (("a", 1), ("b", 2)):
            assert run(["simulate", path, "--seed", 42, "--threads", threads,
                        "--out-dir", tmp_path / name], capsys)[0] == 0
        for f in ("summary.json", "replicates.csv"):
            assert (tmp_path / "a" / f).read_bytes() == \
                (tmp_path / "b" / f).read_bytes()

    def test_invalid_config(self, tmp_path, small_scenario, capsys):
        _, spec = small_scenario
        spec = dict(spec, baseline={"family": "gompertz"})
        path = write_json(tmp_path / "bad.json", spec)
        code, _, err = run(["simulate", path, "--out-dir", tmp_path], capsys)
        assert code == 1
        assert json.loads(err)["error"]["path"] == "$.baseline.family"


class TestRoundTrip:
    @pytest.mark.parametrize("mode", ["finite_population",
                                      "estimated_stratified",
                                      "bernoulli_known"])
    def test_cohort_refit_bitwise(self, tmp_path, small_scenario, capsys,
                                  mode):
        path, spec = small_scenario
        spec = dict(spec, design=dict(spec["design"], mode=mode))
        path = write_json(tmp_path / "s.json", spec)
        config = ScenarioConfig.from_dict(spec)
        design = write_json(tmp_path / "d.json", config.design.to_dict())
        for r in range(2):
            csv_path = tmp_path / f"cohort{r}.csv"
            assert run(["cohort", path, "--replicate", r, "--out", csv_path],
                       capsys)[0] == 0
            out = tmp_path / f"fit{r}.json"
            assert run(["fit", csv_path, "--design", design, "--out", out],
                       capsys)[0] == 0
            beta = json.loads(out.read_text())["beta"]
            assert np.array_equal(beta, run_replicate(config, r).beta_hat)

    def test_writer_reader_exact(self, tmp_path, rng):
        n = 20
        times = rng.exponential(size=n)
        z = rng.normal(size=(n, 2))
        sampled = rng.random(n) < 0.5
        path = tmp_path / "t.csv"
        write_input_table(path, times, np.ones(n), z, np.ones(n, int),
                          sampled, blank_unsampled=False)
        table = read_input_table(path)
        assert np.array_equal(table.times, times)
        assert np.array_equal(table.covariates, z)


def test_diagnose(tmp_path, small_scenario, capsys):
    _, spec = small_scenario
    spec = dict(spec, design=dict(spec["design"], mode="estimated_stratified"))
    path = write_json(tmp_path / "s.json", spec)
    out = tmp_path / "diag.json"
    code, _, _ = run(["diagnose", path, "--sizes", 300, 600, "--replicates",
                      4, "--out", out], capsys)
    assert code == 0
    doc = json.loads(out.read_text())
    assert [r["n_subjects"] for r in doc["sizes"]] == [300, 600]
    code, _, _ = run(["diagnose", str(SCENARIO), "--sizes", 300,
                      "--replicates", 2], capsys)
    assert code == 2
