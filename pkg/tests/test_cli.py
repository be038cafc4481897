import json

import numpy as np
import pytest

from rieszreg.cli import main
from rieszreg.estimands import format_spec, parse_spec


def run(*argv):
    return main(list(argv))


@pytest.fixture()
def discrete_csv(tmp_path):
    path = tmp_path / "d.csv"
    assert run("simulate", "--dgp", "discrete", "--n", "600", "--seed", "4",
               "--out", str(path)) == 0
    return path


class TestSimulate:
    def test_writes_csv_and_schema(self, tmp_path, capsys):
        out = tmp_path / "data.csv"
        assert run("simulate", "--dgp", "appendix", "--n", "1000", "--seed", "7",
                   "--out", str(out)) == 0
        assert out.exists()
        sidecar = json.loads((tmp_path / "data.csv.schema.json").read_text())
        assert [c["name"] for c in sidecar["columns"]] == ["W", "A", "M", "Y"]
        header, first = out.read_text().splitlines()[:2]
        assert header == "W,A,M,Y"
        assert len(first.split(",")) == 4
        assert "n=1000" in capsys.readouterr().out

    def test_identical_bytes_across_runs(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run("simulate", "--dgp", "appendix", "--n", "200", "--seed", "9",
            "--out", str(a))
        run("simulate", "--dgp", "appendix", "--n", "200", "--seed", "9",
            "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_zero_rows_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            run("simulate", "--dgp", "appendix", "--n", "0", "--seed", "1",
                "--out", str(tmp_path / "x.csv"))
        assert err.value.code == 2

    def test_dgp_params_override(self, tmp_path):
        params = tmp_path / "p.json"
        params.write_text(json.dumps({"propensity": [0.5, 0.5]}))
        out = tmp_path / "d.csv"
        assert run("simulate", "--dgp", "discrete", "--dgp-params", str(params),
                   "--n", "50000", "--seed", "2", "--out", str(out)) == 0
        rows = np.loadtxt(out, delimiter=",", skiprows=1)
        assert abs(rows[:, 1].mean() - 0.5) < 0.01

    def test_outdir_env_redirects_relative_paths(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RIESZREG_OUTDIR", str(tmp_path / "sandbox"))
        assert run("simulate", "--dgp", "discrete", "--n", "50", "--seed", "1",
                   "--out", "rel.csv") == 0
        assert (tmp_path / "sandbox" / "rel.csv").exists()


class TestEstimate:
    def test_builtin_on_simulated_data(self, discrete_csv, tmp_path, capsys):
        report_path = tmp_path / "rep.json"
        code = run("estimate", "--data", str(discrete_csv), "--spec", "ate",
                   "--folds", "2", "--min-rows-per-fold", "30", "--seed", "3",
                   "--out", str(report_path))
        assert code == 0
        payload = json.loads(report_path.read_text())
        assert {"theta_hat", "plug_in", "std_error", "ci", "provenance"} <= set(payload)
        assert payload["provenance"]["config_sha256"]
        assert "estimate=" in capsys.readouterr().out

    def test_contrast_report_written(self, tmp_path):
        data = tmp_path / "a.csv"
        run("simulate", "--dgp", "appendix", "--n", "1500", "--seed", "6",
            "--out", str(data))
        out = tmp_path / "nde.json"
        code = run("estimate", "--data", str(data), "--spec", "nde", "--folds", "3",
                   "--min-rows-per-fold", "30", "--seed", "8", "--out", str(out))
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["contrast"] is not None
        assert "difference" in payload["contrast"]

    def test_spec_document_path(self, discrete_csv, tmp_path):
        from rieszreg import builtin_spec

        doc = tmp_path / "spec.json"
        doc.write_text(format_spec(builtin_spec("ate")))
        out = tmp_path / "rep.json"
        assert run("estimate", "--data", str(discrete_csv), "--spec", str(doc),
                   "--folds", "2", "--min-rows-per-fold", "30", "--seed", "1",
                   "--out", str(out)) == 0
        assert parse_spec(doc.read_text()).name == "ate"

    def test_missing_mediator_is_schema_error(self, discrete_csv, tmp_path, capsys):
        code = run("estimate", "--data", str(discrete_csv), "--spec", "nde",
                   "--seed", "1", "--out", str(tmp_path / "x.json"))
        assert code == 3
        assert "'M'" in capsys.readouterr().err

    def test_unknown_spec_is_schema_error(self, discrete_csv, tmp_path):
        code = run("estimate", "--data", str(discrete_csv), "--spec", "nonsense",
                   "--seed", "1", "--out", str(tmp_path / "x.json"))
        assert code == 3

    def test_missing_data_file_is_io_error(self, tmp_path):
        code = run("estimate", "--data", str(tmp_path / "absent.csv"),
                   "--spec", "ate", "--seed", "1", "--out", str(tmp_path / "x.json"))
        assert code == 5

    def test_mlp_method_runs(self, discrete_csv, tmp_path):
        code = run("estimate", "--data", str(discrete_csv), "--spec", "ate",
                   "--method", "mlp", "--mlp-epochs", "5", "--folds", "2",
                   "--min-rows-per-fold", "30", "--seed", "2",
                   "--out", str(tmp_path / "m.json"))
        assert code == 0


class TestVerify:
    def test_full_suite_passes(self, capsys):
        assert run("verify", "--seed", "0") == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 5 and "FAIL" not in out

    def test_subset_run(self, capsys):
        assert run("verify", "--seed", "0", "--check", "gradients") == 0
        assert capsys.readouterr().out.count("PASS") == 1

    def test_injected_sign_flip_fails_representation(self, tmp_path, capsys):
        report = tmp_path / "verify.json"
        code = run("verify", "--seed", "0", "--check", "representation",
                   "--inject-sign-flip", "--out", str(report))
        assert code == 1
        assert "FAIL representation" in capsys.readouterr().out
        assert json.loads(report.read_text())["all_passed"] is False


class TestBenchmark:
    def test_grid_table(self, tmp_path, capsys):
        out = tmp_path / "table.csv"
        code = run("benchmark", "--dgp", "discrete", "--spec", "ate,mean_treated",
                   "--n", "400", "--replicates", "3", "--folds", "2",
                   "--min-rows-per-fold", "30", "--seed", "5", "--out", str(out))
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("dgp,spec,method,n,replicates")
        assert len(lines) == 3
        assert (tmp_path / "table.csv.meta.json").exists()

    def test_single_replicate_coverage_degenerate(self, tmp_path):
        out = tmp_path / "one.csv"
        run("benchmark", "--dgp", "discrete", "--spec", "ate", "--n", "400",
            "--replicates", "1", "--folds", "2", "--min-rows-per-fold", "30",
            "--seed", "5", "--out", str(out))
        row = out.read_text().splitlines()[1].split(",")
        coverage = float(row[10])
        assert coverage in (0.0, 1.0)

    def test_parallel_equals_serial(self, tmp_path):
        serial, parallel = tmp_path / "s.csv", tmp_path / "p.csv"
        args = ["benchmark", "--dgp", "discrete", "--spec", "ate", "--n", "400",
                "--replicates", "4", "--folds", "2", "--min-rows-per-fold", "30",
                "--seed", "5"]
        run(*args, "--threads", "1", "--out", str(serial))
        run(*args, "--threads", "2", "--out", str(parallel))
        strip = lambda path: [line.rsplit(",", 1)[0]  # runtime column varies
                              for line in path.read_text().splitlines()]
        assert strip(serial) == strip(parallel)

    def test_mediator_estimand_skipped_on_discrete_dgp(self, tmp_path):
        out = tmp_path / "skip.csv"
        run("benchmark", "--dgp", "discrete", "--spec", "nde,ate", "--n", "400",
            "--replicates", "2", "--folds", "2", "--min-rows-per-fold", "30",
            "--seed", "5", "--out", str(out))
        lines = out.read_text().splitlines()
        assert len(lines) == 2 and ",ate," in lines[1]


class TestErrorCodes:
    def test_numerical_error_exit_code(self, tmp_path, capsys):
        # a training split that misses a treatment level is a numerical abort
        data = tmp_path / "tiny.csv"
        run("simulate", "--dgp", "discrete", "--n", "120", "--seed", "4",
            "--out", str(data))
        import numpy as np

        from rieszreg import Dataset

        loaded = Dataset.from_csv(data)
        cols = dict(loaded.columns)
        a = cols["A"].copy()
        a[:] = 1.0
        a[3] = 0.0
        cols["A"] = a
        Dataset(loaded.schema, cols).to_csv(data)
        code = run("estimate", "--data", str(data), "--spec", "ate", "--folds", "2",
                   "--min-rows-per-fold", "10", "--seed", "1",
                   "--out", str(tmp_path / "x.json"))
        assert code == 4
        assert "missing level" in capsys.readouterr().err

    def test_benchmark_meta_contains_truth_reports(self, tmp_path):
        out = tmp_path / "t.csv"
        run("benchmark", "--dgp", "discrete", "--spec", "ate", "--n", "400",
            "--replicates", "2", "--folds", "2", "--min-rows-per-fold", "30",
            "--seed", "5", "--out", str(out))
        meta = json.loads((tmp_path / "t.csv.meta.json").read_text())
        assert meta["truth_reports"][0]["spec"] == "ate"
        assert meta["truth_reports"][0]["theta"] == pytest.approx(0.25)
