import json
import math

from trialcraft.cli import main

FOUR_ROW_CSV = "y,z,a,b\n1,1,0.5,1\n3,1,1.5,0\n0,0,2.5,1\n2,0,3.5,\n"


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def write_plan(tmp_path, obj, name="plan.json"):
    return write(tmp_path, name, json.dumps(obj))


UNADJUSTED_PLAN = {
    "estimator": "unadjusted",
    "family": "gaussian",
    "data": {"outcome": "y", "arm": "z", "covariates": ["a", "b"]},
}


class TestAnalyze:
    def test_four_row_fixture(self, tmp_path, capsys):
        data = write(tmp_path, "trial.csv", FOUR_ROW_CSV)
        plan = write_plan(tmp_path, UNADJUSTED_PLAN)
        out = str(tmp_path / "report.json")
        assert main(["analyze", "--data", data, "--plan", plan, "--out", out]) == 0
        report = json.loads(open(out).read())
        assert report["estimate"]["theta_hat"] == 1.0
        assert report["schema_version"] == "1"
        assert report["n"] == 4 and report["n_treated"] == 2

    def test_byte_identical_reports(self, tmp_path):
        data = write(tmp_path, "trial.csv", FOUR_ROW_CSV)
        plan = write_plan(tmp_path, {
            "estimator": "crossfit_aipw",
            "family": "gaussian",
            "data": {"outcome": "y", "arm": "z", "covariates": ["a", "b"]},
            "folds": {"k": 2, "seed": 3, "stratified": True},
            "learner": {"name": "constant", "params": {}},
            "pi": {"mode": "known", "value": 0.5},
        })
        out1, out2 = str(tmp_path / "r1.json"), str(tmp_path / "r2.json")
        assert main(["analyze", "--data", data, "--plan", plan, "--out", out1]) == 0
        assert main(["analyze", "--data", data, "--plan", plan, "--out", out2]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_round_trip_echoed_plan(self, tmp_path):
        data = write(tmp_path, "trial.csv", FOUR_ROW_CSV)
        plan = write_plan(tmp_path, UNADJUSTED_PLAN)
        out1 = str(tmp_path / "r1.json")
        main(["analyze", "--data", data, "--plan", plan, "--out", out1])
        echoed = json.loads(open(out1).read())["plan"]
        plan2 = write_plan(tmp_path, echoed, name="echo.json")
        out2 = str(tmp_path / "r2.json")
        assert main(["analyze", "--data", data, "--plan", plan2, "--out", out2]) == 0
        a = json.loads(open(out1).read())["estimate"]
        b = json.loads(open(out2).read())["estimate"]
        assert a == b

    def test_missing_covariates_are_imputed(self, tmp_path):
        # one missing b cell per arm, so the indicator varies within arms
        csv_text = (
            "y,z,a,b\n"
            "1,1,0.5,\n3,1,1.5,0\n2,1,2.0,1\n4,1,0.8,1\n2,1,1.1,0\n"
            "0,0,2.5,1\n2,0,3.5,NA\n1,0,1.0,0\n3,0,0.3,1\n1,0,2.2,0\n"
        )
        data = write(tmp_path, "trial.csv", csv_text)
        plan = write_plan(tmp_path, {
            "estimator": "standardization",
            "family": "gaussian",
            "data": {"outcome": "y", "arm": "z", "covariates": ["a", "b"]},
        })
        out = str(tmp_path / "report.json")
        assert main(["analyze", "--data", data, "--plan", plan, "--out", out]) == 0
        report = json.loads(open(out).read())
        assert "b_missing" in report["estimate"]["diagnostics"]["columns"]

    def test_data_error_exit_3(self, tmp_path, capsys):
        data = write(tmp_path, "trial.csv", "y,z,a\n1,2,0\n2,0,1\n")
        plan = write_plan(tmp_path, {
            "estimator": "unadjusted",
            "data": {"outcome": "y", "arm": "z", "covariates": ["a"]},
        })
        code = main(["analyze", "--data", data, "--plan", plan, "--out", str(tmp_path / "o.json")])
        assert code == 3
        assert "data error" in capsys.readouterr().err

    def test_estimation_error_exit_4(self, tmp_path, capsys):
        # perfectly separating covariate: logistic ML does not exist
        rows = "\n".join(f"{z},{z},{z}" for z in (0, 0, 0, 1, 1, 1))
        data = write(tmp_path, "trial.csv", "y,z,a\n" + rows + "\n")
        plan = write_plan(tmp_path, {
            "estimator": "standardization",
            "family": "binomial",
            "data": {"outcome": "y", "arm": "z", "covariates": ["a"]},
        })
        code = main(["analyze", "--data", data, "--plan", plan, "--out", str(tmp_path / "o.json")])
        assert code == 4
        assert "estimation error" in capsys.readouterr().err

    def test_unknown_plan_key_exit_2(self, tmp_path, capsys):
        data = write(tmp_path, "trial.csv", FOUR_ROW_CSV)
        plan = write_plan(tmp_path, dict(UNADJUSTED_PLAN, bogus=1))
        code = main(["analyze", "--data", data, "--plan", plan, "--out", str(tmp_path / "o.json")])
        assert code == 2
        assert "bogus" in capsys.readouterr().err


class TestValidate:
    def test_valid_plan_exit_0(self, tmp_path, capsys):
        plan = write_plan(tmp_path, UNADJUSTED_PLAN)
        assert main(["validate", "--plan", plan]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["ok"] is True

    def test_k_one_names_the_field(self, tmp_path, capsys):
        plan = write_plan(tmp_path, {
            "estimator": "crossfit_aipw",
            "learner": {"name": "knn", "params": {}},
            "folds": {"k": 1, "seed": 0, "stratified": True},
        })
        assert main(["validate", "--plan", plan]) == 2
        assert "folds.k" in capsys.readouterr().err

    def test_positivity_violation(self, tmp_path, capsys):
        plan = write_plan(tmp_path, {
            "estimator": "unadjusted",
            "pi": {"mode": "known", "value": 0.001},
        })
        assert main(["validate", "--plan", plan]) == 2
        assert "positivity" in capsys.readouterr().err

    def test_eem_with_parametric_ps_refused(self, tmp_path, capsys):
        plan = write_plan(tmp_path, {
            "estimator": "data_adaptive",
            "eem": True,
            "pi": {"mode": "parametric", "ps_columns": ["a"]},
        })
        assert main(["validate", "--plan", plan]) == 2
        assert "eem" in capsys.readouterr().err.lower()


SIM_SPEC = {
    "dgp": {
        "name": "toy", "n": 40, "p": 2, "pi": 0.5,
        "outcome_kind": "continuous", "mechanism": "linear",
        "effect_size": 0.5, "noise_sd": 1.0,
    },
    "plan": {"estimator": "unadjusted", "family": "gaussian"},
    "replicates": 150,
    "master_seed": 99,
}


class TestSimulate:
    def test_threads_do_not_change_bytes(self, tmp_path):
        spec = write_plan(tmp_path, SIM_SPEC, name="spec.json")
        out1, out2 = str(tmp_path / "s1.json"), str(tmp_path / "s2.json")
        assert main(["simulate", "--spec", spec, "--out", out1, "--threads", "1"]) == 0
        assert main(["simulate", "--spec", spec, "--out", out2, "--threads", "3"]) == 0
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_env_var_threads(self, tmp_path, monkeypatch):
        spec = write_plan(tmp_path, SIM_SPEC, name="spec.json")
        out1, out2 = str(tmp_path / "s1.json"), str(tmp_path / "s2.json")
        main(["simulate", "--spec", spec, "--out", out1])
        monkeypatch.setenv("TRIALCRAFT_THREADS", "2")
        main(["simulate", "--spec", spec, "--out", out2])
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_report_reasonable(self, tmp_path):
        spec = write_plan(tmp_path, SIM_SPEC, name="spec.json")
        out = str(tmp_path / "s.json")
        main(["simulate", "--spec", spec, "--out", out])
        report = json.loads(open(out).read())["report"]
        assert report["replicates"] == 150
        assert abs(report["bias"]) < 5 * report["mc_se_of_bias"] + 1e-12
        assert 0.85 <= report["coverage_95"] <= 1.0

    def test_per_replicate_csv(self, tmp_path):
        spec = dict(SIM_SPEC)
        spec["per_replicate_csv"] = str(tmp_path / "reps.csv")
        path = write_plan(tmp_path, spec, name="spec.json")
        main(["simulate", "--spec", path, "--out", str(tmp_path / "s.json")])
        lines = open(tmp_path / "reps.csv").read().strip().splitlines()
        assert lines[0] == "replicate,seed,estimate,se"
        assert len(lines) == 151

    def test_null_dgp_rejection_near_nominal(self, tmp_path):
        spec = {
            "dgp": {"name": "null", "n": 80, "p": 2, "pi": 0.5,
                    "outcome_kind": "continuous", "mechanism": "null_effect",
                    "effect_size": 0.0, "noise_sd": 1.0},
            "plan": {"estimator": "standardization", "family": "gaussian"},
            "replicates": 400,
            "master_seed": 321,
        }
        path = write_plan(tmp_path, spec, name="spec.json")
        out = str(tmp_path / "s.json")
        assert main(["simulate", "--spec", path, "--out", out]) == 0
        report = json.loads(open(out).read())["report"]
        se_bin = math.sqrt(0.05 * 0.95 / 400)
        assert abs(report["rejection_rate"] - 0.05) <= 3 * se_bin

    def test_malformed_spec_exit_2(self, tmp_path, capsys):
        spec = write_plan(tmp_path, {"dgp": {"n": 40}}, name="spec.json")
        assert main(["simulate", "--spec", spec, "--out", str(tmp_path / "s.json")]) == 2

    def test_too_few_replicates_exit_2(self, tmp_path):
        spec = dict(SIM_SPEC, replicates=10)
        path = write_plan(tmp_path, spec, name="spec.json")
        assert main(["simulate", "--spec", path, "--out", str(tmp_path / "s.json")]) == 2

    def test_missing_file_exit_2(self, tmp_path):
        assert main(["simulate", "--spec", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "s.json")]) == 2


class TestUsage:
    def test_no_command_exits_2(self, capsys):
        assert main([]) == 2
