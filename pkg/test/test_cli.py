"""명령행 진입점: 종료 코드, 출력 파일 형식, 설정 우선순위"""
import json

import pandas as pd
import pytest
import yaml

from main import main


def read_csv(path):
    return pd.read_csv(path, comment="#")


def header(path):
    """CSV 머리의 '# key: value' 메타데이터"""
    meta = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].partition(": ")
            meta[key] = json.loads(value)
    return meta


class TestCommands:
    def test_price_square(self, tmp_path):
        out = tmp_path / "square.csv"
        assert main(["price-square", "--horizons", "0.5,1,2", "--out", str(out)]) == 0
        frame = read_csv(out)
        assert frame["T"].tolist() == [0.5, 1.0, 2.0]
        assert frame["price"].tolist() == pytest.approx([100.0, 100.0, 100.0], rel=1e-12)
        meta = header(out)
        assert meta["command"] == "price-square"
        assert meta["tool"] == "turnpike-lab"

    def test_price_square_json(self, tmp_path):
        out = tmp_path / "square.json"
        assert main(["price-square", "--s0", "3", "--format", "json", "--out", str(out)]) == 0
        payload = json.loads(out.read_text(encoding="utf-8"))
        assert payload["rows"][0]["price"] == pytest.approx(9.0, rel=1e-12)
        assert payload["metadata"]["config"]["s0"] == 3.0

    def test_replicate(self, tmp_path):
        out = tmp_path / "replicate.csv"
        assert main(["replicate", "--n-strikes", "2000", "--out", str(out)]) == 0
        frame = read_csv(out)
        assert list(frame.columns) == ["x", "value", "target", "rel_error"]
        assert frame["rel_error"].max() < 1e-3
        assert header(out)["max_rel_error"] == pytest.approx(frame["rel_error"].max(), rel=1e-12)

    def test_robustness_columns(self, tmp_path):
        out = tmp_path / "robustness.csv"
        assert main(["robustness", "--horizons", "10,20", "--workers", "2", "--out", str(out)]) == 0
        frame = read_csv(out)
        assert list(frame.columns) == [
            "T", "ce_opt", "ce_iso", "ratio", "quad_err", "rate_opt", "rate_iso", "multiplier_ratio", "mc_stderr"
        ]
        assert (frame["ratio"] < 1.0).all()

    def test_incentives_power_descriptor(self, tmp_path):
        out = tmp_path / "gamma.csv"
        argv = ["incentives", "--utility", "power-incentive:p=-1,alpha=0.8", "--horizons", "10", "--out", str(out)]
        assert main(argv) == 0
        frame = read_csv(out)
        assert frame["gamma_star"].tolist() == pytest.approx([1.8])
        assert frame["rel_error"].max() < 1e-8

    def test_counterexample(self, tmp_path):
        out = tmp_path / "collapse.csv"
        assert main(["counterexample", "--horizons", "10,25", "--out", str(out)]) == 0
        frame = read_csv(out)
        assert list(frame.columns) == [
            "T", "ratio", "lowwealth_ratio_closed_form", "exponent", "ce_opt", "ce_iso", "utility_ratio", "quad_err"
        ]
        assert frame["T"].tolist() == [10.0, 25.0]
        assert frame["exponent"].tolist() == pytest.approx([0.02, 0.02])
        assert frame["ratio"].iloc[1] < frame["ratio"].iloc[0] < 1.0
        meta = header(out)
        assert meta["restriction"]["satisfied"] is True
        assert meta["exponent"] == pytest.approx(0.02)

    def test_incentives_grant_descriptor(self, tmp_path):
        out = tmp_path / "grant.csv"
        argv = ["incentives", "--utility", "incentive:p=-1,c1=1,c2=2,legs=3@4", "--horizons", "5,10",
                "--workers", "2", "--out", str(out)]
        assert main(argv) == 0
        frame = read_csv(out)
        assert list(frame.columns) == ["T", "ce_plain", "ce_incentivized", "premium", "ce_private_plain", "quad_err"]
        assert (frame["premium"] >= -1e-8).all()
        assert header(out)["contract"]["legs"] == [{"quantity": 3.0, "strike": 4.0}]

    def test_validate_two_piece(self, tmp_path):
        out = tmp_path / "validate.json"
        assert main(["validate", "--out", str(out)]) == 0
        report = json.loads(out.read_text(encoding="utf-8"))["report"]
        assert report["lowwealth_ok"] is False
        assert report["analytic_lowwealth_verdict"] is False
        table = read_csv(tmp_path / "validate_table.csv")
        assert list(table.columns) == ["x", "utility"]

    def test_validate_incentive_has_envelope_column(self, tmp_path):
        out = tmp_path / "validate.json"
        argv = ["validate", "--utility", "incentive:p=0.5,c1=1,c2=2,legs=3@4", "--out", str(out)]
        assert main(argv) == 0
        report = json.loads(out.read_text(encoding="utf-8"))["report"]
        assert len(report["bridges"]) == 1
        table = read_csv(tmp_path / "validate_table.csv")
        assert (table["envelope"] >= table["utility"] - 1e-12).all()


class TestDeterminism:
    def test_same_inputs_same_bytes(self, tmp_path):
        out = tmp_path / "run.csv"
        argv = ["robustness", "--horizons", "10,20,30", "--workers", "3", "--out", str(out)]
        assert main(argv) == 0
        first = out.read_bytes()
        assert main(argv) == 0
        assert out.read_bytes() == first

    def test_monte_carlo_same_seed_same_bytes(self, tmp_path):
        out = tmp_path / "mc.csv"
        argv = ["robustness", "--horizons", "10", "--method", "montecarlo", "--paths", "5000",
                "--seed", "3", "--out", str(out)]
        assert main(argv) == 0
        first = out.read_bytes()
        assert main(argv) == 0
        assert out.read_bytes() == first
        assert header(out)["seed"] == 3


class TestExitCodes:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 64

    def test_bad_horizon_list(self, tmp_path):
        assert main(["price-square", "--horizons", "a,b", "--out", str(tmp_path / "x.csv")]) == 64

    def test_too_few_nodes(self, tmp_path):
        assert main(["price-square", "--nodes", "5", "--out", str(tmp_path / "x.csv")]) == 2

    def test_infeasible_bridge(self, tmp_path):
        argv = ["validate", "--utility", "twopiece:p=-1,pstar=-3,xhi=4", "--out", str(tmp_path / "v.json")]
        assert main(argv) == 2

    def test_unknown_utility_kind(self, tmp_path):
        argv = ["validate", "--utility", "quadratic:p=1", "--out", str(tmp_path / "v.json")]
        assert main(argv) == 2

    def test_restriction_fails(self, tmp_path):
        assert main(["counterexample", "--r", "0.03", "--out", str(tmp_path / "c.csv")]) == 2

    def test_convex_effective_utility(self, tmp_path):
        argv = ["incentives", "--utility", "power-incentive:p=0.5,alpha=2", "--horizons", "10",
                "--out", str(tmp_path / "g.csv")]
        assert main(argv) == 3

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "not_a_dir"
        blocker.write_text("x", encoding="utf-8")
        assert main(["price-square", "--out", str(blocker / "out.csv")]) == 74


class TestExperimentFile:
    def test_file_then_flags(self, tmp_path):
        experiment = tmp_path / "exp.yaml"
        experiment.write_text(yaml.safe_dump({
            "command": "price-square",
            "market": {"sigma": 0.3},
            "s0": 5.0,
            "horizons": [1.0, 2.0],
        }), encoding="utf-8")
        out = tmp_path / "square.csv"
        assert main(["price-square", "--config", str(experiment), "--out", str(out)]) == 0
        frame = read_csv(out)
        assert frame["sigma"].tolist() == [0.3, 0.3]
        assert frame["price"].tolist() == pytest.approx([25.0, 25.0], rel=1e-12)

        assert main(["price-square", "--config", str(experiment), "--s0", "4", "--out", str(out)]) == 0
        assert read_csv(out)["price"].tolist() == pytest.approx([16.0, 16.0], rel=1e-12)
        assert header(out)["config"]["market"]["mu"] == 0.08

    def test_metadata_config_reproduces_rows(self, tmp_path):
        first = tmp_path / "first.csv"
        assert main(["robustness", "--horizons", "10,20", "--mu", "0.07", "--out", str(first)]) == 0
        recorded = header(first)["config"]
        experiment = tmp_path / "recorded.yaml"
        experiment.write_text(yaml.safe_dump(recorded), encoding="utf-8")

        second = tmp_path / "second.csv"
        assert main(["robustness", "--config", str(experiment), "--out", str(second)]) == 0
        pd.testing.assert_frame_equal(read_csv(first), read_csv(second))
        replayed = header(second)["config"]
        assert {k: v for k, v in replayed.items() if k != "out"} == {k: v for k, v in recorded.items() if k != "out"}

    def test_command_mismatch(self, tmp_path):
        experiment = tmp_path / "exp.yaml"
        experiment.write_text(yaml.safe_dump({"command": "robustness"}), encoding="utf-8")
        assert main(["price-square", "--config", str(experiment), "--out", str(tmp_path / "x.csv")]) == 2

    def test_unknown_key(self, tmp_path):
        experiment = tmp_path / "exp.yaml"
        experiment.write_text(yaml.safe_dump({"nodez": 40}), encoding="utf-8")
        assert main(["price-square", "--config", str(experiment), "--out", str(tmp_path / "x.csv")]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["price-square", "--config", str(tmp_path / "nope.yaml")]) == 2
