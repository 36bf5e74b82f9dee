import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

import main
from core.simulation.dgp import gen_dgp1

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    sample = gen_dgp1(200, 8, seed=4).sample
    frame = pd.DataFrame(sample.x, columns=[f"x{j + 1}" for j in range(sample.p)])
    frame.insert(0, "d", sample.d.astype(int))
    frame.insert(0, "y", sample.y)
    frame.to_csv(root / "data.csv", index=False)
    return root


def _write_config(directory: Path, name: str = "estimate.yaml", **overrides) -> Path:
    config = {
        "input": "data.csv",
        "outcome": "y",
        "treatment": "d",
        "conditioning": ["x1"],
        "B": 50,
        "alphas": [0.1, 0.05],
        "grid": {"points": 21, "lower": [-1.0], "upper": [1.0]},
        "seed": 7,
    }
    config.update(overrides)
    path = directory / name
    if path.suffix == ".json":
        path.write_text(json.dumps(config))
    else:
        path.write_text(yaml.safe_dump(config))
    return path


def _keys(document: dict) -> set[str]:
    found = set()
    for key, value in document.items():
        found.add(key)
        if key in ("bands", "metadata"):
            child = value[0] if isinstance(value, list) else value
            found |= {f"{key}.{k}" for k in child}
    return found


class TestEstimate:
    @pytest.fixture(scope="class")
    def first_run(self, workspace):
        config = _write_config(workspace)
        code = main.run(["estimate", "--config", str(config), "--output", str(workspace / "out1"), "--threads", "1"])
        return code, workspace / "out1"

    def test_succeeds_and_writes_artifacts(self, first_run):
        code, out = first_run
        assert code == 0
        assert (out / "estimate.json").is_file()
        assert (out / "estimate.csv").is_file()

    def test_json_layout(self, first_run):
        _, out = first_run
        document = json.loads((out / "estimate.json").read_text())
        expected = set((GOLDEN / "estimate_keys.txt").read_text().split())
        assert _keys(document) == expected
        assert len(document["tau"]) == 21
        assert [band["alpha"] for band in document["bands"]] == [0.1, 0.05]
        assert document["metadata"]["seed"] == 7
        assert document["metadata"]["method"] == "cross_fit"

    def test_csv_layout(self, first_run):
        _, out = first_run
        frame = pd.read_csv(out / "estimate.csv")
        expected = (GOLDEN / "estimate_columns.txt").read_text().strip().split(",")
        assert list(frame.columns) == expected
        assert len(frame) == 21
        assert frame["x1"].iloc[0] == pytest.approx(-1.0)
        assert frame["x1"].iloc[-1] == pytest.approx(1.0)

    def test_bands_bracket_the_estimate(self, first_run):
        _, out = first_run
        frame = pd.read_csv(out / "estimate.csv")
        for suffix in ("a0.1", "a0.05"):
            assert np.all(frame[f"uni_lo_{suffix}"] <= frame["tau"])
            assert np.all(frame["tau"] <= frame[f"uni_hi_{suffix}"])
        assert np.all(frame["uni_lo_a0.05"] <= frame["uni_lo_a0.1"])

    def test_rerun_is_byte_identical(self, workspace, first_run):
        _, out = first_run
        config = _write_config(workspace)
        assert main.run(["estimate", "--config", str(config), "--output", str(workspace / "out2"), "--threads", "3"]) == 0
        for name in ("estimate.json", "estimate.csv"):
            assert (workspace / "out2" / name).read_bytes() == (out / name).read_bytes()

    def test_seed_override(self, workspace, first_run):
        _, out = first_run
        config = _write_config(workspace)
        code = main.run(
            ["estimate", "--config", str(config), "--output", str(workspace / "out3"), "--seed", "8", "--threads", "1"]
        )
        assert code == 0
        document = json.loads((workspace / "out3" / "estimate.json").read_text())
        assert document["metadata"]["seed"] == 8
        assert (workspace / "out3" / "estimate.json").read_bytes() != (out / "estimate.json").read_bytes()

    def test_json_config_and_full_sample(self, workspace):
        config = _write_config(workspace, "estimate.json", method="full_sample", second_stage="local_constant")
        assert main.run(["estimate", "--config", str(config), "--threads", "1"]) == 0
        document = json.loads((workspace / "results" / "estimate.json").read_text())
        assert document["metadata"]["folds"] == 1
        assert all(value is None for row in document["slope"] for value in row)


class TestExitCodes:
    def test_missing_option_is_a_usage_error(self):
        assert main.run(["estimate"]) == 1

    def test_missing_config_file(self, tmp_path):
        assert main.run(["estimate", "--config", str(tmp_path / "absent.yaml")]) == 1

    def test_invalid_config_values(self, workspace, tmp_path):
        config = _write_config(tmp_path, B=0, alphas=[1.5], input=str(workspace / "data.csv"))
        assert main.run(["estimate", "--config", str(config)]) == 1

    def test_outcome_listed_as_covariate(self, workspace, tmp_path):
        config = _write_config(tmp_path, covariates=["x2", "y"], input=str(workspace / "data.csv"))
        assert main.run(["estimate", "--config", str(config)]) == 1

    def test_missing_input_file(self, tmp_path):
        config = _write_config(tmp_path)
        assert main.run(["estimate", "--config", str(config)]) == 1

    def test_bad_data(self, workspace, tmp_path):
        frame = pd.read_csv(workspace / "data.csv")
        frame.loc[0, "d"] = 3
        frame.to_csv(tmp_path / "data.csv", index=False)
        config = _write_config(tmp_path)
        assert main.run(["estimate", "--config", str(config), "--threads", "1"]) == 2

    def test_grid_without_data_is_numerical(self, workspace, tmp_path):
        config = _write_config(
            tmp_path,
            input=str(workspace / "data.csv"),
            grid={"points": 5, "lower": [50.0], "upper": [60.0]},
            B=5,
        )
        assert main.run(["estimate", "--config", str(config), "--threads", "1"]) == 3


def test_simulate_smoke(tmp_path):
    config = tmp_path / "simulate.yaml"
    config.write_text(
        yaml.safe_dump(
            {
                "experiment": {
                    "dgp": {"design": "strict_sparse", "n": 60, "p": 8},
                    "replications": 1,
                    "B": 1,
                    "grid": {"points": 11},
                    "root_seed": 3,
                },
                "output": "mc",
                "checkpoint": str(tmp_path / "ckpt" / "run.ckpt"),
            }
        )
    )
    assert main.run(["simulate", "--config", str(config), "--threads", "1"]) == 0
    report = json.loads((tmp_path / "mc" / "report.json").read_text())
    assert report["replications"] == 1
    assert report["successful"] + report["failed"] == 1
    assert "Uniform band coverage" in (tmp_path / "mc" / "report.txt").read_text()
    assert (tmp_path / "ckpt" / "run.ckpt").is_file()


def test_simulate_rejects_invalid_experiment(tmp_path):
    config = tmp_path / "simulate.yaml"
    config.write_text(yaml.safe_dump({"experiment": {"replications": 0, "B": 0}}))
    assert main.run(["simulate", "--config", str(config)]) == 1
