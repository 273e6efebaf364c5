from __future__ import annotations

import json

import pandas as pd
import pytest
from conftest import synthetic_trajectory

from slugmpc import ConfigError
from slugmpc.cli import RunConfig, dispatch, main
from slugmpc.plant import write_trajectory
from slugmpc.surrogate import load_surrogate

@pytest.fixture
def plant_file(tmp_path):
    path = tmp_path / "plant.json"
    path.write_text(json.dumps({"sim": {"n_cells": 24}}), encoding="utf-8")
    return path

@pytest.mark.parametrize("argv", [["bogus"], ["simulate", "--nope"], ["case-study", "3"], []])
def test_usage_errors_exit_2(argv: list[str]) -> None:
    assert main(argv) == 2

def test_config_errors_exit_2(tmp_path, capsys) -> None:
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sim": {"n_cells": 24, "dtt": 1.0}}), encoding="utf-8")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path), "-q"]) == 2
    assert "dtt" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path), "-q"]) == 2
    assert main(["simulate", "--steps", "0", "--out", str(tmp_path), "-q"]) == 2
    assert not (tmp_path / "runs").exists()

def test_simulate(tmp_path, plant_file) -> None:
    code = main(["simulate", "--steps", "2", "--q-pm", "2e-7", "--config", str(plant_file),
                 "--out", str(tmp_path), "-q"])
    assert code == 0
    directory = tmp_path / "runs" / "simulate"
    frame = pd.read_csv(directory / "trajectory.csv")
    assert len(frame) == 2
    assert frame["Q_PM"].tolist() == [2e-7, 2e-7]
    assert json.loads((directory / "plant.json").read_text(encoding="utf-8"))["sim"]["n_cells"] == 24

def test_gen_data(tmp_path, plant_file) -> None:
    policy = tmp_path / "excitation.json"
    policy.write_text(json.dumps({"warmup": 100.0}), encoding="utf-8")
    code = main(["gen-data", "--samples", "3", "--config", str(policy), "--plant", str(plant_file),
                 "--seed", "5", "--out", str(tmp_path), "-q"])
    assert code == 0
    assert len(pd.read_csv(tmp_path / "data" / "run_000.csv")) == 3
    saved = json.loads((tmp_path / "data" / "excitation.json").read_text(encoding="utf-8"))
    assert saved["seed"] == 5 and saved["warmup"] == 100.0

def test_train_then_control(tmp_path, plant_file) -> None:
    data = tmp_path / "data"
    data.mkdir()
    write_trajectory(synthetic_trajectory(60, seed=3), data / "run_000.csv")
    surrogate = tmp_path / "surrogate.json"
    surrogate.write_text(json.dumps({"kind": "nn", "lag": 1, "hidden": [4],
                                     "train": {"epochs": 2, "batch_size": 0, "patience": 2}}), encoding="utf-8")
    assert main(["train", "--config", str(surrogate), "--seed", "2", "--out", str(tmp_path), "-q"]) == 0
    artifact = tmp_path / "models" / "nn.json"
    model, metadata = load_surrogate(artifact)
    assert model.kind == "nn" and model.layout.lag == 1
    assert metadata["seed"] == 2
    assert set(metadata["evaluation"]) == {"prediction", "simulation"}

    controller = tmp_path / "controller.json"
    controller.write_text(json.dumps({"horizon": 3, "max_iter": 5}), encoding="utf-8")
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps({"warmup": 100.0, "w_step": 1}), encoding="utf-8")
    code = main(["control", "--model", str(artifact), "--config", str(controller), "--scenario", str(scenario),
                 "--plant", str(plant_file), "--steps", "2", "--name", "cl", "--out", str(tmp_path), "-q"])
    assert code == 0
    report = json.loads((tmp_path / "runs" / "cl" / "report.json").read_text(encoding="utf-8"))
    assert (report["name"], report["mode"], report["steps"]) == ("cl", "nominal", 2)

def test_report(tmp_path, capsys) -> None:
    assert main(["report", "--out", str(tmp_path), "-q"]) == 1
    run = tmp_path / "runs" / "a"
    run.mkdir(parents=True)
    (run / "report.json").write_text(json.dumps({"name": "a", "violation_pct": 10.0}), encoding="utf-8")
    assert main(["report", "--out", str(tmp_path), "-q"]) == 0
    assert pd.read_csv(tmp_path / "summary.csv")["violation_pct"].tolist() == [10.0]
    assert "violation_pct" in capsys.readouterr().out

def test_run_config_resolves_relative_paths(tmp_path, plant_file) -> None:
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"plant": "plant.json", "seed": 3}), encoding="utf-8")
    config = RunConfig.load(str(run))
    assert config.plant == str(plant_file) and config.seed == 3
    run.write_text(json.dumps({"scenario": "nowhere.json"}), encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        RunConfig.load(str(run))
    assert info.value.field == "scenario"

def test_run_config_seed_applies(tmp_path, plant_file) -> None:
    run = tmp_path / "run.json"
    run.write_text(json.dumps({"plant": "plant.json", "seed": 9, "out": str(tmp_path / "o")}), encoding="utf-8")
    assert main(["gen-data", "--samples", "2", "--run", str(run), "-q"]) == 0
    saved = json.loads((tmp_path / "o" / "data" / "excitation.json").read_text(encoding="utf-8"))
    assert saved["seed"] == 9

def test_dispatch_maps_errors_to_exit_codes(tmp_path, capsys) -> None:
    assert dispatch(["report", "--out", str(tmp_path), "-q"]) == 1
    assert capsys.readouterr().err.startswith("error: no run reports")
    with pytest.raises(SystemExit):
        dispatch(["simulate", "--steps", "x"])

def test_unwritable_output_exits_1(tmp_path, plant_file, capsys) -> None:
    blocked = tmp_path / "blocked"
    blocked.write_text("", encoding="utf-8")
    code = main(["simulate", "--steps", "2", "--config", str(plant_file), "--out", str(blocked), "-q"])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: cannot write")
