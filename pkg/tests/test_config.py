from __future__ import annotations

import json

import pytest

from slugmpc import ConfigError
from slugmpc.config import dump_config, from_mapping, load_config, resolve_seed
from slugmpc.harness import ScenarioConfig
from slugmpc.mpc import MpcConfig
from slugmpc.plant import PlantConfig
from slugmpc.surrogate import SurrogateConfig

def test_unknown_key_names_the_field() -> None:
    with pytest.raises(ConfigError) as info:
        from_mapping(MpcConfig, {"horizn": 5})
    assert info.value.field == "horizn"
    assert str(info.value).startswith("horizn: ")

def test_values_are_coerced() -> None:
    config = from_mapping(MpcConfig, {"horizon": 5.0, "lower": [1e-7, 1e-7, 1e-5], "d90_max": 1})
    assert config.horizon == 5 and isinstance(config.horizon, int)
    assert config.lower == (1e-7, 1e-7, 1e-5)
    assert config.d90_max == 1.0 and isinstance(config.d90_max, float)
    assert from_mapping(MpcConfig, {"m": None}).m is None

@pytest.mark.parametrize("data, field", [
    ({"horizon": 2.5}, "horizon"),
    ({"gamma1": True}, "gamma1"),
    ({"mode": 3}, "mode"),
    ({"lower": 1.0}, "lower"),
    ({"horizon": 1}, "horizon"),
])
def test_bad_values(data: dict, field: str) -> None:
    with pytest.raises(ConfigError) as info:
        from_mapping(MpcConfig, data)
    assert info.value.field == field

def test_nested_dataclasses() -> None:
    config = from_mapping(SurrogateConfig, {"train": {"epochs": 7}, "hidden": [5, 5]})
    assert config.train.epochs == 7
    assert config.hidden == (5, 5)
    plant = from_mapping(PlantConfig, {"sim": {"n_cells": 20}})
    assert plant.sim.n_cells == 20 and plant.params == PlantConfig().params

def test_load_with_overrides(tmp_path) -> None:
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps({"steps": 10, "name": "file"}), encoding="utf-8")
    config = load_config(ScenarioConfig, path, {"steps": 20, "name": None})
    assert (config.steps, config.name) == (20, "file")
    assert load_config(ScenarioConfig) == ScenarioConfig()

@pytest.mark.parametrize("text", ["{", "[1, 2]"])
def test_load_rejects_bad_files(tmp_path, text: str) -> None:
    path = tmp_path / "bad.json"
    path.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        load_config(ScenarioConfig, path)
    assert info.value.field == "config"
    with pytest.raises(ConfigError):
        load_config(ScenarioConfig, tmp_path / "missing.json")

def test_dump_round_trip() -> None:
    config = SurrogateConfig(kind="bll", hidden=(12, 6))
    text = dump_config(config)
    data = json.loads(text)
    assert list(data) == sorted(data)
    assert from_mapping(SurrogateConfig, data) == config

def test_seed_precedence(monkeypatch) -> None:
    monkeypatch.delenv("SFC_SEED", raising=False)
    assert resolve_seed(None) == 0
    monkeypatch.setenv("SFC_SEED", "17")
    assert resolve_seed(None) == 17
    assert resolve_seed(None, 4) == 4
    assert resolve_seed(2, 4) == 2
    monkeypatch.setenv("SFC_SEED", "seventeen")
    with pytest.raises(ConfigError) as info:
        resolve_seed(None)
    assert info.value.field == "SFC_SEED"
