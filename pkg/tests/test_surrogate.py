from __future__ import annotations

import json
import math

import numpy as np
import pytest
from conftest import identity_normalizer, synthetic_trajectory

from slugmpc import CalibrationError, ConfigError, DatasetError
from slugmpc.bll import BllModel
from slugmpc.narx import NarxLayout, SplitConfig, build_narx_dataset
from slugmpc.network import MlpModel, TrainConfig
from slugmpc.surrogate import (BllSurrogate, CqrSurrogate, NnSurrogate, Surrogate, SurrogateConfig,
                               conformal_offset, conformalize, conformity_scores, cqr_predict, evaluate,
                               load_surrogate, min_calibration_size, save_surrogate, train_surrogate)

LAYOUT = NarxLayout(lag=1)

def constant_net(value: float, n_in: int = LAYOUT.n_features, n_out: int = 6) -> MlpModel:
    return MlpModel([np.zeros((n_in, n_out))], [np.full(n_out, value)])

def shifted_net(rng: np.random.Generator, bias: float) -> MlpModel:
    net = MlpModel.init((LAYOUT.n_features, 5, 6), rng)
    net.weights[-1] *= 0.1
    net.biases[-1][:] = bias
    return net

def random_bll(rng: np.random.Generator) -> BllModel:
    net = MlpModel.init((LAYOUT.n_features, 5, 6), rng)
    mean = rng.normal(size=(6, 6))
    root = rng.normal(size=(6, 6, 6)) * 0.3
    cov = np.einsum("jab,jcb->jac", root, root)
    return BllModel(net, mean, cov, np.full(6, 0.01), 1.0)

def numeric_vjp(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        step = np.zeros_like(x)
        step[i] = h
        g[i] = (f(x + step) - f(x - step)) / (2 * h)
    return g

@pytest.fixture(scope="module")
def dataset():
    frames = [synthetic_trajectory(300, seed=1), synthetic_trajectory(300, seed=2)]
    return build_narx_dataset(frames, NarxLayout(lag=2), seed=0)

@pytest.fixture(scope="module")
def trained(dataset) -> dict[str, Surrogate]:
    train = TrainConfig(epochs=30, batch_size=64, learning_rate=3e-3)
    return {
        kind: train_surrogate(dataset, SurrogateConfig(kind=kind, lag=2, hidden=(32,), quantile_hidden=(8,),
                                                       train=train, seed=4))
        for kind in ("nn", "cqr", "bll")
    }

def test_conformity_score_signs() -> None:
    scores = conformity_scores(np.zeros(3), np.ones(3), np.array([0.5, 1.5, -0.2]))
    np.testing.assert_allclose(scores, [-0.5, 0.5, 0.2])

@pytest.mark.parametrize("alpha, expected", [(0.05, 20.0), (0.1, 19.0), (0.5, 11.0)])
def test_conformal_offset_rank(alpha: float, expected: float) -> None:
    scores = np.arange(1.0, 21.0)
    assert conformal_offset(scores, alpha)[0] == expected

def test_conformal_offset_per_column() -> None:
    scores = np.column_stack((np.arange(1.0, 21.0), -np.arange(1.0, 21.0)))
    np.testing.assert_array_equal(conformal_offset(scores, 0.1), [19.0, -2.0])

def test_calibration_size_errors() -> None:
    with pytest.raises(CalibrationError) as info:
        conformal_offset(np.zeros(19), 0.05)
    assert (info.value.n, info.value.required) == (19, 20)
    with pytest.raises(CalibrationError) as info:
        conformal_offset(np.zeros(20), 0.01)
    assert info.value.required == 99
    assert min_calibration_size(0.05) == 20
    with pytest.raises(ConfigError):
        conformal_offset(np.zeros(30), 0.0)

def test_conformalized_interval_covers_calibration_set() -> None:
    rng = np.random.default_rng(3)
    x = rng.normal(size=(200, LAYOUT.n_features))
    y = rng.normal(size=(200, 6))
    raw = CqrSurrogate(LAYOUT, identity_normalizer(), constant_net(-0.1), constant_net(0.0),
                       constant_net(0.1), alpha=0.1)
    cqr = conformalize(raw, x, y)
    assert cqr.offsets.shape == (6,)
    iv = cqr_predict(cqr, x)
    inside = (y >= iv.lo) & (y <= iv.up)
    assert np.all(inside.mean(axis=0) >= 0.9)
    fresh = rng.normal(size=(4000, 6))
    iv = cqr.predict(rng.normal(size=(4000, LAYOUT.n_features)))
    coverage = np.mean((fresh >= iv.lo) & (fresh <= iv.up))
    assert 0.85 < coverage < 0.96

def test_conformalized_interval_covers_heteroscedastic_noise() -> None:
    rng = np.random.default_rng(9)
    scale = 2.0 ** np.arange(6)

    def draw(n: int) -> tuple[np.ndarray, np.ndarray]:
        x = rng.normal(size=(n, LAYOUT.n_features))
        return x, scale * np.abs(x[:, :1]) * rng.normal(size=(n, 6))

    raw = CqrSurrogate(LAYOUT, identity_normalizer(), constant_net(-0.1), constant_net(0.0),
                       constant_net(0.1), alpha=0.1)
    cqr = conformalize(raw, *draw(500))
    assert np.all(np.diff(cqr.offsets) > 0)
    x, y = draw(8000)
    iv = cqr.predict(x)
    inside = (y >= iv.lo) & (y <= iv.up)
    assert np.all(inside.mean(axis=0) > 0.85)
    assert 0.87 < inside.mean() < 0.94
    # marginal only: wide where the noise is small, short where it is large
    quiet = np.abs(x[:, 0]) < 0.5
    loud = np.abs(x[:, 0]) > 1.5
    assert inside[quiet].mean() > inside[loud].mean()

def test_crossing_heads_are_sorted() -> None:
    cqr = CqrSurrogate(LAYOUT, identity_normalizer(), constant_net(1.0), constant_net(0.0),
                       constant_net(-1.0), alpha=0.1)
    iv = cqr.predict(np.zeros((2, LAYOUT.n_features)))
    np.testing.assert_array_equal(iv.lo, -1.0)
    np.testing.assert_array_equal(iv.mid, 0.0)
    np.testing.assert_array_equal(iv.up, 1.0)

def test_nn_interval_has_zero_width(rng: np.random.Generator) -> None:
    model = NnSurrogate(LAYOUT, identity_normalizer(), MlpModel.init((LAYOUT.n_features, 4, 6), rng))
    iv = model.predict(rng.normal(size=(3, LAYOUT.n_features)))
    np.testing.assert_array_equal(iv.lo, iv.mid)
    np.testing.assert_array_equal(iv.up, iv.mid)
    assert isinstance(model, Surrogate)

def test_bll_interval_is_symmetric(rng: np.random.Generator) -> None:
    model = BllSurrogate(LAYOUT, identity_normalizer(), random_bll(rng), m=3.0)
    iv = model.predict(rng.normal(size=(5, LAYOUT.n_features)))
    np.testing.assert_allclose(iv.up - iv.mid, iv.mid - iv.lo)
    assert np.all(iv.up - iv.mid >= 3.0 * 0.1 * (1 - 1e-12))

def surrogates(rng: np.random.Generator) -> list[Surrogate]:
    norm = identity_normalizer()
    return [
        NnSurrogate(LAYOUT, norm, MlpModel.init((LAYOUT.n_features, 5, 6), rng)),
        CqrSurrogate(LAYOUT, norm, shifted_net(rng, -1.0), shifted_net(rng, 0.0), shifted_net(rng, 1.0),
                     alpha=0.1, offsets=np.full(6, 0.2)),
        BllSurrogate(LAYOUT, norm, random_bll(rng), m=2.0),
    ]

@pytest.mark.parametrize("index", [0, 1, 2], ids=["nn", "cqr", "bll"])
def test_interval_vjp_matches_finite_differences(index: int) -> None:
    rng = np.random.default_rng(21)
    model = surrogates(rng)[index]
    x = rng.normal(size=(3, LAYOUT.n_features))
    w = rng.normal(size=(3, 3, 6))
    iv, vjp = model.predict_vjp(x)

    def f(z: np.ndarray) -> float:
        return float(sum(np.sum(wi * v) for wi, v in zip(w, model.predict(z))))

    np.testing.assert_allclose(vjp(*w), numeric_vjp(f, x), rtol=1e-5, atol=1e-7)

@pytest.mark.parametrize("index", [0, 1, 2], ids=["nn", "cqr", "bll"])
def test_mean_vjp_matches_finite_differences(index: int) -> None:
    rng = np.random.default_rng(22)
    model = surrogates(rng)[index]
    x = rng.normal(size=(2, LAYOUT.n_features))
    w = rng.normal(size=(2, 6))
    mean, vjp = model.mean_vjp(x)
    np.testing.assert_allclose(mean, model.predict(x).mid)
    g = numeric_vjp(lambda z: float(np.sum(w * model.mean_vjp(z)[0])), x)
    np.testing.assert_allclose(vjp(w), g, rtol=1e-5, atol=1e-7)

@pytest.mark.parametrize("changes", [{"kind": "gp"}, {"alpha": 1.0}, {"m": -1.0}, {"hidden": (0,)},
                                     {"quantile_hidden": (4.5,)}])
def test_surrogate_config_validation(changes: dict) -> None:
    with pytest.raises(ConfigError):
        SurrogateConfig(**changes)

def test_training_requires_matching_layout(dataset) -> None:
    with pytest.raises(ConfigError):
        train_surrogate(dataset, SurrogateConfig(kind="nn", lag=4))

def test_trained_kinds(trained: dict[str, Surrogate], dataset) -> None:
    assert [m.kind for m in trained.values()] == ["nn", "cqr", "bll"]
    cqr = trained["cqr"]
    assert isinstance(cqr, CqrSurrogate)
    x_cal, y_cal = dataset.subset("cal")
    iv = cqr.predict(x_cal)
    inside = (y_cal >= iv.lo) & (y_cal <= iv.up)
    assert np.all(inside.mean(axis=0) >= 0.95)

def test_small_calibration_split_is_rejected() -> None:
    data = build_narx_dataset([synthetic_trajectory(40)], NarxLayout(lag=4))
    config = SurrogateConfig(kind="cqr", quantile_hidden=(4,), train=TrainConfig(epochs=2))
    with pytest.raises(CalibrationError):
        train_surrogate(data, config)

@pytest.mark.parametrize("kind", ["nn", "cqr", "bll"])
def test_evaluate_prediction_mode(kind: str, trained: dict[str, Surrogate], dataset) -> None:
    report = evaluate(trained[kind], dataset)
    assert report.mode == "prediction"
    assert report.n == dataset.splits["test"].size
    assert len(report.channel_mse) == len(report.channel_coverage) == 6
    assert math.isfinite(report.mse)
    assert report.mse == pytest.approx(np.mean(report.channel_mse))
    if kind == "nn":
        assert report.coverage == 0.0
    elif kind == "cqr":
        assert 0.8 < report.coverage <= 1.0
    else:
        assert 0.3 < report.coverage <= 1.0

def test_evaluate_simulation_mode(trained: dict[str, Surrogate], dataset) -> None:
    report = evaluate(trained["cqr"], dataset, "simulation")
    assert report.mode == "simulation"
    assert not report.diverged
    assert report.n == sum(len(seg) for seg in dataset.test_segments)
    assert report.band is not None
    assert len(report.band) == report.n
    assert {"segment", "step", "d50", "d50_lo", "d50_mid", "d50_up"} <= set(report.band.columns)
    assert np.all(report.band["d50_lo"] <= report.band["d50_up"])

def test_evaluate_errors(trained: dict[str, Surrogate], dataset) -> None:
    with pytest.raises(DatasetError):
        evaluate(trained["nn"], dataset, "smoothing")  # type: ignore[arg-type]
    no_test = build_narx_dataset([synthetic_trajectory(60)], NarxLayout(lag=2), SplitConfig(test_fraction=0.0))
    with pytest.raises(DatasetError):
        evaluate(trained["nn"], no_test)

@pytest.mark.parametrize("kind", ["nn", "cqr", "bll"])
def test_save_and_load(kind: str, trained: dict[str, Surrogate], dataset, tmp_path) -> None:
    path = tmp_path / f"{kind}.json"
    save_surrogate(trained[kind], path, {"seed": 4, "digest": dataset.digest})
    model, metadata = load_surrogate(path)
    assert metadata == {"seed": 4, "digest": dataset.digest}
    assert model.kind == kind
    assert model.layout == dataset.layout
    x, _ = dataset.subset("test")
    for a, b in zip(model.predict(x), trained[kind].predict(x)):
        np.testing.assert_array_equal(a, b)

def test_load_rejects_bad_files(tmp_path) -> None:
    with pytest.raises(DatasetError):
        load_surrogate(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DatasetError):
        load_surrogate(bad)
    bad.write_text(json.dumps({"format": "other"}))
    with pytest.raises(DatasetError):
        load_surrogate(bad)
    bad.write_text(json.dumps({"format": "slugmpc-surrogate", "kind": "gp", "layout": {}, "normalizer": {},
                               "model": {}}))
    with pytest.raises(DatasetError):
        load_surrogate(bad)
