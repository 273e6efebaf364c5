from __future__ import annotations

import numpy as np
import pytest

from slugmpc import ConfigError, TrainingError
from slugmpc.network import (Adam, MlpModel, TrainConfig, gelu, gelu_grad, mse, mse_grad, pinball_loss,
                             quantile_loss, quantile_loss_grad, train_mse, train_quantile)

def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g

def test_gelu_shape() -> None:
    assert gelu(np.array(0.0)) == 0.0
    assert gelu(np.array(10.0)) == pytest.approx(10.0, rel=1e-12)
    assert abs(gelu(np.array(-10.0))) < 1e-20
    z = np.linspace(-0.75, 6.0, 200)
    assert np.all(np.diff(gelu(z)) > 0)
    # minimum near -0.7518
    assert gelu(np.array(-0.7518)) == pytest.approx(-0.1700, abs=1e-4)

def test_gelu_grad_matches_finite_differences() -> None:
    z = np.linspace(-4.0, 4.0, 41)
    h = 1e-6
    np.testing.assert_allclose(gelu_grad(z), (gelu(z + h) - gelu(z - h)) / (2 * h), atol=1e-8)

def test_init_shapes(rng: np.random.Generator) -> None:
    net = MlpModel.init((5, 8, 3), rng)
    assert net.sizes == (5, 8, 3)
    assert (net.n_in, net.n_features, net.n_out) == (5, 8, 3)
    assert [p.shape for p in net.parameters()] == [(5, 8), (8,), (8, 3), (3,)]
    assert net(np.zeros((4, 5))).shape == (4, 3)
    with pytest.raises(ConfigError):
        MlpModel.init((5,), rng)

def test_affine_model_has_no_hidden_layer(rng: np.random.Generator) -> None:
    net = MlpModel.init((4, 2), rng)
    x = rng.normal(size=(3, 4))
    np.testing.assert_allclose(net(x), x @ net.weights[0] + net.biases[0])
    np.testing.assert_array_equal(net.features(x), x)

def test_backward_matches_finite_differences(rng: np.random.Generator) -> None:
    net = MlpModel.init((4, 6, 5, 2), rng)
    for b in net.biases:
        b += rng.normal(0.0, 0.1, b.shape)
    x = rng.normal(size=(7, 4))
    y = rng.normal(size=(7, 2))

    def loss() -> float:
        return mse(y, net(x))

    y_hat, cache = net.forward_cache(x)
    grads, dx = net.backward(cache, mse_grad(y, y_hat))
    for p, g in zip(net.parameters(), grads):
        np.testing.assert_allclose(g, numeric_grad(loss, p), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(dx, numeric_grad(loss, x), rtol=1e-5, atol=1e-8)

def test_backward_features_input_gradient(rng: np.random.Generator) -> None:
    net = MlpModel.init((3, 5, 2), rng)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 5))
    phi, cache = net.features_cache(x)
    grads, dx = net.backward_features(cache, w)
    np.testing.assert_allclose(dx, numeric_grad(lambda: float(np.sum(w * net.features(x))), x), rtol=1e-5, atol=1e-8)
    np.testing.assert_array_equal(grads[-2], 0.0)

def test_quantile_loss_gradient(rng: np.random.Generator) -> None:
    y = rng.normal(size=(20, 3))
    y_hat = y + rng.choice([-1.0, 1.0], size=y.shape) * rng.uniform(0.1, 1.0, y.shape)
    grad = quantile_loss_grad(y, y_hat, 0.1)
    np.testing.assert_allclose(grad, numeric_grad(lambda: quantile_loss(y, y_hat, 0.1), y_hat), atol=1e-9)

@pytest.mark.parametrize("y_hat, expected", [(0.8, 0.005), (1.2, 0.195), (1.0, 0.0)])
def test_pinball_examples(y_hat: float, expected: float) -> None:
    assert pinball_loss(np.array([1.0]), np.array([y_hat]), 0.05) == pytest.approx(expected)

@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2])
def test_pinball_rejects_bad_alpha(alpha: float) -> None:
    with pytest.raises(ValueError):
        pinball_loss(np.array([1.0]), np.array([1.0]), alpha)

def test_adam_first_step_moves_by_learning_rate() -> None:
    p = np.array([1.0, -2.0])
    opt = Adam([p], learning_rate=0.1)
    opt.step([np.array([3.0, -0.5])])
    np.testing.assert_allclose(p, [0.9, -1.9], rtol=1e-6)

@pytest.mark.parametrize("changes", [{"epochs": 0}, {"batch_size": -1}, {"learning_rate": 0.0},
                                     {"patience": 1.5}])
def test_train_config_validation(changes: dict[str, float]) -> None:
    with pytest.raises(ConfigError):
        TrainConfig(**changes)

def test_mse_training_recovers_a_linear_map(rng: np.random.Generator) -> None:
    a = rng.normal(size=(3, 2))
    x = rng.normal(size=(200, 3))
    y = x @ a + 0.5
    result = train_mse(MlpModel.init((3, 2), rng), x, y, config=TrainConfig(epochs=600, batch_size=0,
                                                                            learning_rate=0.05, patience=600))
    np.testing.assert_allclose(result.model.weights[0], a, atol=1e-2)
    np.testing.assert_allclose(result.model.biases[0], 0.5, atol=1e-2)
    assert result.best_val_loss < 1e-4
    assert len(result.history) <= 600

def test_training_is_deterministic(rng: np.random.Generator) -> None:
    x = rng.normal(size=(64, 3))
    y = np.sin(x[:, :1])
    config = TrainConfig(epochs=20, batch_size=16)

    def run() -> np.ndarray:
        net = MlpModel.init((3, 8, 1), np.random.default_rng(0))
        return train_mse(net, x, y, config=config, rng=np.random.default_rng(1)).model.weights[0]

    np.testing.assert_array_equal(run(), run())

def test_early_stopping_keeps_the_best_epoch(rng: np.random.Generator) -> None:
    x = rng.normal(size=(40, 2))
    y = rng.normal(size=(40, 1))
    x_val, y_val = rng.normal(size=(20, 2)), rng.normal(size=(20, 1))
    config = TrainConfig(epochs=300, batch_size=8, learning_rate=1e-2, patience=5)
    result = train_mse(MlpModel.init((2, 32, 1), rng), x, y, x_val, y_val, config, rng)
    assert len(result.history) - result.best_epoch <= 5
    assert result.best_val_loss == pytest.approx(min(v for _, v in result.history))
    assert mse(y_val, result.model(x_val)) == pytest.approx(result.best_val_loss)

def test_quantile_training_brackets_the_data(rng: np.random.Generator) -> None:
    x = rng.uniform(-1.0, 1.0, size=(400, 1))
    y = x + rng.normal(0.0, 0.1, size=(400, 1))
    config = TrainConfig(epochs=400, batch_size=0, learning_rate=0.05, patience=400)
    lo = train_quantile(MlpModel.init((1, 1), rng), 0.1, x, y, config=config, rng=rng).model
    up = train_quantile(MlpModel.init((1, 1), rng), 0.9, x, y, config=config, rng=rng).model
    assert np.mean(y < lo(x)) == pytest.approx(0.1, abs=0.05)
    assert np.mean(y < up(x)) == pytest.approx(0.9, abs=0.05)
    with pytest.raises(ValueError):
        train_quantile(MlpModel.init((1, 1), rng), 1.0, x, y)

def test_nonfinite_loss_raises(rng: np.random.Generator) -> None:
    x = rng.normal(size=(10, 2))
    y = np.full((10, 1), np.nan)
    with pytest.raises(TrainingError) as info:
        train_mse(MlpModel.init((2, 1), rng), x, y, config=TrainConfig(epochs=3))
    assert info.value.epoch == 1
