from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from slugmpc.bll import BllModel, add_bias, bll_predict, bll_train, blr_posterior, log_evidence
from slugmpc.network import MlpModel, TrainConfig, mse

@pytest.fixture
def regression(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    phi = add_bias(rng.normal(size=(12, 3)))
    y = phi @ rng.normal(size=(4, 2)) + 0.1 * rng.normal(size=(12, 2))
    return phi, y

@pytest.fixture(scope="module")
def trained() -> tuple[BllModel, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(8)
    x = rng.normal(size=(240, 3))
    y = np.column_stack((np.sin(x[:, 0]), 0.5 * x[:, 1] * x[:, 2])) + 0.05 * rng.normal(size=(240, 2))
    net = MlpModel.init((3, 16, 2), rng)
    model = bll_train(net, x[:200], y[:200], x[200:], y[200:],
                      TrainConfig(epochs=150, learning_rate=1e-2, patience=150))
    return model, x[200:], y[200:]

def test_add_bias() -> None:
    np.testing.assert_array_equal(add_bias(np.zeros((2, 3)))[:, -1], 1.0)
    assert add_bias(np.zeros(3)).shape == (4,)

def test_flat_prior_gives_least_squares(regression: tuple[np.ndarray, np.ndarray]) -> None:
    phi, y = regression
    post = blr_posterior(phi, y, 0.1, 1e12)
    ols, *_ = np.linalg.lstsq(phi, y, rcond=None)
    np.testing.assert_allclose(post.mean, ols, rtol=1e-6, atol=1e-9)
    assert post.cov.shape == (2, 4, 4)
    np.testing.assert_allclose(post.cov[0], 0.1 * np.linalg.inv(phi.T @ phi), rtol=1e-6)

def test_posterior_per_channel_noise(regression: tuple[np.ndarray, np.ndarray]) -> None:
    phi, y = regression
    beta_eps = np.array([0.05, 0.4])
    post = blr_posterior(phi, y, beta_eps, 2.0)
    for j in range(2):
        a = phi.T @ phi / beta_eps[j] + np.eye(4) / 2.0
        np.testing.assert_allclose(post.cov[j], np.linalg.inv(a), rtol=1e-9)
        np.testing.assert_allclose(post.mean[:, j], np.linalg.solve(a, phi.T @ y[:, j] / beta_eps[j]), rtol=1e-9)

def test_log_evidence_is_the_marginal_likelihood(regression: tuple[np.ndarray, np.ndarray]) -> None:
    phi, y = regression
    beta_eps, beta_w = np.array([0.05, 0.4]), 2.0
    expected = sum(
        stats.multivariate_normal(np.zeros(len(y)), beta_w * phi @ phi.T + beta_eps[j] * np.eye(len(y))).logpdf(y[:, j])
        for j in range(2)
    )
    assert log_evidence(phi, y, beta_eps, beta_w).value == pytest.approx(expected, rel=1e-10)

def test_log_evidence_gradients(regression: tuple[np.ndarray, np.ndarray]) -> None:
    phi, y = regression
    log_eps, log_w = np.log(np.array([0.05, 0.4])), math.log(2.0)
    ev = log_evidence(phi, y, np.exp(log_eps), math.exp(log_w))
    h = 1e-6

    def value(p: np.ndarray = phi, le: np.ndarray = log_eps, lw: float = log_w) -> float:
        return log_evidence(p, y, np.exp(le), math.exp(lw)).value

    d_phi = np.zeros_like(phi)
    for i in np.ndindex(phi.shape):
        step = np.zeros_like(phi)
        step[i] = h
        d_phi[i] = (value(p=phi + step) - value(p=phi - step)) / (2 * h)
    np.testing.assert_allclose(ev.d_phi, d_phi, rtol=1e-5, atol=1e-6)

    for j in range(2):
        step = np.zeros(2)
        step[j] = h
        fd = (value(le=log_eps + step) - value(le=log_eps - step)) / (2 * h)
        assert ev.d_log_beta_eps[j] == pytest.approx(fd, rel=1e-5, abs=1e-6)
    fd_w = (value(lw=log_w + h) - value(lw=log_w - h)) / (2 * h)
    assert ev.d_log_beta_w == pytest.approx(fd_w, rel=1e-5, abs=1e-6)

def test_evidence_posterior_matches_closed_form(regression: tuple[np.ndarray, np.ndarray]) -> None:
    phi, y = regression
    ev = log_evidence(phi, y, 0.2, 1.5)
    post = blr_posterior(phi, y, 0.2, 1.5)
    np.testing.assert_allclose(ev.posterior.mean, post.mean)
    np.testing.assert_allclose(ev.posterior.cov, post.cov)

def test_trained_model_fits(trained: tuple[BllModel, np.ndarray, np.ndarray]) -> None:
    model, x_val, y_val = trained
    mu, sigma = bll_predict(model, x_val)
    assert mse(y_val, mu) < 0.5 * float(np.mean(np.var(y_val, axis=0)))
    np.testing.assert_allclose(mu, model.net(x_val), rtol=1e-10, atol=1e-12)
    assert model.beta_eps.shape == (2,)
    assert model.beta_w > 0

def test_predictive_sigma_floor(trained: tuple[BllModel, np.ndarray, np.ndarray]) -> None:
    model, x_val, _ = trained
    _, sigma = bll_predict(model, x_val)
    assert np.all(sigma >= np.sqrt(model.beta_eps) * (1 - 1e-12))

def test_sigma_grows_away_from_the_data(trained: tuple[BllModel, np.ndarray, np.ndarray]) -> None:
    model, x_val, _ = trained
    _, near = bll_predict(model, x_val)
    _, far = bll_predict(model, 50.0 * x_val)
    assert np.mean(far) > 2 * np.mean(near)

def test_model_serialisation(trained: tuple[BllModel, np.ndarray, np.ndarray]) -> None:
    model, x_val, _ = trained
    restored = BllModel.from_dict(model.to_dict())
    for a, b in zip(bll_predict(model, x_val), bll_predict(restored, x_val)):
        np.testing.assert_array_equal(a, b)

def test_two_sigma_interval_covers_linear_gaussian_data() -> None:
    rng = np.random.default_rng(12)
    w = np.array([[1.5, -1.0], [-2.0, 1.2], [0.8, 1.5]])
    b = np.array([0.5, -0.4])

    def draw(n: int) -> tuple[np.ndarray, np.ndarray]:
        x = rng.normal(size=(n, 3))
        return x, x @ w + b + 0.2 * rng.normal(size=(n, 2))

    x, y = draw(2000)
    # no hidden layer: the features are the inputs themselves
    net = MlpModel([np.zeros((3, 2))], [np.zeros(2)])
    model = bll_train(net, x, y, config=TrainConfig(epochs=400, learning_rate=1e-2, patience=400))
    np.testing.assert_allclose(model.beta_eps, 0.04, rtol=0.15)
    x_new, y_new = draw(20000)
    mu, sigma = bll_predict(model, x_new)
    coverage = np.mean(np.abs(y_new - mu) <= 2.0 * sigma, axis=0)
    assert np.all((coverage > 0.935) & (coverage < 0.975))
