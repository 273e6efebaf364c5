"""Bayesian last layer: Bayesian linear regression on learned features.

The hidden layers of an :class:`~slugmpc.network.MlpModel` provide the
features ``Phi(X)``; a bias column is appended. Each output channel ``j``
has a Gaussian prior ``N(0, beta_w I)`` on its last-layer weights and
Gaussian noise of variance ``beta_eps[j]``. The hidden weights and both
variances are trained by maximising the log marginal likelihood of the
training labels, after which the posterior over the last layer is computed
in closed form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Mapping, NamedTuple, Optional

import numpy as np
from scipy import linalg

from .errors import TrainingError
from .network import Adam, MlpModel, TrainConfig, mse

__all__ = (
    "Posterior",
    "Evidence",
    "BllModel",
    "add_bias",
    "blr_posterior",
    "log_evidence",
    "bll_train",
    "bll_predict",
)

logger = logging.getLogger(__name__)

_MAX_JITTER_TRIES = 8

class Posterior(NamedTuple):
    mean: np.ndarray
    """Posterior means, one column per output ``(d, n_out)``."""
    cov: np.ndarray
    """Posterior covariances ``(n_out, d, d)``."""

class Evidence(NamedTuple):
    value: float
    """Sum over outputs of the log marginal likelihood."""
    d_phi: np.ndarray
    """Gradient with respect to the (bias-augmented) features."""
    d_log_beta_eps: np.ndarray
    d_log_beta_w: float
    posterior: Posterior

def add_bias(phi: np.ndarray) -> np.ndarray:
    return np.concatenate((phi, np.ones((*phi.shape[:-1], 1))), axis=-1)

def _cholesky(a: np.ndarray) -> tuple[np.ndarray, bool]:
    try:
        return linalg.cho_factor(a, lower=True), False  # type: ignore[return-value]
    except linalg.LinAlgError:
        pass
    scale = np.trace(a) / a.shape[0]
    for k in range(_MAX_JITTER_TRIES):
        jitter = scale * 10.0 ** (k - 10)
        try:
            factor = linalg.cho_factor(a + jitter * np.eye(a.shape[0]), lower=True)
        except linalg.LinAlgError:
            continue
        logger.warning("posterior precision not positive definite; added jitter %.3g", jitter)
        return factor, True  # type: ignore[return-value]
    raise linalg.LinAlgError("posterior precision is not positive definite even with jitter")

def _solve_channel(phi: np.ndarray, gram: np.ndarray, y: np.ndarray, beta_eps: float,
                   beta_w: float) -> tuple[np.ndarray, np.ndarray, float]:
    d = gram.shape[0]
    precision = gram / beta_eps + np.eye(d) / beta_w
    factor, _ = _cholesky(precision)
    cov = linalg.cho_solve(factor, np.eye(d))
    mean = linalg.cho_solve(factor, phi.T @ y / beta_eps)
    logdet = 2 * float(np.sum(np.log(np.diag(factor[0]))))
    return mean, 0.5 * (cov + cov.T), logdet

def blr_posterior(phi: np.ndarray, y: np.ndarray, beta_eps: np.ndarray | float,
                  beta_w: float) -> Posterior:
    """Closed-form posterior of the last layer.

    Parameters
    ----------
    phi : :class:`numpy.ndarray`
        Features ``(N, d)``, bias column included.
    y : :class:`numpy.ndarray`
        Labels ``(N, n_out)``.
    beta_eps : :class:`numpy.ndarray` | :class:`float`
        Noise variance per output.
    beta_w : :class:`float`
        Prior weight variance.

    Returns
    -------
    :class:`Posterior`
        Mean ``A^-1 Phi^T y / beta_eps`` and covariance ``A^-1`` with
        ``A = Phi^T Phi / beta_eps + I / beta_w``.
    """
    y = y.reshape(len(y), -1)
    beta = np.broadcast_to(np.asarray(beta_eps, dtype=float), (y.shape[1],))
    gram = phi.T @ phi
    means, covs = [], []
    for j in range(y.shape[1]):
        mean, cov, _ = _solve_channel(phi, gram, y[:, j], float(beta[j]), beta_w)
        means.append(mean)
        covs.append(cov)
    return Posterior(np.stack(means, axis=1), np.stack(covs))

def log_evidence(phi: np.ndarray, y: np.ndarray, beta_eps: np.ndarray | float,
                 beta_w: float) -> Evidence:
    """Log marginal likelihood of ``y`` and its gradients.

    For each output with ``A = Phi^T Phi / beta_eps + I / beta_w``, posterior
    mean ``m`` and residual ``r = |y - Phi m|^2``::

        log p(y) = -N/2 log(2 pi beta_eps) - d/2 log beta_w - 1/2 log|A|
                   - r / (2 beta_eps) - |m|^2 / (2 beta_w)

    The variance gradients are returned with respect to their logarithms.
    """
    y = y.reshape(len(y), -1)
    n, d = phi.shape
    beta = np.broadcast_to(np.asarray(beta_eps, dtype=float), (y.shape[1],))
    gram = phi.T @ phi
    total = 0.0
    d_phi = np.zeros_like(phi)
    d_log_eps = np.zeros(y.shape[1])
    d_w = 0.0
    means, covs = [], []
    for j in range(y.shape[1]):
        be = float(beta[j])
        mean, cov, logdet = _solve_channel(phi, gram, y[:, j], be, beta_w)
        resid = y[:, j] - phi @ mean
        r = float(resid @ resid)
        mm = float(mean @ mean)
        total += (-0.5 * n * math.log(2 * math.pi * be) - 0.5 * d * math.log(beta_w)
                  - 0.5 * logdet - r / (2 * be) - mm / (2 * beta_w))
        d_phi += (np.outer(resid, mean) - phi @ cov) / be
        d_eps = -n / (2 * be) + float(np.sum(cov * gram)) / (2 * be ** 2) + r / (2 * be ** 2)
        d_log_eps[j] = be * d_eps
        d_w += -d / (2 * beta_w) + float(np.trace(cov)) / (2 * beta_w ** 2) + mm / (2 * beta_w ** 2)
        means.append(mean)
        covs.append(cov)
    return Evidence(total, d_phi, d_log_eps, beta_w * d_w, Posterior(np.stack(means, axis=1), np.stack(covs)))

@dataclass
class BllModel:
    """Feature network plus Gaussian last-layer posterior.

    Attributes
    ----------
    net : :class:`~slugmpc.network.MlpModel`
        Network whose hidden layers give the features. Its output layer holds
        the posterior mean, so ``net.forward`` is the mean prediction.
    mean : :class:`numpy.ndarray`
        Posterior mean ``(d, n_out)`` with the bias in the last row.
    cov : :class:`numpy.ndarray`
        Posterior covariance ``(n_out, d, d)``.
    beta_eps : :class:`numpy.ndarray`
        Noise variance per output.
    beta_w : :class:`float`
        Prior weight variance.
    """
    net: MlpModel
    mean: np.ndarray
    cov: np.ndarray
    beta_eps: np.ndarray
    beta_w: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "net": self.net.to_dict(),
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "beta_eps": self.beta_eps.tolist(),
            "beta_w": self.beta_w,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> BllModel:
        return cls(
            MlpModel.from_dict(data["net"]),
            np.asarray(data["mean"], dtype=float),
            np.asarray(data["cov"], dtype=float),
            np.asarray(data["beta_eps"], dtype=float),
            float(data["beta_w"]),
        )

def _with_posterior(net: MlpModel, post: Posterior, beta_eps: np.ndarray, beta_w: float) -> BllModel:
    net = net.copy()
    net.weights[-1] = post.mean[:-1].copy()
    net.biases[-1] = post.mean[-1].copy()
    return BllModel(net, post.mean, post.cov, np.array(beta_eps, dtype=float), float(beta_w))

def bll_train(net: MlpModel, x: np.ndarray, y: np.ndarray, x_val: Optional[np.ndarray] = None,
              y_val: Optional[np.ndarray] = None, config: Optional[TrainConfig] = None,
              beta_eps: float = 0.1, beta_w: float = 1.0) -> BllModel:
    """Train the feature network and noise variances on the log evidence.

    Full-batch Adam ascends the evidence per sample. The weights with the
    lowest validation MSE of the posterior mean are kept (training MSE when
    there is no validation data).

    Raises
    ------
    :exc:`~slugmpc.errors.TrainingError`
        The evidence became nonfinite.
    """
    config = config or TrainConfig()
    n = x.shape[0]
    log_eps = np.full(y.shape[1], math.log(beta_eps))
    log_w = np.array([math.log(beta_w)])
    opt = Adam(net.parameters() + [log_eps, log_w], config.learning_rate)
    has_val = x_val is not None and y_val is not None and len(x_val) > 0

    best: Optional[BllModel] = None
    best_loss = math.inf
    best_epoch = 0
    for epoch in range(1, config.epochs + 1):
        phi, cache = net.features_cache(x)
        try:
            ev = log_evidence(add_bias(phi), y, np.exp(log_eps), float(np.exp(log_w[0])))
        except (linalg.LinAlgError, ValueError):
            raise TrainingError(epoch, math.nan, "log evidence failed") from None
        if not math.isfinite(ev.value):
            raise TrainingError(epoch, ev.value)

        model = _with_posterior(net, ev.posterior, np.exp(log_eps), float(np.exp(log_w[0])))
        val = mse(y_val, bll_predict(model, x_val)[0]) if has_val else mse(y, bll_predict(model, x)[0])  # type: ignore[arg-type]
        if val < best_loss:
            best, best_loss, best_epoch = model, val, epoch
        elif epoch - best_epoch >= config.patience:
            break

        grads, _ = net.backward_features(cache, -ev.d_phi[:, :-1] / n)
        opt.step(grads + [-ev.d_log_beta_eps / n, np.array([-ev.d_log_beta_w / n])])

    assert best is not None
    logger.info("BLL training: best epoch %d, validation MSE %.4g, beta_w %.3g",
                best_epoch, best_loss, best.beta_w)
    return best

def bll_predict(model: BllModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Predictive mean and standard deviation per output.

    ``sigma^2 = phi^T Cov phi + beta_eps``, so ``sigma`` never falls below
    ``sqrt(beta_eps)``.
    """
    phi = add_bias(model.net.features(x))
    mu = phi @ model.mean
    var = np.einsum("nd,jde,ne->nj", phi, model.cov, phi) + model.beta_eps
    return mu, np.sqrt(np.maximum(var, model.beta_eps))
