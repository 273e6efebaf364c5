"""Feedforward networks with GELU hidden layers, trained by Adam.

Gradients are computed by hand in reverse mode. :meth:`MlpModel.backward`
also returns the gradient with respect to the inputs, which the
controller needs to differentiate through multi-step rollouts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import erf, ndtr

from .errors import ConfigError, TrainingError

__all__ = (
    "gelu",
    "gelu_grad",
    "MlpCache",
    "MlpModel",
    "mse",
    "mse_grad",
    "quantile_loss",
    "quantile_loss_grad",
    "pinball_loss",
    "Adam",
    "TrainConfig",
    "TrainResult",
    "fit",
    "train_mse",
    "train_quantile",
)

logger = logging.getLogger(__name__)

LossFn = Callable[[np.ndarray, np.ndarray], float]
GradFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_INV_SQRT2 = 1 / math.sqrt(2)
_INV_SQRT2PI = 1 / math.sqrt(2 * math.pi)

def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU ``x * Phi(x)``."""
    return 0.5 * x * (1 + erf(x * _INV_SQRT2))

def gelu_grad(x: np.ndarray) -> np.ndarray:
    return ndtr(x) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)

class MlpCache(NamedTuple):
    activations: list[np.ndarray]
    """Inputs of every layer; ``activations[0]`` is the network input."""
    preactivations: list[np.ndarray]
    """Hidden pre-activations ``z_i``."""

class MlpModel:
    """A fully connected network: GELU hidden layers and a linear output.

    Parameters
    ----------
    weights : Sequence[:class:`numpy.ndarray`]
        Weight matrices of shape ``(fan_in, fan_out)``.
    biases : Sequence[:class:`numpy.ndarray`]
        Bias vectors of shape ``(fan_out,)``.

    Attributes
    ----------
    sizes : tuple[:class:`int`, ...]
        Layer widths from input to output. ``(n_in, n_out)`` is an affine model.
    """
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> None:
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.sizes = (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator) -> MlpModel:
        """He-initialised weights and zero biases."""
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigError("hidden", f"invalid layer sizes {sizes}")
        weights = [rng.normal(0.0, math.sqrt(2 / a), size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        biases = [np.zeros(b) for b in sizes[1:]]
        return cls(weights, biases)

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def n_features(self) -> int:
        """Width of the last hidden layer (the input width if there is none)."""
        return self.sizes[-2]

    def parameters(self) -> list[np.ndarray]:
        """``[W0, b0, W1, b1, ...]``; the arrays themselves, not copies."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> MlpModel:
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def features_cache(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        acts = [x]
        zs: list[np.ndarray] = []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            a = gelu(z)
            zs.append(z)
            acts.append(a)
        return a, MlpCache(acts, zs)

    def features(self, x: np.ndarray) -> np.ndarray:
        return self.features_cache(x)[0]

    def forward_cache(self, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
        phi, cache = self.features_cache(x)
        return phi @ self.weights[-1] + self.biases[-1], cache

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cache(x)[0]

    __call__ = forward

    def backward_features(self, cache: MlpCache, dphi: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Backpropagate ``dL/dPhi`` through the hidden layers.

        Returns
        -------
        tuple[list[:class:`numpy.ndarray`], :class:`numpy.ndarray`]
            Gradients in :meth:`parameters` order (zero for the output layer)
            and the gradient with respect to the input.
        """
        grads = [np.zeros_like(p) for p in self.parameters()]
        da = dphi
        for i in range(len(self.weights) - 2, -1, -1):
            dz = da * gelu_grad(cache.preactivations[i])
            grads[2 * i] = cache.activations[i].T @ dz
            grads[2 * i + 1] = dz.sum(axis=0)
            da = dz @ self.weights[i].T
        return grads, da

    def backward(self, cache: MlpCache, dy: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Backpropagate ``dL/dy``; returns parameter and input gradients."""
        phi = cache.activations[-1]
        grads, dx = self.backward_features(cache, dy @ self.weights[-1].T)
        grads[-2] = phi.T @ dy
        grads[-1] = dy.sum(axis=0)
        return grads, dx

    def to_dict(self) -> dict[str, Any]:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> MlpModel:
        return cls(
            [np.asarray(w, dtype=float) for w in data["weights"]],
            [np.asarray(b, dtype=float) for b in data["biases"]],
        )

def mse(y: np.ndarray, y_hat: np.ndarray) -> float:
    return float(np.mean((y_hat - y) ** 2))

def mse_grad(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    return 2 * (y_hat - y) / y.size

def quantile_loss(y: np.ndarray, y_hat: np.ndarray, tau: float) -> float:
    """Mean pinball loss ``tau r+ + (1 - tau) r-`` with ``r = y - y_hat``."""
    r = y - y_hat
    return float(np.mean(np.maximum(tau * r, (tau - 1) * r)))

def quantile_loss_grad(y: np.ndarray, y_hat: np.ndarray, tau: float) -> np.ndarray:
    return np.where(y - y_hat > 0, -tau, 1 - tau) / y.size

def pinball_loss(y: np.ndarray, y_hat: np.ndarray, alpha: float) -> float:
    """Pinball loss of the lower head for miscoverage ``alpha``.

    Under-prediction is weighted by ``alpha / 2`` and over-prediction by
    ``1 - alpha / 2``, averaged over samples and outputs.

    Example
    -------
    .. code-block:: python

        >>> pinball_loss(np.array([1.0]), np.array([0.8]), 0.05)
        0.005
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    return quantile_loss(np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float), alpha / 2)

class Adam:
    """Adam with bias correction, updating arrays in place."""

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p) for p in self.params]
        self._v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)

@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and early-stopping settings.

    Attributes
    ----------
    epochs : :class:`int`
        Maximum number of passes over the training data.
    batch_size : :class:`int`
        Minibatch size; ``0`` means full batch.
    learning_rate : :class:`float`
        Adam step size.
    patience : :class:`int`
        Epochs without validation improvement before stopping.
    """
    epochs: int = 400
    batch_size: int = 64
    learning_rate: float = 1e-3
    patience: int = 40

    def __post_init__(self) -> None:
        for name in ("epochs", "patience"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                raise ConfigError(name, "must be a positive integer")
        if not isinstance(self.batch_size, int) or self.batch_size < 0:
            raise ConfigError("batch_size", "must be a non-negative integer")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ConfigError("learning_rate", "must be a finite positive number")

class TrainResult(NamedTuple):
    model: MlpModel
    best_epoch: int
    best_val_loss: float
    history: list[tuple[float, float]]
    """``(train_loss, val_loss)`` per epoch."""

def fit(model: MlpModel, loss: LossFn, loss_grad: GradFn, x: np.ndarray, y: np.ndarray,
        x_val: Optional[np.ndarray], y_val: Optional[np.ndarray], config: TrainConfig,
        rng: np.random.Generator) -> TrainResult:
    """Minimise ``loss`` with minibatch Adam and early stopping.

    ``model`` is trained in place; the returned model is a copy holding the
    weights with the lowest validation loss (training loss when no
    validation data is given).

    Raises
    ------
    :exc:`~slugmpc.errors.TrainingError`
        The loss became nonfinite.
    """
    n = x.shape[0]
    batch = n if config.batch_size == 0 else min(config.batch_size, n)
    opt = Adam(model.parameters(), config.learning_rate)
    has_val = x_val is not None and y_val is not None and len(x_val) > 0
    best = model.copy()
    best_loss = math.inf
    best_epoch = 0
    history: list[tuple[float, float]] = []

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = perm[start:start + batch]
            y_hat, cache = model.forward_cache(x[idx])
            total += loss(y[idx], y_hat) * idx.size
            grads, _ = model.backward(cache, loss_grad(y[idx], y_hat))
            opt.step(grads)
        train_loss = total / n
        val_loss = loss(y_val, model.forward(x_val)) if has_val else train_loss  # type: ignore[arg-type]
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(epoch, train_loss if not math.isfinite(train_loss) else val_loss)
        history.append((train_loss, val_loss))
        if val_loss < best_loss:
            best, best_loss, best_epoch = model.copy(), val_loss, epoch
        elif epoch - best_epoch >= config.patience:
            break

    logger.info("training stopped after %d epochs, best epoch %d with loss %.4g",
                len(history), best_epoch, best_loss)
    return TrainResult(best, best_epoch, best_loss, history)

def train_mse(model: MlpModel, x: np.ndarray, y: np.ndarray, x_val: Optional[np.ndarray] = None,
              y_val: Optional[np.ndarray] = None, config: Optional[TrainConfig] = None,
              rng: Optional[np.random.Generator] = None) -> TrainResult:
    """Train ``model`` on the mean squared error."""
    return fit(model, mse, mse_grad, x, y, x_val, y_val, config or TrainConfig(),
               rng if rng is not None else np.random.default_rng(0))

def train_quantile(model: MlpModel, tau: float, x: np.ndarray, y: np.ndarray,
                   x_val: Optional[np.ndarray] = None, y_val: Optional[np.ndarray] = None,
                   config: Optional[TrainConfig] = None,
                   rng: Optional[np.random.Generator] = None) -> TrainResult:
    """Train ``model`` to predict the ``tau`` quantile (``0.5`` is the median, i.e. MAE)."""
    if not 0 < tau < 1:
        raise ValueError(f"tau must lie in (0, 1), got {tau!r}")
    return fit(
        model,
        lambda a, b: quantile_loss(a, b, tau),
        lambda a, b: quantile_loss_grad(a, b, tau),
        x, y, x_val, y_val, config or TrainConfig(),
        rng if rng is not None else np.random.default_rng(0),
    )
