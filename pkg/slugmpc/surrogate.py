"""Surrogate models of the plant for the controller.

Three families share one protocol: a plain network (no uncertainty), a
conformalized quantile regression triple and a Bayesian last layer
network. All of them map z-scored NARX features to z-scored predictions of
the next measurement as an interval ``(lo, mid, up)``, and all of them can
backpropagate through that map.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from abc import abstractmethod
from dataclasses import dataclass, field
from os import PathLike
from pathlib import Path
from typing import (Any, Callable, Literal, Mapping, NamedTuple, Optional, Protocol,
                    runtime_checkable)

import numpy as np
import pandas as pd

from ._utils import child_seeds, make_rng, writing
from .bll import BllModel, add_bias, bll_train
from .config import from_mapping
from .errors import CalibrationError, ConfigError, DatasetError
from .narx import NarxDataset, NarxLayout, Normalizer, SplitConfig
from .network import MlpModel, TrainConfig, mse, train_mse, train_quantile
from .params import MEASUREMENT_NAMES

__all__ = (
    "Interval",
    "Surrogate",
    "NnSurrogate",
    "CqrSurrogate",
    "BllSurrogate",
    "SurrogateConfig",
    "EvaluationReport",
    "conformity_scores",
    "conformal_offset",
    "min_calibration_size",
    "conformalize",
    "cqr_predict",
    "train_surrogate",
    "evaluate",
    "save_surrogate",
    "load_surrogate",
)

logger = logging.getLogger(__name__)

ARTIFACT_FORMAT = "slugmpc-surrogate"
ARTIFACT_VERSION = 1

class Interval(NamedTuple):
    lo: np.ndarray
    mid: np.ndarray
    up: np.ndarray

IntervalVjp = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
"""Maps output cotangents ``(d_lo, d_mid, d_up)`` to the feature cotangent."""

MeanVjp = Callable[[np.ndarray], np.ndarray]

@runtime_checkable
class Surrogate(Protocol):
    """A protocol for one-step-ahead NARX predictors with intervals.

    Subclasses implementing this protocol should inherit from this class.
    Features and predictions are z-scored with :attr:`normalizer`.

    Attributes
    ----------
    kind : :class:`str`
        ``"nn"``, ``"cqr"`` or ``"bll"``.
    layout : :class:`~slugmpc.narx.NarxLayout`
        Feature layout the model was trained on.
    normalizer : :class:`~slugmpc.narx.Normalizer`
        Statistics of the training split.
    """
    kind: str
    layout: NarxLayout
    normalizer: Normalizer

    def predict(self, x: np.ndarray) -> Interval:
        """Prediction interval with ``lo <= mid <= up`` for features ``(N, n_features)``."""
        return self.predict_vjp(x)[0]

    @abstractmethod
    def predict_vjp(self, x: np.ndarray) -> tuple[Interval, IntervalVjp]:
        """The interval and a function backpropagating cotangents of
        ``(lo, mid, up)`` to the features."""
        raise NotImplementedError

    @abstractmethod
    def mean_vjp(self, x: np.ndarray) -> tuple[np.ndarray, MeanVjp]:
        """The nominal prediction and its backpropagation function."""
        raise NotImplementedError

    @abstractmethod
    def to_dict(self) -> dict[str, Any]:
        """Model-specific part of the artifact."""
        raise NotImplementedError

class NnSurrogate(Surrogate):
    """A plain MSE-trained network; its interval has zero width."""
    kind = "nn"

    def __init__(self, layout: NarxLayout, normalizer: Normalizer, net: MlpModel) -> None:
        self.layout = layout
        self.normalizer = normalizer
        self.net = net

    def predict_vjp(self, x: np.ndarray) -> tuple[Interval, IntervalVjp]:
        y, cache = self.net.forward_cache(x)

        def vjp(d_lo: np.ndarray, d_mid: np.ndarray, d_up: np.ndarray) -> np.ndarray:
            return self.net.backward(cache, d_lo + d_mid + d_up)[1]

        return Interval(y, y, y), vjp

    def mean_vjp(self, x: np.ndarray) -> tuple[np.ndarray, MeanVjp]:
        y, cache = self.net.forward_cache(x)
        return y, lambda d: self.net.backward(cache, d)[1]

    def to_dict(self) -> dict[str, Any]:
        return {"net": self.net.to_dict()}

    @classmethod
    def from_dict(cls, layout: NarxLayout, normalizer: Normalizer, data: Mapping[str, Any]) -> NnSurrogate:
        return cls(layout, normalizer, MlpModel.from_dict(data["net"]))

class CqrSurrogate(Surrogate):
    """Lower, median and upper quantile networks with conformal offsets.

    Parameters
    ----------
    layout, normalizer
        See :class:`Surrogate`.
    lo, mid, up : :class:`~slugmpc.network.MlpModel`
        Networks for the ``alpha/2``, ``0.5`` and ``1 - alpha/2`` quantiles.
    alpha : :class:`float`
        Miscoverage level.
    offsets : :class:`numpy.ndarray` | :data:`None`
        Conformal offset per output; zeros until :func:`conformalize` is applied.
    """
    kind = "cqr"

    def __init__(self, layout: NarxLayout, normalizer: Normalizer, lo: MlpModel, mid: MlpModel,
                 up: MlpModel, alpha: float, offsets: Optional[np.ndarray] = None) -> None:
        self.layout = layout
        self.normalizer = normalizer
        self.lo = lo
        self.mid = mid
        self.up = up
        self.alpha = alpha
        self.offsets = np.zeros(mid.n_out) if offsets is None else np.asarray(offsets, dtype=float)

    def raw(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Unconformalized quantile-head outputs ``(lo, up)``."""
        return self.lo.forward(x), self.up.forward(x)

    def predict_vjp(self, x: np.ndarray) -> tuple[Interval, IntervalVjp]:
        lo, c_lo = self.lo.forward_cache(x)
        mid, c_mid = self.mid.forward_cache(x)
        up, c_up = self.up.forward_cache(x)
        stacked = np.stack((lo - self.offsets, mid, up + self.offsets))
        # crossing heads are repaired by sorting the triple
        order = np.argsort(stacked, axis=0, kind="stable")
        ordered = np.take_along_axis(stacked, order, axis=0)

        def vjp(d_lo: np.ndarray, d_mid: np.ndarray, d_up: np.ndarray) -> np.ndarray:
            back = np.zeros_like(stacked)
            np.put_along_axis(back, order, np.stack((d_lo, d_mid, d_up)), axis=0)
            return (self.lo.backward(c_lo, back[0])[1]
                    + self.mid.backward(c_mid, back[1])[1]
                    + self.up.backward(c_up, back[2])[1])

        return Interval(ordered[0], ordered[1], ordered[2]), vjp

    def mean_vjp(self, x: np.ndarray) -> tuple[np.ndarray, MeanVjp]:
        y, cache = self.mid.forward_cache(x)
        return y, lambda d: self.mid.backward(cache, d)[1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "lo": self.lo.to_dict(),
            "mid": self.mid.to_dict(),
            "up": self.up.to_dict(),
            "alpha": self.alpha,
            "offsets": self.offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, layout: NarxLayout, normalizer: Normalizer, data: Mapping[str, Any]) -> CqrSurrogate:
        return cls(
            layout, normalizer,
            MlpModel.from_dict(data["lo"]), MlpModel.from_dict(data["mid"]), MlpModel.from_dict(data["up"]),
            float(data["alpha"]), np.asarray(data["offsets"], dtype=float),
        )

class BllSurrogate(Surrogate):
    """Bayesian last layer network with interval ``mu +- m sigma``."""
    kind = "bll"

    def __init__(self, layout: NarxLayout, normalizer: Normalizer, model: BllModel, m: float = 2.0) -> None:
        self.layout = layout
        self.normalizer = normalizer
        self.model = model
        self.m = m

    def predict_vjp(self, x: np.ndarray) -> tuple[Interval, IntervalVjp]:
        model = self.model
        phi, cache = model.net.features_cache(x)
        pa = add_bias(phi)
        mu = pa @ model.mean
        var = np.einsum("nd,jde,ne->nj", pa, model.cov, pa) + model.beta_eps
        sigma = np.sqrt(np.maximum(var, model.beta_eps))

        def vjp(d_lo: np.ndarray, d_mid: np.ndarray, d_up: np.ndarray) -> np.ndarray:
            d_mu = d_lo + d_mid + d_up
            d_var = self.m * (d_up - d_lo) / (2 * sigma)
            d_pa = d_mu @ model.mean.T + 2 * np.einsum("nj,jde,ne->nd", d_var, model.cov, pa)
            return model.net.backward_features(cache, d_pa[:, :-1])[1]

        return Interval(mu - self.m * sigma, mu, mu + self.m * sigma), vjp

    def mean_vjp(self, x: np.ndarray) -> tuple[np.ndarray, MeanVjp]:
        model = self.model
        phi, cache = model.net.features_cache(x)
        mu = add_bias(phi) @ model.mean
        return mu, lambda d: model.net.backward_features(cache, (d @ model.mean.T)[:, :-1])[1]

    def to_dict(self) -> dict[str, Any]:
        return {"bll": self.model.to_dict(), "m": self.m}

    @classmethod
    def from_dict(cls, layout: NarxLayout, normalizer: Normalizer, data: Mapping[str, Any]) -> BllSurrogate:
        return cls(layout, normalizer, BllModel.from_dict(data["bll"]), float(data["m"]))

def conformity_scores(lo: np.ndarray, up: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``E = max(lo - y, y - up)``; negative inside the interval."""
    return np.maximum(lo - y, y - up)

def _rank(n: int, alpha: float) -> int:
    # the tolerance keeps exact products such as 0.95 * 20 from rounding up
    return math.ceil((1 - alpha) * (n + 1) - 1e-9)

def min_calibration_size(alpha: float) -> int:
    """Smallest calibration set (at least 20) for which the conformal rank exists."""
    n = 20
    while _rank(n, alpha) > n:
        n += 1
    return n

def conformal_offset(scores: np.ndarray, alpha: float) -> np.ndarray:
    """Per-column ``ceil((1 - alpha)(n + 1))``-th smallest score.

    Raises
    ------
    :exc:`~slugmpc.errors.CalibrationError`
        Fewer than 20 rows, or too few for ``alpha``.
    """
    scores = np.asarray(scores, dtype=float).reshape(len(scores), -1)
    n = scores.shape[0]
    if not 0 < alpha < 1:
        raise ConfigError("alpha", f"must lie in (0, 1), got {alpha!r}")
    k = _rank(n, alpha)
    if n < 20 or k > n:
        raise CalibrationError(n, min_calibration_size(alpha))
    return np.sort(scores, axis=0)[k - 1]

def conformalize(cqr: CqrSurrogate, x: np.ndarray, y: np.ndarray,
                 alpha: Optional[float] = None) -> CqrSurrogate:
    """Calibrate the offsets of ``cqr`` on unseen data.

    Parameters
    ----------
    cqr : :class:`CqrSurrogate`
        Trained quantile networks.
    x, y : :class:`numpy.ndarray`
        Z-scored calibration features and labels.
    alpha : :class:`float` | :data:`None`
        Miscoverage level; ``cqr.alpha`` by default.

    Returns
    -------
    :class:`CqrSurrogate`
        A new model with per-output offsets. On ``(x, y)`` its interval
        covers at least a fraction ``1 - alpha`` of every output.
    """
    alpha = cqr.alpha if alpha is None else alpha
    lo, up = cqr.raw(x)
    offsets = conformal_offset(conformity_scores(lo, up, y), alpha)
    logger.info("conformal offsets (normalized units): %s", np.array2string(offsets, precision=4))
    return CqrSurrogate(cqr.layout, cqr.normalizer, cqr.lo, cqr.mid, cqr.up, alpha, offsets)

def cqr_predict(cqr: CqrSurrogate, x: np.ndarray) -> Interval:
    """``(lo - Q, mid, up + Q)``, sorted so that ``lo <= mid <= up``."""
    return cqr.predict(x)

@dataclass(frozen=True)
class SurrogateConfig:
    """What to train and how.

    Attributes
    ----------
    kind : ``"nn"`` | ``"cqr"`` | ``"bll"``
        Model family.
    lag : :class:`int`
        NARX lag ``l``.
    hidden : tuple[:class:`int`, ...]
        Hidden layer widths of the plain and BLL networks.
    quantile_hidden : tuple[:class:`int`, ...]
        Hidden layer widths of each quantile network.
    alpha : :class:`float`
        CQR miscoverage level.
    m : :class:`float`
        BLL interval half-width in standard deviations.
    use_disturbance : :class:`bool`
        Feed ``w_cryst`` as a fourth input channel.
    train : :class:`~slugmpc.network.TrainConfig`
    split : :class:`~slugmpc.narx.SplitConfig`
    seed : :class:`int`
    """
    kind: Literal["nn", "cqr", "bll"] = "cqr"
    lag: int = 4
    hidden: tuple[int, ...] = (30,)
    quantile_hidden: tuple[int, ...] = (10,)
    alpha: float = 0.05
    m: float = 2.0
    use_disturbance: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("nn", "cqr", "bll"):
            raise ConfigError("kind", f"must be 'nn', 'cqr' or 'bll', got {self.kind!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha", "must lie in (0, 1)")
        if not (self.m >= 0 and math.isfinite(self.m)):
            raise ConfigError("m", "must be a finite non-negative number")
        for name in ("hidden", "quantile_hidden"):
            if any(not isinstance(h, int) or h < 1 for h in getattr(self, name)):
                raise ConfigError(name, "layer widths must be positive integers")

    @property
    def layout(self) -> NarxLayout:
        return NarxLayout(self.lag, self.use_disturbance)

def train_surrogate(dataset: NarxDataset, config: Optional[SurrogateConfig] = None,
                    seed: Optional[int] = None) -> Surrogate:
    """Train the model family of ``config`` on ``dataset``.

    CQR models are conformalized on the calibration split.

    Raises
    ------
    :exc:`~slugmpc.errors.CalibrationError`
        The calibration split is too small.
    :exc:`~slugmpc.errors.TrainingError`
        Training diverged.
    """
    config = config or SurrogateConfig()
    if dataset.layout != config.layout:
        raise ConfigError("lag", f"dataset layout {dataset.layout} differs from {config.layout}")
    seeds = child_seeds(config.seed if seed is None else seed, 4)
    layout, norm = dataset.layout, dataset.normalizer
    x, y = dataset.subset("train")
    x_val, y_val = dataset.subset("val")
    sizes = (layout.n_features, *config.hidden, layout.n_y)

    if config.kind == "nn":
        net = MlpModel.init(sizes, make_rng(seeds[0]))
        result = train_mse(net, x, y, x_val, y_val, config.train, make_rng(seeds[1]))
        return NnSurrogate(layout, norm, result.model)

    if config.kind == "bll":
        net = MlpModel.init(sizes, make_rng(seeds[0]))
        return BllSurrogate(layout, norm, bll_train(net, x, y, x_val, y_val, config.train), config.m)

    q_sizes = (layout.n_features, *config.quantile_hidden, layout.n_y)
    heads = []
    for tau, ss in zip((config.alpha / 2, 0.5, 1 - config.alpha / 2), seeds[:3]):
        init_ss, shuffle_ss = ss.spawn(2)
        net = MlpModel.init(q_sizes, make_rng(init_ss))
        heads.append(train_quantile(net, tau, x, y, x_val, y_val, config.train, make_rng(shuffle_ss)).model)
    cqr = CqrSurrogate(layout, norm, heads[0], heads[1], heads[2], config.alpha)
    x_cal, y_cal = dataset.subset("cal")
    return conformalize(cqr, x_cal, y_cal)

@dataclass(frozen=True)
class EvaluationReport:
    """Test metrics of a surrogate.

    Attributes
    ----------
    mode : ``"prediction"`` | ``"simulation"``
    mse : :class:`float`
        Mean squared error of the nominal prediction in z-scored units.
    coverage : :class:`float`
        Fraction of test labels inside the interval, over all outputs.
    channel_mse, channel_coverage : tuple[:class:`float`, ...]
        The same per measured channel.
    n : :class:`int`
        Number of evaluated steps.
    diverged : :class:`bool`
        A free-running rollout became nonfinite and was cut short.
    band : :class:`pandas.DataFrame` | :data:`None`
        Simulation mode only: per step the truth and ``lo/mid/up`` of every
        channel in physical units.
    """
    mode: str
    mse: float
    coverage: float
    channel_mse: tuple[float, ...]
    channel_coverage: tuple[float, ...]
    n: int
    diverged: bool = False
    band: Optional[pd.DataFrame] = field(default=None, compare=False, repr=False)

def _report(mode: str, y: np.ndarray, iv: Interval, diverged: bool = False,
            band: Optional[pd.DataFrame] = None) -> EvaluationReport:
    if y.shape[0] == 0:
        return EvaluationReport(mode, math.nan, math.nan, (), (), 0, diverged, band)
    inside = (y >= iv.lo) & (y <= iv.up)
    return EvaluationReport(
        mode=mode,
        mse=mse(y, iv.mid),
        coverage=float(np.mean(inside)),
        channel_mse=tuple(float(v) for v in np.mean((iv.mid - y) ** 2, axis=0)),
        channel_coverage=tuple(float(v) for v in np.mean(inside, axis=0)),
        n=int(y.shape[0]),
        diverged=diverged,
        band=band,
    )

def evaluate(model: Surrogate, dataset: NarxDataset,
             mode: Literal["prediction", "simulation"] = "prediction") -> EvaluationReport:
    """Evaluate ``model`` on the test split.

    In ``"prediction"`` mode every test window is predicted one step ahead
    from measured history. In ``"simulation"`` mode each trajectory's test
    block is rolled out from its first window, feeding the nominal
    predictions back as lagged measurements while the inputs follow the
    data. A nonfinite rollout is reported, not raised.

    Raises
    ------
    :exc:`~slugmpc.errors.DatasetError`
        The dataset has no test split or an unknown mode was requested.
    """
    if dataset.splits["test"].size == 0:
        raise DatasetError("dataset has no test split")
    layout, norm = dataset.layout, dataset.normalizer
    if mode == "prediction":
        x, y = dataset.subset("test")
        return _report(mode, y, model.predict(x))
    if mode != "simulation":
        raise DatasetError(f"unknown evaluation mode {mode!r}")

    ys: list[np.ndarray] = []
    ivs: list[Interval] = []
    rows: list[dict[str, float]] = []
    diverged = False
    for s, seg in enumerate(dataset.test_segments):
        xs = norm.standardize_features(dataset.x[seg], layout)
        y_true = norm.standardize_y(dataset.y[seg])
        x_cur = xs[:1]
        for t in range(len(seg)):
            iv = model.predict(x_cur)
            if not np.all(np.isfinite(iv.mid)):
                logger.warning("free-running rollout diverged at step %d of test segment %d", t, s)
                diverged = True
                break
            ys.append(y_true[t:t + 1])
            ivs.append(iv)
            row: dict[str, float] = {"segment": s, "step": t}
            phys = [norm.destandardize_y(v[0]) for v in (y_true[t:t + 1], iv.lo, iv.mid, iv.up)]
            for c, name in enumerate(MEASUREMENT_NAMES):
                row[name] = float(phys[0][c])
                row[f"{name}_lo"] = float(phys[1][c])
                row[f"{name}_mid"] = float(phys[2][c])
                row[f"{name}_up"] = float(phys[3][c])
            rows.append(row)
            if t + 1 < len(seg):
                _, us = layout.split(xs[t + 1:t + 2])
                x_cur = layout.shift(x_cur, iv.mid, us[:, 0, :])

    band = pd.DataFrame(rows)
    if not ys:
        return _report(mode, np.empty((0, layout.n_y)), Interval(*(np.empty((0, layout.n_y)),) * 3), diverged, band)
    y_all = np.concatenate(ys)
    iv_all = Interval(*(np.concatenate([getattr(iv, f) for iv in ivs]) for f in Interval._fields))
    return _report(mode, y_all, iv_all, diverged, band)

_KINDS: dict[str, Any] = {"nn": NnSurrogate, "cqr": CqrSurrogate, "bll": BllSurrogate}

def save_surrogate(model: Surrogate, path: str | PathLike, metadata: Optional[Mapping[str, Any]] = None) -> None:
    """Write ``model`` as a self-describing JSON artifact.

    ``metadata`` should carry at least the training seed and the dataset
    digest so the model can be traced back to its data.
    """
    blob = {
        "format": ARTIFACT_FORMAT,
        "version": ARTIFACT_VERSION,
        "kind": model.kind,
        "layout": dataclasses.asdict(model.layout),
        "normalizer": model.normalizer.to_dict(),
        "model": model.to_dict(),
        "metadata": dict(metadata or {}),
    }
    with writing(path):
        Path(path).write_text(json.dumps(blob), encoding="utf-8")

def load_surrogate(path: str | PathLike) -> tuple[Surrogate, dict[str, Any]]:
    """Read an artifact written by :func:`save_surrogate`.

    Returns
    -------
    tuple[:class:`Surrogate`, dict]
        The model and its metadata.

    Raises
    ------
    :exc:`~slugmpc.errors.DatasetError`
        The file is missing, unreadable or not a surrogate artifact.
    """
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as err:
        raise DatasetError(f"cannot read model {path}: {err.strerror}") from None
    except json.JSONDecodeError as err:
        raise DatasetError(f"{path} is not valid JSON: {err.msg}") from None
    if not isinstance(blob, dict) or blob.get("format") != ARTIFACT_FORMAT:
        raise DatasetError(f"{path} is not a {ARTIFACT_FORMAT} artifact")
    try:
        cls = _KINDS[blob["kind"]]
        layout = from_mapping(NarxLayout, blob["layout"])
        normalizer = Normalizer.from_dict(blob["normalizer"])
        model = cls.from_dict(layout, normalizer, blob["model"])
    except (KeyError, TypeError, ValueError) as err:
        raise DatasetError(f"{path}: malformed artifact ({err})") from None
    return model, dict(blob.get("metadata", {}))
