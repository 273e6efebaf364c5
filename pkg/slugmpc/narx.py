"""NARX windows, normalisation and dataset splits.

A feature row stacks the lagged measurements newest first, followed by the
lagged inputs newest first::

    X_k = (y_k, y_{k-1}, ..., y_{k-l}, u_k, u_{k-1}, ..., u_{k-l})

and its label is ``y_{k+1}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from ._utils import array_digest, make_rng
from .errors import ConfigError, DatasetError
from .params import INPUT_NAMES, MEASUREMENT_NAMES

__all__ = (
    "NarxLayout",
    "Normalizer",
    "NarxDataset",
    "SplitConfig",
    "narx_windows",
    "build_narx_dataset",
)

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class NarxLayout:
    """Shape of a NARX feature row.

    Attributes
    ----------
    lag : :class:`int`
        Number of past samples ``l`` besides the current one.
    use_disturbance : :class:`bool`
        Append the measured seed loading ``w_cryst`` as a fourth input channel.
    """
    lag: int = 4
    use_disturbance: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.lag, int) or self.lag < 0:
            raise ConfigError("lag", f"must be a non-negative integer, got {self.lag!r}")

    @property
    def n_y(self) -> int:
        return len(MEASUREMENT_NAMES)

    @property
    def input_names(self) -> tuple[str, ...]:
        return INPUT_NAMES if self.use_disturbance else INPUT_NAMES[:3]

    @property
    def n_u(self) -> int:
        return len(self.input_names)

    @property
    def window(self) -> int:
        return self.lag + 1

    @property
    def n_features(self) -> int:
        return self.window * (self.n_y + self.n_u)

    @property
    def y_block(self) -> slice:
        return slice(0, self.window * self.n_y)

    @property
    def u_block(self) -> slice:
        return slice(self.window * self.n_y, self.n_features)

    def assemble(self, ys: np.ndarray, us: np.ndarray) -> np.ndarray:
        """Feature row(s) from histories ordered newest first.

        ``ys`` has shape ``(..., lag + 1, n_y)`` and ``us`` has shape
        ``(..., lag + 1, n_u)``.
        """
        lead = ys.shape[:-2]
        return np.concatenate(
            (ys.reshape(*lead, self.window * self.n_y), us.reshape(*lead, self.window * self.n_u)),
            axis=-1,
        )

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inverse of :meth:`assemble`."""
        lead = x.shape[:-1]
        ys = x[..., self.y_block].reshape(*lead, self.window, self.n_y)
        us = x[..., self.u_block].reshape(*lead, self.window, self.n_u)
        return ys, us

    def shift(self, x: np.ndarray, y_next: np.ndarray, u_next: np.ndarray) -> np.ndarray:
        """Feature row one sample later: ``y_next`` and ``u_next`` become
        the newest entries and the oldest ones drop out."""
        ys, us = self.split(x)
        ys = np.concatenate((y_next[..., None, :], ys[..., :-1, :]), axis=-2)
        us = np.concatenate((u_next[..., None, :], us[..., :-1, :]), axis=-2)
        return self.assemble(ys, us)

@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-score statistics of measurements and inputs.

    Channels with zero spread get a scale of ``1`` so they pass through
    shifted but unscaled.
    """
    y_mean: np.ndarray
    y_std: np.ndarray
    u_mean: np.ndarray
    u_std: np.ndarray

    @classmethod
    def fit(cls, y: np.ndarray, u: np.ndarray) -> Normalizer:
        y_std = np.std(y, axis=0)
        u_std = np.std(u, axis=0)
        return cls(
            np.mean(y, axis=0),
            np.where(y_std > 0, y_std, 1.0),
            np.mean(u, axis=0),
            np.where(u_std > 0, u_std, 1.0),
        )

    def standardize_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_std

    def destandardize_y(self, y: np.ndarray) -> np.ndarray:
        return y * self.y_std + self.y_mean

    def standardize_u(self, u: np.ndarray) -> np.ndarray:
        return (u - self.u_mean) / self.u_std

    def destandardize_u(self, u: np.ndarray) -> np.ndarray:
        return u * self.u_std + self.u_mean

    def standardize_features(self, x: np.ndarray, layout: NarxLayout) -> np.ndarray:
        ys, us = layout.split(x)
        return layout.assemble(self.standardize_y(ys), self.standardize_u(us))

    def destandardize_features(self, x: np.ndarray, layout: NarxLayout) -> np.ndarray:
        ys, us = layout.split(x)
        return layout.assemble(self.destandardize_y(ys), self.destandardize_u(us))

    def to_dict(self) -> dict[str, list[float]]:
        return {k: getattr(self, k).tolist() for k in ("y_mean", "y_std", "u_mean", "u_std")}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Normalizer:
        return cls(*(np.asarray(data[k], dtype=float) for k in ("y_mean", "y_std", "u_mean", "u_std")))

@dataclass(frozen=True)
class SplitConfig:
    """Fractions of the NARX windows per split.

    The test fraction is taken as the last chronological block of every
    trajectory. The remaining windows are shuffled and divided into
    training, validation and calibration in the given proportions; the
    training split receives the rest.
    """
    val_fraction: float = 0.15
    cal_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self) -> None:
        for name in ("val_fraction", "cal_fraction", "test_fraction"):
            value = getattr(self, name)
            if not 0 <= value < 1:
                raise ConfigError(name, f"must lie in [0, 1), got {value!r}")
        if self.val_fraction + self.cal_fraction >= 1:
            raise ConfigError("cal_fraction", "val_fraction + cal_fraction must be below 1")

@dataclass(frozen=True)
class NarxDataset:
    """Windows of one or more trajectories, in physical units.

    Attributes
    ----------
    layout : :class:`NarxLayout`
    x, y : :class:`numpy.ndarray`
        Features ``(N, n_features)`` and labels ``(N, n_y)``.
    splits : dict[str, :class:`numpy.ndarray`]
        Row indices of ``"train"``, ``"val"``, ``"cal"`` and ``"test"``.
    test_segments : tuple[:class:`numpy.ndarray`, ...]
        Consecutive row indices of the test block of each trajectory, in
        time order. Used for free-running evaluation.
    normalizer : :class:`Normalizer`
        Statistics of the lag-0 columns of the training rows.
    digest : :class:`str`
        SHA-256 of ``x`` and ``y``.
    """
    layout: NarxLayout
    x: np.ndarray
    y: np.ndarray
    splits: Mapping[str, np.ndarray]
    test_segments: tuple[np.ndarray, ...]
    normalizer: Normalizer
    digest: str

    def __len__(self) -> int:
        return int(self.x.shape[0])

    def subset(self, name: str, normalized: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Features and labels of one split, z-scored unless ``normalized=False``."""
        try:
            idx = self.splits[name]
        except KeyError:
            raise DatasetError(f"unknown split {name!r}") from None
        x, y = self.x[idx], self.y[idx]
        if normalized:
            return self.normalizer.standardize_features(x, self.layout), self.normalizer.standardize_y(y)
        return x, y

def narx_windows(frame: pd.DataFrame, layout: NarxLayout) -> tuple[np.ndarray, np.ndarray]:
    """All windows of one trajectory, in time order.

    A trajectory of ``K`` samples yields ``K - lag - 1`` windows.

    Raises
    ------
    :exc:`~slugmpc.errors.DatasetError`
        Fewer than ``lag + 2`` samples or missing columns.
    """
    missing = [c for c in MEASUREMENT_NAMES + layout.input_names if c not in frame.columns]
    if missing:
        raise DatasetError(f"trajectory lacks columns {missing}")
    y = frame.loc[:, list(MEASUREMENT_NAMES)].to_numpy(dtype=float)
    u = frame.loc[:, list(layout.input_names)].to_numpy(dtype=float)
    k_total = y.shape[0]
    if k_total < layout.lag + 2:
        raise DatasetError(f"trajectory of {k_total} samples is shorter than lag + 2 = {layout.lag + 2}")
    ks = np.arange(layout.lag, k_total - 1)
    back = np.arange(layout.window)
    rows = ks[:, None] - back[None, :]
    return layout.assemble(y[rows], u[rows]), y[ks + 1]

def build_narx_dataset(trajectories: Sequence[pd.DataFrame], layout: Optional[NarxLayout] = None,
                       split: Optional[SplitConfig] = None, seed: int = 0,
                       sample_period: Optional[float] = 50.0) -> NarxDataset:
    """Window trajectories and split the rows.

    Parameters
    ----------
    trajectories : Sequence[:class:`pandas.DataFrame`]
        Trajectories in the CSV layout of :data:`slugmpc.plant.TRAJECTORY_COLUMNS`.
        Windows never cross from one trajectory into the next.
    layout : :class:`NarxLayout` | :data:`None`
        Feature layout, ``lag=4`` without disturbance channel by default.
    split : :class:`SplitConfig` | :data:`None`
        Split fractions.
    seed : :class:`int`
        Seed of the shuffle, by default ``0``.
    sample_period : :class:`float` | :data:`None`
        Expected spacing of the ``t`` column (s). :data:`None` skips the check.

    Raises
    ------
    :exc:`~slugmpc.errors.DatasetError`
        A trajectory is too short, irregularly sampled or the training split
        would be empty.
    """
    layout = layout or NarxLayout()
    split = split or SplitConfig()
    if not trajectories:
        raise DatasetError("no trajectories given")

    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    pool: list[np.ndarray] = []
    segments: list[np.ndarray] = []
    offset = 0
    for i, frame in enumerate(trajectories):
        if sample_period is not None and "t" in frame.columns and len(frame) > 1:
            steps = np.diff(frame["t"].to_numpy(dtype=float))
            if not np.allclose(steps, sample_period, rtol=1e-6, atol=1e-9):
                raise DatasetError(f"trajectory {i} is not sampled every {sample_period} s")
        x, y = narx_windows(frame, layout)
        n = x.shape[0]
        n_test = int(round(split.test_fraction * n))
        idx = np.arange(offset, offset + n)
        pool.append(idx[: n - n_test])
        if n_test:
            segments.append(idx[n - n_test:])
        xs.append(x)
        ys.append(y)
        offset += n

    x_all = np.concatenate(xs)
    y_all = np.concatenate(ys)
    rest = np.concatenate(pool)
    make_rng(seed).shuffle(rest)
    n_val = int(round(split.val_fraction * rest.size))
    n_cal = int(round(split.cal_fraction * rest.size))
    val, cal, train = rest[:n_val], rest[n_val:n_val + n_cal], rest[n_val + n_cal:]
    if train.size == 0:
        raise DatasetError("training split is empty")
    test = np.concatenate(segments) if segments else np.empty(0, dtype=int)

    lag0_y = x_all[train][:, : layout.n_y]
    lag0_u = x_all[train][:, layout.u_block][:, : layout.n_u]
    normalizer = Normalizer.fit(lag0_y, lag0_u)
    logger.info(
        "NARX dataset: %d windows (train %d, val %d, cal %d, test %d), %d features",
        x_all.shape[0], train.size, val.size, cal.size, test.size, layout.n_features,
    )
    return NarxDataset(
        layout=layout,
        x=x_all,
        y=y_all,
        splits={"train": np.sort(train), "val": np.sort(val), "cal": np.sort(cal), "test": test},
        test_segments=tuple(segments),
        normalizer=normalizer,
        digest=array_digest(x_all, y_all),
    )
