"""Open-loop excitation of the plant for system identification."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from os import PathLike
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd

from ._utils import child_seeds, make_rng, writing
from .errors import ConfigError, SimulationError
from .params import Inputs
from .plant import Measurement, Plant, PlantConfig, read_trajectory, trajectory_frame, write_trajectory

__all__ = (
    "ExcitationPolicy",
    "excitation_signal",
    "generate_data",
    "write_dataset",
    "read_dataset",
)

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class ExcitationPolicy:
    """Random piecewise-constant inputs.

    Every input is drawn uniformly from its range and held for a geometric
    number of measurement periods with mean :attr:`mean_hold`. All inputs
    switch together.

    Attributes
    ----------
    q_pm, q_air, q_tm : tuple[:class:`float`, :class:`float`]
        Ranges of the manipulated flows (m³/s); they coincide with the
        default box bounds of the controller.
    w_cryst : tuple[:class:`float`, :class:`float`]
        Range of the seed loading; a zero-width range keeps it fixed.
    mean_hold : :class:`float`
        Mean hold time in measurement periods (at least 1).
    warmup : :class:`float`
        Time simulated at mid-range inputs before logging starts (s).
    seed : :class:`int`
    """
    q_pm: tuple[float, float] = (1.5e-7, 4.5e-7)
    q_air: tuple[float, float] = (1.5e-7, 4.5e-7)
    q_tm: tuple[float, float] = (1.0e-5, 3.0e-5)
    w_cryst: tuple[float, float] = (0.01, 0.01)
    mean_hold: float = 5.0
    warmup: float = 1500.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("q_pm", "q_air", "q_tm", "w_cryst"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and 0 <= lo <= hi):
                raise ConfigError(name, f"range must satisfy 0 <= low <= high, got {(lo, hi)!r}")
        if not self.mean_hold >= 1:
            raise ConfigError("mean_hold", "must be at least one period")
        if not (math.isfinite(self.warmup) and self.warmup >= 0):
            raise ConfigError("warmup", "must be a finite non-negative duration")

    @property
    def ranges(self) -> np.ndarray:
        """Lower and upper bounds ``(2, 4)`` in :data:`~slugmpc.params.INPUT_NAMES` order."""
        return np.array((self.q_pm, self.q_air, self.q_tm, self.w_cryst), dtype=float).T

    @property
    def midpoint(self) -> Inputs:
        return Inputs.from_array(self.ranges.mean(axis=0))

def excitation_signal(policy: ExcitationPolicy, rng: np.random.Generator) -> Iterator[Inputs]:
    """Endless stream of inputs, one per measurement period."""
    lo, hi = policy.ranges
    while True:
        hold = int(rng.geometric(1.0 / policy.mean_hold))
        inputs = Inputs.from_array(rng.uniform(lo, hi))
        for _ in range(hold):
            yield inputs

def _split_samples(n_samples: int, n_runs: int) -> list[int]:
    base, extra = divmod(n_samples, n_runs)
    return [base + (i < extra) for i in range(n_runs)]

def _run(policy: ExcitationPolicy, n_samples: int, config: PlantConfig,
         seed: np.random.SeedSequence, index: int) -> pd.DataFrame:
    plant_ss, signal_ss = seed.spawn(2)
    plant = Plant.from_config(config, seed=int(plant_ss.generate_state(1)[0]))
    signal = excitation_signal(policy, make_rng(signal_ss))
    times: list[float] = []
    inputs: list[Inputs] = []
    ys: list[Measurement] = []
    try:
        plant.run(policy.midpoint, policy.warmup)
        for _, u in zip(range(n_samples), signal):
            t, y = plant.t, plant.measurement
            plant.sample(u)
            times.append(t)
            inputs.append(u)
            ys.append(y)
    except SimulationError as err:
        logger.error("run %d aborted after %d of %d samples: %s", index, len(times), n_samples, err)
    else:
        logger.info("run %d: %d samples up to t = %.0f s", index, len(times), plant.t)
    return trajectory_frame(times, inputs, ys)

def generate_data(policy: ExcitationPolicy, n_samples: int, plant_config: Optional[PlantConfig] = None,
                  n_runs: int = 1) -> list[pd.DataFrame]:
    """Simulate the plant under random excitation.

    Parameters
    ----------
    policy : :class:`ExcitationPolicy`
        Input ranges, hold times, warm-up and seed.
    n_samples : :class:`int`
        Total number of logged samples, spread as evenly as possible over
        the runs.
    plant_config : :class:`~slugmpc.plant.PlantConfig` | :data:`None`
        Plant parameters and simulator settings.
    n_runs : :class:`int`
        Number of independently seeded runs.

    Returns
    -------
    list[:class:`pandas.DataFrame`]
        One trajectory per run in the layout of
        :data:`~slugmpc.plant.TRAJECTORY_COLUMNS`. Row ``k`` holds the
        measurement at ``t_k`` and the input applied from ``t_k`` on. If the
        simulator fails, that run is cut short and keeps the rows logged so
        far; the other runs are unaffected.

    Example
    -------
    .. code-block:: python

        runs = generate_data(ExcitationPolicy(seed=3), 1000, n_runs=2)
        write_dataset(runs, "out/data")
    """
    if not isinstance(n_samples, int) or n_samples < 0:
        raise ConfigError("n_samples", f"must be a non-negative integer, got {n_samples!r}")
    if not isinstance(n_runs, int) or n_runs < 1:
        raise ConfigError("n_runs", f"must be a positive integer, got {n_runs!r}")
    config = plant_config or PlantConfig()
    if n_samples == 0:
        return [trajectory_frame([], [], [])]
    counts = _split_samples(n_samples, n_runs)
    seeds = child_seeds(policy.seed, n_runs)
    return [_run(policy, n, config, ss, i) for i, (n, ss) in enumerate(zip(counts, seeds)) if n]

def write_dataset(runs: Sequence[pd.DataFrame], directory: str | PathLike) -> list[Path]:
    """Write ``runs`` as ``run_000.csv``, ``run_001.csv``, ... into ``directory``."""
    directory = Path(directory)
    with writing(directory):
        directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(runs):
        path = directory / f"run_{i:03d}.csv"
        write_trajectory(frame, path)
        paths.append(path)
    return paths

def read_dataset(path: str | PathLike) -> list[pd.DataFrame]:
    """Read one trajectory CSV, or every ``*.csv`` of a directory in name order."""
    path = Path(path)
    if path.is_dir():
        return [read_trajectory(p) for p in sorted(path.glob("*.csv"))]
    return [read_trajectory(path)]
