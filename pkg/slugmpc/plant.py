"""The slug flow crystallizer: slugs coupled to the tempering-medium grid.

One plant step follows the sequencing method. Every slug moves by its local
velocity, slugs past the outlet leave the tube, the remaining slugs
exchange heat with the tempering-medium cell they arrive in and update
their populations, a new slug enters at the inlet and finally the
tempering medium is stepped with the accumulated slug heat.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from os import PathLike
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from ._utils import make_rng, writing
from .errors import DatasetError
from .hydraulics import pressure_and_velocity_profile
from .kinetics import agglomeration_kernel
from .params import INPUT_NAMES, MEASUREMENT_NAMES, Inputs, PlantParams, SimConfig
from .slug import Slug, heat_transfer_area, mc_population_step, slug_ode_step, spawn_slug
from .tempering import TemperingGrid, heat_split, new_grid, tm_grid_step

__all__ = (
    "PlantConfig",
    "SimState",
    "Measurement",
    "AxialProfile",
    "Plant",
    "initial_state",
    "advance",
    "measure_outlet",
    "characteristic_diameters",
    "TRAJECTORY_COLUMNS",
    "trajectory_frame",
    "write_trajectory",
    "read_trajectory",
)

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t",) + INPUT_NAMES + MEASUREMENT_NAMES
"""Header of trajectory CSV files: row ``k`` holds ``(t_k, u_k, y_k)``."""

@dataclass(frozen=True)
class PlantConfig:
    """Plant parameters and simulator settings as one config file.

    The JSON form is ``{"params": {...}, "sim": {...}}``; either key may be
    omitted to keep the defaults.
    """
    params: PlantParams = field(default_factory=PlantParams)
    sim: SimConfig = field(default_factory=SimConfig)

@dataclass
class SimState:
    """Complete simulator state.

    Attributes
    ----------
    slugs : list[:class:`~slugmpc.slug.Slug`]
        Active slugs ordered from inlet to outlet.
    grid : :class:`~slugmpc.tempering.TemperingGrid`
        Tempering-medium field.
    t : :class:`float`
        Simulation time (s).
    dt : :class:`float`
        Fixed step (s).
    rng : :class:`numpy.random.Generator`
        Generator for seeding and agglomeration. Owned by this state.
    slug_duty : :class:`float`
        Heat that flowed into all slugs during the last step (W).
    sources : :class:`numpy.ndarray`
        Per-cell heat flow into the tempering medium from the slugs during
        the last step (W).
    """
    slugs: list[Slug]
    grid: TemperingGrid
    t: float
    dt: float
    rng: np.random.Generator
    slug_duty: float = 0.0
    sources: np.ndarray = field(default_factory=lambda: np.zeros(0))

@dataclass(frozen=True)
class Measurement:
    """The six measured outlet states.

    Attributes
    ----------
    t_pm, t_tm : :class:`float`
        Process-medium and tempering-medium outlet temperatures (K).
    c_pm : :class:`float`
        Outlet concentration (kg/kg).
    d10, d50, d90 : :class:`float`
        Characteristic diameters of the outlet population (m).
    t : :class:`float`
        Timestamp (s).
    empty : :class:`bool`
        The outlet population was empty; the diameters are ``0``.
    held : :class:`bool`
        No slug left the tube since the previous measurement; the slug
        states are those of the previous measurement.
    """
    t_pm: float
    t_tm: float
    c_pm: float
    d10: float
    d50: float
    d90: float
    t: float = 0.0
    empty: bool = False
    held: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.t_pm, self.t_tm, self.c_pm, self.d10, self.d50, self.d90], dtype=float)

class AxialProfile(NamedTuple):
    slugs: pd.DataFrame
    """One row per slug: ``z, c_PM, T_PM, n_particles, d10, d50, d90``."""
    tempering: pd.DataFrame
    """One row per cell: ``z`` (cell centre) and ``T_TM``."""

def characteristic_diameters(lengths: np.ndarray, quantiles: Sequence[float] = (0.1, 0.5, 0.9),
                             moment: int = 3) -> np.ndarray:
    """Weighted quantiles of a particle population.

    ``d_q`` is the smallest length at which the cumulative sum of ``L**moment``
    over the ascending lengths first reaches the fraction ``q`` of the total.
    ``moment=3`` weights by volume.

    Parameters
    ----------
    lengths : :class:`numpy.ndarray`
        Particle lengths (m); must not be empty.
    quantiles : Sequence[:class:`float`]
        Fractions in ``(0, 1]``, by default ``(0.1, 0.5, 0.9)``.
    moment : :class:`int`
        Weighting moment, by default ``3``.

    Example
    -------
    .. code-block:: python

        >>> characteristic_diameters(np.array([1, 2, 3, 4, 5]) * 1e-4)
        array([0.0003, 0.0005, 0.0005])
    """
    ordered = np.sort(np.asarray(lengths, dtype=float))
    if ordered.size == 0:
        raise ValueError("empty population")
    cum = np.cumsum(ordered ** moment)
    cum /= cum[-1]
    idx = np.searchsorted(cum, np.asarray(quantiles, dtype=float), side="left")
    return ordered[np.minimum(idx, ordered.size - 1)]

def initial_state(params: PlantParams, sim: SimConfig, seed: Optional[int] = None) -> SimState:
    """An empty tube with the tempering medium at its inlet temperature."""
    return SimState(
        slugs=[],
        grid=new_grid(params, sim.n_cells),
        t=0.0,
        dt=sim.dt,
        rng=make_rng(sim.seed if seed is None else seed),
        sources=np.zeros(sim.n_cells),
    )

def _tm_substeps(grid: TemperingGrid, dt: float, target: float) -> int:
    courant = grid.velocity * dt / grid.dz
    diffusion_number = grid.diffusion * dt / grid.dz ** 2
    return max(1, math.ceil(courant / target), math.ceil(diffusion_number / 0.5))

def advance(state: SimState, inputs: Inputs, params: PlantParams,
            sim: SimConfig) -> tuple[SimState, list[Slug]]:
    """Advance the plant by one step ``state.dt``.

    Parameters
    ----------
    state : :class:`SimState`
        State before the step. Its generator is advanced; everything else is
        left untouched.
    inputs : :class:`~slugmpc.params.Inputs`
        Inputs held over the step.
    params : :class:`~slugmpc.params.PlantParams`
        Plant parameters.
    sim : :class:`~slugmpc.params.SimConfig`
        Simulator settings.

    Returns
    -------
    tuple[:class:`SimState`, list[:class:`~slugmpc.slug.Slug`]]
        The new state and the slugs that left the tube, oldest first.

    Raises
    ------
    :exc:`~slugmpc.errors.SimulationError`
        Propagated from the slug and grid updates, including rejected inputs.
    """
    dt = state.dt
    profile = pressure_and_velocity_profile(inputs, params)
    grid = replace(state.grid, velocity=inputs.q_tm / params.area_annulus)
    sources = np.zeros(grid.n_cells)
    duties: list[float] = []
    survivors: list[Slug] = []
    outlet: list[Slug] = []

    for slug in state.slugs:
        z_new = slug.z + dt * float(profile.velocity(slug.z))
        if z_new > params.length:
            outlet.append(replace(slug, z=z_new))
            continue
        ode = slug_ode_step(
            slug, grid.temperature_at(z_new), heat_transfer_area(slug.mass, params), dt, params,
            sim.solubility_unit,
        )
        for k, share in heat_split(slug.z, z_new, ode.duty, grid).items():
            sources[k] -= share
        duties.append(ode.duty)
        kernel = float(agglomeration_kernel(ode.growth, float(profile.velocity(z_new)), params.beta0))
        pop = mc_population_step(
            replace(ode.slug, z=z_new), ode.growth, kernel, dt, state.rng, params,
            scale=sim.agglomeration_scale,
        )
        survivors.append(pop.slug)

    # slugs are stored inlet first, so the oldest outlet slug is the last one seen
    outlet.reverse()
    survivors.insert(0, spawn_slug(inputs, params, dt, state.rng))

    n_sub = _tm_substeps(grid, dt, sim.courant_target)
    for _ in range(n_sub):
        grid = tm_grid_step(grid, sources, dt / n_sub, params)

    new_state = replace(
        state, slugs=survivors, grid=grid, t=state.t + dt,
        slug_duty=math.fsum(duties), sources=sources,
    )
    return new_state, outlet

def measure_outlet(events: Sequence[Slug], grid: TemperingGrid, params: PlantParams,
                   sim: SimConfig, rng: np.random.Generator, t: float = 0.0,
                   previous: Optional[Measurement] = None) -> Measurement:
    """Measure the outlet from the slugs that left since the last call.

    The most recent outlet slug stands for one physical slug: its
    population is reduced by uniform sampling without replacement to
    ``round(N * V_real / V_slug)`` particles (at least one) before the
    characteristic diameters are computed. Without outlet events the slug
    states of ``previous`` are held. The tempering-medium temperature is
    always read from the last grid cell.

    Parameters
    ----------
    events : Sequence[:class:`~slugmpc.slug.Slug`]
        Outlet slugs since the previous measurement, oldest first.
    grid : :class:`~slugmpc.tempering.TemperingGrid`
        Current tempering-medium field.
    params, sim
        Plant parameters and simulator settings.
    rng : :class:`numpy.random.Generator`
        Generator for the subsample.
    t : :class:`float`
        Timestamp of the measurement.
    previous : :class:`Measurement` | :data:`None`
        Measurement to hold when ``events`` is empty.
    """
    t_tm = float(grid.temperatures[-1])
    if not events:
        if previous is None:
            return Measurement(params.t_pm_in, t_tm, params.c_in, 0.0, 0.0, 0.0, t=t, empty=True, held=True)
        return replace(previous, t_tm=t_tm, t=t, held=True)

    slug = events[-1]
    n = slug.n_particles
    if n == 0:
        return Measurement(slug.temperature, t_tm, slug.c, 0.0, 0.0, 0.0, t=t, empty=True)
    keep = int(round(n * sim.slug_volume(params) / slug.volume(params)))
    keep = min(max(keep, 1), n)
    lengths = slug.lengths if keep == n else rng.choice(slug.lengths, size=keep, replace=False)
    d10, d50, d90 = characteristic_diameters(lengths, moment=sim.size_moment)
    return Measurement(slug.temperature, t_tm, slug.c, float(d10), float(d50), float(d90), t=t)

class Plant:
    """The simulated crystallizer, stepped in simulation steps or in
    measurement periods.

    Parameters
    ----------
    params : :class:`~slugmpc.params.PlantParams` | :data:`None`
        Plant parameters, defaults if :data:`None`.
    sim : :class:`~slugmpc.params.SimConfig` | :data:`None`
        Simulator settings, defaults if :data:`None`.
    seed : :class:`int` | :data:`None`
        Overrides ``sim.seed``.

    Attributes
    ----------
    params : :class:`~slugmpc.params.PlantParams`
    sim : :class:`~slugmpc.params.SimConfig`
    state : :class:`SimState`
    measurement : :class:`Measurement`
        The latest measurement.
    """
    params: PlantParams
    sim: SimConfig
    state: SimState
    measurement: Measurement

    def __init__(self, params: Optional[PlantParams] = None, sim: Optional[SimConfig] = None,
                 seed: Optional[int] = None) -> None:
        self.params = params or PlantParams()
        self.sim = sim or SimConfig()
        self.state = initial_state(self.params, self.sim, seed)
        self._pending: list[Slug] = []
        self.measurement = measure_outlet((), self.state.grid, self.params, self.sim, self.state.rng)

        # explicit Euler on the slug temperature: T - T_TM is scaled by (1 - factor) per step
        factor = 4 * self.params.u_pm_tm * self.sim.dt / (self.params.rho_pm * self.params.cp_pm * self.params.d_i_pm)
        if factor > 1:
            logger.warning(
                "slug heat step factor dt*U*A/(m*c_p) = %.3g > 1; slug temperatures oscillate while relaxing",
                factor,
            )

    @classmethod
    def from_config(cls, config: PlantConfig, seed: Optional[int] = None) -> Plant:
        return cls(config.params, config.sim, seed)

    @property
    def t(self) -> float:
        return self.state.t

    def advance(self, inputs: Inputs) -> list[Slug]:
        """Run one simulation step and return the slugs that left the tube."""
        self.state, outlet = advance(self.state, inputs, self.params, self.sim)
        self._pending.extend(outlet)
        return outlet

    def measure(self) -> Measurement:
        """Measure the outlet and clear the pending outlet events."""
        self.measurement = measure_outlet(
            self._pending, self.state.grid, self.params, self.sim, self.state.rng,
            t=self.state.t, previous=self.measurement,
        )
        self._pending.clear()
        return self.measurement

    def sample(self, inputs: Inputs) -> Measurement:
        """Hold ``inputs`` for one measurement period, then measure."""
        for _ in range(self.sim.steps_per_sample):
            self.advance(inputs)
        return self.measure()

    def run(self, inputs: Inputs, duration: float) -> Measurement:
        """Hold ``inputs`` for ``duration`` seconds, rounded up to whole
        measurement periods, and return the last measurement."""
        periods = max(1, math.ceil(duration / self.sim.measurement_period - 1e-9))
        for _ in range(periods):
            self.sample(inputs)
        return self.measurement

    def simulate(self, schedule: Sequence[Inputs]) -> pd.DataFrame:
        """Apply one input per measurement period and record the trajectory.

        Row ``k`` holds the measurement at ``t_k`` and the input applied
        from ``t_k`` on, so the frame has ``len(schedule)`` rows.
        """
        times: list[float] = []
        ys: list[Measurement] = []
        for inputs in schedule:
            times.append(self.state.t)
            ys.append(self.measurement)
            self.sample(inputs)
        return trajectory_frame(times, schedule, ys)

    def profile(self) -> AxialProfile:
        """Slug-wise and cell-wise axial state at the current time."""
        rows = []
        for slug in self.state.slugs:
            if slug.n_particles:
                d10, d50, d90 = characteristic_diameters(slug.lengths, moment=self.sim.size_moment)
            else:
                d10 = d50 = d90 = 0.0
            rows.append((slug.z, slug.c, slug.temperature, slug.n_particles, d10, d50, d90))
        slugs = pd.DataFrame(rows, columns=["z", "c_PM", "T_PM", "n_particles", "d10", "d50", "d90"])
        grid = self.state.grid
        tempering = pd.DataFrame({
            "z": (np.arange(grid.n_cells) + 0.5) * grid.dz,
            "T_TM": grid.temperatures,
        })
        return AxialProfile(slugs, tempering)

def trajectory_frame(times: Sequence[float], inputs: Sequence[Inputs],
                     measurements: Sequence[Measurement]) -> pd.DataFrame:
    if not (len(times) == len(inputs) == len(measurements)):
        raise DatasetError("times, inputs and measurements must have equal length")
    data = np.column_stack((
        np.asarray(times, dtype=float).reshape(-1, 1),
        np.array([u.as_array() for u in inputs]).reshape(len(times), len(INPUT_NAMES)),
        np.array([y.as_array() for y in measurements]).reshape(len(times), len(MEASUREMENT_NAMES)),
    ))
    return pd.DataFrame(data, columns=list(TRAJECTORY_COLUMNS))

def write_trajectory(frame: pd.DataFrame, path: str | PathLike) -> None:
    with writing(path):
        frame.loc[:, list(TRAJECTORY_COLUMNS)].to_csv(path, index=False, float_format="%.10g")

def read_trajectory(path: str | PathLike) -> pd.DataFrame:
    """Read a trajectory CSV, checking its header.

    Raises
    ------
    :exc:`~slugmpc.errors.DatasetError`
        The file cannot be read, or its columns differ from
        :data:`TRAJECTORY_COLUMNS`.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise DatasetError(f"cannot read trajectory {path}: {err}") from None
    if tuple(frame.columns) != TRAJECTORY_COLUMNS:
        raise DatasetError(f"{path}: expected columns {','.join(TRAJECTORY_COLUMNS)}")
    if not np.all(np.isfinite(frame.to_numpy(dtype=float))):
        raise DatasetError(f"{path}: nonfinite values")
    return frame.astype(float)
