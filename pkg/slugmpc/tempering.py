"""Eulerian finite-volume model of the tempering medium in the outer jacket.

The jacket temperature obeys a 1-D convection-diffusion equation with
sources: heat from the slugs and losses to the environment. Convective
fluxes use a fifth-order WENO reconstruction with Z-type weights, diffusion
uses second-order central differences, and the update is explicit Euler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ._utils import compensated_sum
from .errors import CourantError, SimulationError
from .params import PlantParams

__all__ = (
    "TemperingGrid",
    "weno5_interface_values",
    "convective_rate",
    "tm_grid_step",
    "heat_split",
    "new_grid",
)

WENO_EPS = 1e-40
_LINEAR_WEIGHTS = (0.1, 0.6, 0.3)

@dataclass(frozen=True)
class TemperingGrid:
    """Cell-averaged tempering-medium temperatures.

    Attributes
    ----------
    dz : :class:`float`
        Cell width (m).
    temperatures : :class:`numpy.ndarray`
        Cell temperatures from inlet to outlet (K).
    velocity : :class:`float`
        Co-current tempering-medium velocity (m/s).
    diffusion : :class:`float`
        Axial dispersion coefficient (m²/s).
    """
    dz: float
    temperatures: np.ndarray
    velocity: float
    diffusion: float

    @property
    def n_cells(self) -> int:
        return int(self.temperatures.size)

    @property
    def length(self) -> float:
        return self.dz * self.n_cells

    def cell_index(self, z: float) -> int:
        """Index of the cell containing ``z``, clipped to the grid."""
        return min(max(int(z // self.dz), 0), self.n_cells - 1)

    def temperature_at(self, z: float) -> float:
        return float(self.temperatures[self.cell_index(z)])

def new_grid(params: PlantParams, n_cells: int, velocity: float = 0.0,
             temperature: Optional[float] = None) -> TemperingGrid:
    """Uniform grid over the crystallizer, initialised to ``temperature``
    (the TM inlet temperature by default)."""
    t0 = params.t_tm_in if temperature is None else temperature
    return TemperingGrid(
        dz=params.length / n_cells,
        temperatures=np.full(n_cells, t0, dtype=float),
        velocity=velocity,
        diffusion=params.diffusion_tm,
    )

def weno5_interface_values(padded: np.ndarray) -> np.ndarray:
    """Upwind (left-biased) WENO5-Z reconstruction at cell interfaces.

    Parameters
    ----------
    padded : :class:`numpy.ndarray`
        Cell averages including ghost cells, length ``M >= 5``.

    Returns
    -------
    :class:`numpy.ndarray`
        ``M - 4`` values at the interfaces ``i + 1/2`` for
        ``i = 2 .. M - 3``, reconstructed from the cells on their left.
    """
    um2 = padded[:-4]
    um1 = padded[1:-3]
    u0 = padded[2:-2]
    up1 = padded[3:-1]
    up2 = padded[4:]

    q0 = (2 * um2 - 7 * um1 + 11 * u0) / 6
    q1 = (-um1 + 5 * u0 + 2 * up1) / 6
    q2 = (2 * u0 + 5 * up1 - up2) / 6

    b0 = 13 / 12 * (um2 - 2 * um1 + u0) ** 2 + 0.25 * (um2 - 4 * um1 + 3 * u0) ** 2
    b1 = 13 / 12 * (um1 - 2 * u0 + up1) ** 2 + 0.25 * (um1 - up1) ** 2
    b2 = 13 / 12 * (u0 - 2 * up1 + up2) ** 2 + 0.25 * (3 * u0 - 4 * up1 + up2) ** 2

    tau = np.abs(b0 - b2)
    d0, d1, d2 = _LINEAR_WEIGHTS
    a0 = d0 * (1 + (tau / (b0 + WENO_EPS)) ** 2)
    a1 = d1 * (1 + (tau / (b1 + WENO_EPS)) ** 2)
    a2 = d2 * (1 + (tau / (b2 + WENO_EPS)) ** 2)
    return (a0 * q0 + a1 * q1 + a2 * q2) / (a0 + a1 + a2)

def convective_rate(values: np.ndarray, velocity: float, dz: float,
                    inlet: Optional[float] = None) -> np.ndarray:
    """Rate of change ``-v dT/dz`` in flux form for ``velocity >= 0``.

    With ``inlet=None`` the domain is periodic (used for convergence and
    conservation checks). Otherwise the inlet ghost cells hold ``inlet``
    and the outlet has a zero-gradient boundary.
    """
    if velocity < 0:
        raise SimulationError("only co-current (non-negative) TM velocity is supported")
    if inlet is None:
        padded = np.concatenate((values[-3:], values, values[:2]))
    else:
        padded = np.concatenate((np.full(3, inlet), values, np.full(2, values[-1])))
    # interfaces i - 1/2 for i = 0 .. n
    faces = weno5_interface_values(padded)
    flux = velocity * faces
    return -(flux[1:] - flux[:-1]) / dz

def _diffusive_rate(values: np.ndarray, diffusion: float, dz: float, inlet: float) -> np.ndarray:
    left = np.concatenate(([inlet], values[:-1]))
    right = np.concatenate((values[1:], [values[-1]]))
    return diffusion * (right - 2 * values + left) / dz ** 2

def tm_grid_step(grid: TemperingGrid, sources: np.ndarray, dt: float, params: PlantParams,
                 inlet: Optional[float] = None) -> TemperingGrid:
    """One explicit-Euler step of the tempering medium.

    Parameters
    ----------
    grid : :class:`TemperingGrid`
        State before the step.
    sources : :class:`numpy.ndarray`
        Heat flow into each cell from the slugs (W).
    dt : :class:`float`
        Step (s).
    params : :class:`~slugmpc.params.PlantParams`
        Plant parameters (densities, environment losses, inlet temperature).
    inlet : :class:`float` | :data:`None`
        Inlet temperature; ``params.t_tm_in`` by default.

    Raises
    ------
    :exc:`~slugmpc.errors.CourantError`
        ``velocity * dt / dz > 1``.
    :exc:`~slugmpc.errors.SimulationError`
        Unstable diffusion number or a nonfinite result.
    """
    courant = grid.velocity * dt / grid.dz
    if courant > 1:
        raise CourantError(courant)
    if grid.diffusion * dt / grid.dz ** 2 > 0.5:
        raise SimulationError("diffusion number D dt / dz^2 exceeds 0.5")
    t_in = params.t_tm_in if inlet is None else inlet
    temps = grid.temperatures

    cell_volume = params.area_annulus * grid.dz
    env_area = math.pi * params.d_i_tm * grid.dz
    heat = sources - params.u_tm_env * env_area * (temps - params.t_env)
    rate = heat / (params.rho_tm * params.cp_tm * cell_volume)
    if grid.velocity > 0:
        rate = rate + convective_rate(temps, grid.velocity, grid.dz, t_in)
    if grid.diffusion > 0:
        rate = rate + _diffusive_rate(temps, grid.diffusion, grid.dz, t_in)

    updated = temps + dt * rate
    if not np.all(np.isfinite(updated)):
        raise SimulationError("nonfinite tempering-medium temperature")
    return replace(grid, temperatures=updated)

def heat_split(z_start: float, z_end: float, duty: float, grid: TemperingGrid) -> dict[int, float]:
    """Distribute a heat flow over the cells a slug traversed.

    Each cell overlapped by ``[z_start, z_end]`` receives a share
    proportional to the overlap length. The interval is clipped to the
    grid. The shares sum to ``duty`` to within one rounding: the largest
    share absorbs the residual of the exactly rounded sum of the others.

    Returns
    -------
    dict[int, float]
        Cell index to heat flow (W).
    """
    if z_end < z_start:
        raise ValueError("z_start must not exceed z_end")
    length = grid.length
    a = min(max(z_start, 0.0), length)
    b = min(max(z_end, 0.0), length)
    if b - a <= 0:
        return {grid.cell_index(b): duty}
    k0 = grid.cell_index(a)
    k1 = min(int(math.ceil(b / grid.dz)) - 1, grid.n_cells - 1)
    k1 = max(k1, k0)
    span = b - a
    shares: dict[int, float] = {}
    for k in range(k0, k1 + 1):
        lo = max(a, k * grid.dz)
        hi = min(b, (k + 1) * grid.dz)
        if hi > lo:
            shares[k] = duty * (hi - lo) / span
    if not shares:
        return {k0: duty}
    largest = max(shares, key=lambda k: abs(shares[k]))
    shares[largest] = duty - compensated_sum(v for k, v in shares.items() if k != largest)
    return shares
