"""Lagrangian liquid slugs: batch crystallizers travelling through the tube.

Each slug carries its own Monte Carlo crystal population. No slug ever
exchanges mass with another, so transport is free of numerical diffusion.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import InputError, SimulationError
from .kinetics import KELVIN_OFFSET, growth_rate, supersaturation
from .params import Inputs, PlantParams

__all__ = (
    "Slug",
    "OdeStep",
    "PopulationStep",
    "heat_transfer_area",
    "sample_seed_lengths",
    "spawn_slug",
    "slug_ode_step",
    "mc_population_step",
    "merge_pair",
)

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class Slug:
    """One liquid slug.

    Attributes
    ----------
    z : :class:`float`
        Axial position (m).
    mass : :class:`float`
        Liquid mass (kg).
    c : :class:`float`
        Concentration (kg/kg).
    temperature : :class:`float`
        Temperature (K).
    lengths : :class:`numpy.ndarray`
        Characteristic lengths of the Monte Carlo particles (m).
    """
    z: float
    mass: float
    c: float
    temperature: float
    lengths: np.ndarray

    @property
    def n_particles(self) -> int:
        return int(self.lengths.size)

    def crystal_mass(self, params: PlantParams) -> float:
        """Total crystal mass ``k_v rho sum(L^3)`` (kg)."""
        return params.k_v * params.rho_cryst * float(np.sum(self.lengths ** 3))

    def volume(self, params: PlantParams) -> float:
        """Liquid volume (m³)."""
        return self.mass / params.rho_pm

class OdeStep(NamedTuple):
    slug: Slug
    duty: float
    """Heat flow into the slug (W), ``U A (T_TM - T)``."""
    growth: float
    """Growth rate applied in this step (m/s); ``0`` while growth is suspended."""

class PopulationStep(NamedTuple):
    slug: Slug
    events: int

def heat_transfer_area(mass: float, params: PlantParams) -> float:
    """Lateral wall area of a cylindrical liquid slug of ``mass`` kg (m²)."""
    slug_length = mass / (params.rho_pm * params.area_cross)
    return math.pi * params.d_i_pm * slug_length

def sample_seed_lengths(target_mass: float, params: PlantParams,
                        rng: np.random.Generator) -> np.ndarray:
    """Draw seed crystals until their mass first reaches ``target_mass``.

    Lengths are i.i.d. normal ``(mu_init, sigma_init)`` truncated to ``L > 0``
    by resampling. The last draw may overshoot the target.
    """
    if target_mass <= 0:
        return np.empty(0)
    per_mass = params.k_v * params.rho_cryst
    # E[L^3] of the untruncated normal; only used to size the draw batches
    m3 = params.mu_init ** 3 + 3 * params.mu_init * params.sigma_init ** 2
    batch = max(16, int(1.2 * target_mass / (per_mass * m3)) + 8)
    drawn: list[np.ndarray] = []
    total = 0.0
    while True:
        lengths = rng.normal(params.mu_init, params.sigma_init, size=batch)
        bad = lengths <= 0
        while bad.any():
            lengths[bad] = rng.normal(params.mu_init, params.sigma_init, size=int(bad.sum()))
            bad = lengths <= 0
        cum = total + per_mass * np.cumsum(lengths ** 3)
        hit = int(np.searchsorted(cum, target_mass, side="left"))
        if hit < batch:
            drawn.append(lengths[: hit + 1])
            return np.concatenate(drawn)
        drawn.append(lengths)
        total = float(cum[-1])

def spawn_slug(inputs: Inputs, params: PlantParams, dt: float,
               rng: np.random.Generator) -> Slug:
    """Create the slug entering the crystallizer during one step.

    Parameters
    ----------
    inputs : :class:`~slugmpc.params.Inputs`
        Current inputs.
    params : :class:`~slugmpc.params.PlantParams`
        Plant parameters.
    dt : :class:`float`
        Simulation step (s); the slug holds ``dt`` seconds of feed.
    rng : :class:`numpy.random.Generator`
        Generator for the seed population.

    Raises
    ------
    :exc:`~slugmpc.errors.InputError`
        ``Q_PM`` is not positive or ``w_cryst`` is negative.
    """
    if not inputs.q_pm > 0:
        raise InputError("Q_PM", inputs.q_pm, "must be positive to feed a slug")
    if inputs.w_cryst < 0:
        raise InputError("w_cryst", inputs.w_cryst, "must be non-negative")
    if not dt > 0:
        raise SimulationError(f"dt must be positive, got {dt!r}")
    mass_flow = params.rho_pm * inputs.q_pm
    mass = dt * mass_flow
    lengths = sample_seed_lengths(inputs.w_cryst * mass_flow * dt, params, rng)
    return Slug(z=0.0, mass=mass, c=params.c_in, temperature=params.t_pm_in, lengths=lengths)

def _crystal_increment(lengths: np.ndarray, dl: float, params: PlantParams) -> float:
    # k_v rho sum((L + dl)^3 - L^3), expanded so it is exact for small dl
    mu0 = lengths.size
    mu1 = float(np.sum(lengths))
    mu2 = float(np.sum(lengths ** 2))
    return params.k_v * params.rho_cryst * (3 * dl * mu2 + 3 * dl ** 2 * mu1 + dl ** 3 * mu0)

def slug_ode_step(slug: Slug, t_tm: float, area: float, dt: float, params: PlantParams,
                  unit: str = "celsius") -> OdeStep:
    """Explicit-Euler step of the slug's temperature and concentration.

    The concentration loses exactly the solute that the crystals gain when
    every particle grows by ``G dt``; to first order this is the
    ``3 rho k_v G mu_2 dt / m`` term. If that would drive the concentration
    negative, growth is suspended for the step.

    Parameters
    ----------
    slug : :class:`Slug`
        The slug before the step.
    t_tm : :class:`float`
        Tempering-medium temperature the slug exchanges heat with (K).
    area : :class:`float`
        Heat-transfer area (m²).
    dt : :class:`float`
        Step (s).
    params : :class:`~slugmpc.params.PlantParams`
        Plant parameters.
    unit : :class:`str`
        Temperature unit of the solubility correlation.

    Returns
    -------
    :class:`OdeStep`
        The updated slug, the heat flow into it and the growth rate to apply
        to its population.
    """
    if not dt > 0 or not slug.mass > 0:
        raise SimulationError(f"slug step needs dt > 0 and mass > 0, got dt={dt!r}, mass={slug.mass!r}")
    if not (math.isfinite(slug.temperature) and math.isfinite(slug.c) and math.isfinite(t_tm)):
        raise SimulationError(f"nonfinite slug state at z={slug.z:.4g} m")

    # the correlation is evaluated in its own unit, state temperatures are Kelvin
    t_corr = slug.temperature - KELVIN_OFFSET if unit == "celsius" else slug.temperature
    g = float(growth_rate(supersaturation(slug.c, t_corr)))
    duty = params.u_pm_tm * area * (t_tm - slug.temperature)
    temperature = slug.temperature + dt * duty / (slug.mass * params.cp_pm)

    c = slug.c
    if g > 0 and slug.lengths.size:
        dc = _crystal_increment(slug.lengths, g * dt, params) / slug.mass
        if c - dc < 0:
            g = 0.0
        else:
            c = c - dc
    return OdeStep(replace(slug, temperature=temperature, c=c), duty, g)

def merge_pair(l_i: float, l_j: float) -> float:
    """Length of the agglomerate of two particles, conserving volume."""
    return float(np.cbrt(l_i ** 3 + l_j ** 3))

def mc_population_step(slug: Slug, growth: float, kernel: float, dt: float,
                       rng: np.random.Generator, params: PlantParams,
                       scale: float = 1.0e-9) -> PopulationStep:
    """Constant-time-step Monte Carlo update of a slug's population.

    All particles grow by ``growth * dt``. The number of agglomeration
    events is Poisson with mean ``kernel * dt * N (N - 1) / 2 * C`` where
    ``C = scale / V_slug``. Each event merges a uniformly drawn pair.

    Returns
    -------
    :class:`PopulationStep`
        The updated slug and the number of agglomeration events.
    """
    lengths = slug.lengths + growth * dt if growth else slug.lengths.copy()
    n = lengths.size
    events = 0
    if n >= 2 and kernel > 0:
        rate = kernel * scale / slug.volume(params)
        if rate * dt >= 0.1:
            logger.warning("agglomeration probability per pair %.3g >= 0.1; reduce dt", rate * dt)
        expected = rate * dt * n * (n - 1) / 2
        events = min(int(rng.poisson(expected)), n - 1)
        for _ in range(events):
            i, j = rng.choice(n, size=2, replace=False)
            lengths[i] = merge_pair(lengths[i], lengths[j])
            lengths[j] = lengths[n - 1]
            n -= 1
        lengths = lengths[:n].copy()
    return PopulationStep(replace(slug, lengths=lengths), events)
