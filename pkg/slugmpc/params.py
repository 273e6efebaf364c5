"""Plant parameters, plant inputs and simulator settings.

Defaults reproduce the L-alanine/water system: agglomeration, initial
distribution, densities, heat-transfer coefficients and geometry.
Quantities not given there (inlet state, environment, TM dispersion and the
pressure-drop model) carry documented defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from ._utils import require_choice, require_nonnegative, require_positive
from .errors import ConfigError, InputError

__all__ = (
    "PlantParams",
    "Inputs",
    "SimConfig",
    "INPUT_NAMES",
    "MEASUREMENT_NAMES",
)

INPUT_NAMES = ("Q_PM", "Q_air", "Q_TM", "w_cryst")
"""Column names of :class:`Inputs` in trajectories and datasets."""

MEASUREMENT_NAMES = ("T_PM", "T_TM", "c_PM", "d10", "d50", "d90")
"""Column names of the six measured outlet states."""

@dataclass(frozen=True)
class PlantParams:
    """Physical parameters of the slug flow crystallizer.

    All values are SI. Temperatures are in Kelvin, concentrations in
    kg solute / kg solvent.

    Attributes
    ----------
    beta0 : :class:`float`
        Agglomeration prefactor (``0`` disables agglomeration).
    mu_init, sigma_init : :class:`float`
        Mean and standard deviation of the seed length distribution (m).
    k_v : :class:`float`
        Volume shape factor.
    rho_cryst : :class:`float`
        Crystal density (kg/m³).
    rho_pm, cp_pm : :class:`float`
        Process-medium density (kg/m³) and specific heat (J/(kg·K)).
    u_pm_tm : :class:`float`
        Process-medium to tempering-medium heat-transfer coefficient (W/(m²·K)).
    rho_tm, cp_tm : :class:`float`
        Tempering-medium density and specific heat.
    u_tm_env : :class:`float`
        Tempering-medium to environment heat-transfer coefficient (W/(m²·K)).
    length : :class:`float`
        Crystallizer length ``L_SFC`` (m).
    d_i_pm, d_a_pm, d_i_tm, d_a_tm : :class:`float`
        Inner/outer diameters of the process tube and the tempering jacket (m).
    p_out : :class:`float`
        Outlet pressure (Pa).
    t_env, t_pm_in, t_tm_in : :class:`float`
        Environment and inlet temperatures (K).
    c_in : :class:`float`
        Inlet concentration.
    diffusion_tm : :class:`float`
        Axial dispersion coefficient of the tempering medium (m²/s).
    kappa0, kappa1 : :class:`float`
        Pressure-drop model ``dp = kappa0 + kappa1 * (Q_PM + Q_air)``,
        chosen so that ``p_in / p_out`` is about 1.3 at mid-range flows.
    """
    beta0: float = 2.0e4
    mu_init: float = 2.5e-4
    sigma_init: float = 1.0e-4
    k_v: float = math.pi / 6
    rho_cryst: float = 1432.0
    rho_pm: float = 1000.0
    cp_pm: float = 4186.0
    u_pm_tm: float = 925.0
    rho_tm: float = 1000.0
    cp_tm: float = 4186.0
    u_tm_env: float = 8.27
    length: float = 24.0
    d_i_pm: float = 3.18e-3
    d_a_pm: float = 4.76e-3
    d_i_tm: float = 1.5e-2
    d_a_tm: float = 1.9e-2
    p_out: float = 1.01e5
    t_env: float = 298.15
    t_pm_in: float = 313.15
    t_tm_in: float = 293.15
    c_in: float = 0.155
    diffusion_tm: float = 1.0e-5
    kappa0: float = 5.0e3
    kappa1: float = 4.2e10

    def __post_init__(self) -> None:
        require_positive(
            self, "mu_init", "sigma_init", "k_v", "rho_cryst", "rho_pm", "cp_pm",
            "u_pm_tm", "rho_tm", "cp_tm", "u_tm_env", "length", "d_i_pm", "d_a_pm",
            "d_i_tm", "d_a_tm", "p_out", "t_env", "t_pm_in", "t_tm_in", "c_in"
        )
        require_nonnegative(self, "beta0", "diffusion_tm", "kappa0", "kappa1")
        if not (self.d_i_pm < self.d_a_pm < self.d_i_tm < self.d_a_tm):
            raise ConfigError("d_i_pm", "diameters must satisfy d_i_pm < d_a_pm < d_i_tm < d_a_tm")

    @property
    def area_cross(self) -> float:
        """:class:`float` : Free cross-section of the process tube (m²)."""
        return math.pi * self.d_i_pm ** 2 / 4

    @property
    def area_annulus(self) -> float:
        """:class:`float` : Cross-section of the tempering-medium annulus (m²)."""
        return math.pi * (self.d_i_tm ** 2 - self.d_a_pm ** 2) / 4

@dataclass(frozen=True)
class Inputs:
    """Manipulated inputs and the measured seed-loading disturbance.

    Attributes
    ----------
    q_pm : :class:`float`
        Process-medium volume flow (m³/s).
    q_air : :class:`float`
        Air volume flow referenced to the outlet pressure (m³/s).
    q_tm : :class:`float`
        Tempering-medium volume flow (m³/s).
    w_cryst : :class:`float`
        Seed crystal mass fraction of the inlet slurry.
    """
    q_pm: float = 3.0e-7
    q_air: float = 3.0e-7
    q_tm: float = 2.0e-5
    w_cryst: float = 0.01

    def __post_init__(self) -> None:
        for name, value in zip(INPUT_NAMES, self.as_array()):
            if not (math.isfinite(value) and value >= 0):
                raise InputError(name, float(value), "must be finite and non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.q_pm, self.q_air, self.q_tm, self.w_cryst], dtype=float)

    @classmethod
    def from_array(cls, values: np.ndarray | list[float]) -> Inputs:
        q_pm, q_air, q_tm, w_cryst = (float(v) for v in values)
        return cls(q_pm, q_air, q_tm, w_cryst)

    def replace(self, **changes: float) -> Inputs:
        data = {"q_pm": self.q_pm, "q_air": self.q_air, "q_tm": self.q_tm, "w_cryst": self.w_cryst}
        data.update(changes)
        return Inputs(**data)

@dataclass(frozen=True)
class SimConfig:
    """Numerical settings of the plant simulator.

    Attributes
    ----------
    dt : :class:`float`
        Fixed simulation step (s). One slug enters per step.
    n_cells : :class:`int`
        Number of tempering-medium finite volumes.
    courant_target : :class:`float`
        Largest Courant number of one tempering-medium sub-step.
    solubility_unit : ``"celsius"`` | ``"kelvin"``
        Temperature unit the solubility correlation is evaluated in.
    real_slug_volume : :class:`float` | :data:`None`
        Liquid volume of one physical slug (m³) used to reduce the outlet
        population. If :data:`None`, a slug of length ``4 * d_i_pm`` is assumed.
    agglomeration_scale : :class:`float`
        Dimensionless scale ``s`` of the kernel normalisation ``s / V_slug``.
    size_moment : :class:`int`
        Weighting moment of the characteristic diameters (3 = volume).
    measurement_period : :class:`float`
        Sampling period of measurements and of the controller (s).
    seed : :class:`int`
        Seed of the plant's random generator.
    """
    dt: float = 5.0
    n_cells: int = 48
    courant_target: float = 0.5
    solubility_unit: Literal["celsius", "kelvin"] = "celsius"
    real_slug_volume: Optional[float] = None
    agglomeration_scale: float = 1.0e-9
    size_moment: int = 3
    measurement_period: float = 50.0
    seed: int = 0

    def __post_init__(self) -> None:
        require_positive(self, "dt", "courant_target", "measurement_period")
        require_nonnegative(self, "agglomeration_scale")
        require_choice(self, "solubility_unit", ("celsius", "kelvin"))
        if not isinstance(self.n_cells, int) or self.n_cells < 10:
            raise ConfigError("n_cells", f"must be an integer >= 10, got {self.n_cells!r}")
        if self.courant_target > 1:
            raise ConfigError("courant_target", "must not exceed 1")
        if self.real_slug_volume is not None:
            require_positive(self, "real_slug_volume")
        if self.size_moment not in (0, 1, 2, 3):
            raise ConfigError("size_moment", "must be 0, 1, 2 or 3")
        steps = self.measurement_period / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("measurement_period", "must be an integer multiple of dt")

    @property
    def steps_per_sample(self) -> int:
        """:class:`int` : Simulation steps per measurement period."""
        return int(round(self.measurement_period / self.dt))

    def slug_volume(self, params: PlantParams) -> float:
        """Liquid volume of one physical slug (m³)."""
        if self.real_slug_volume is not None:
            return self.real_slug_volume
        return params.area_cross * 4 * params.d_i_pm
