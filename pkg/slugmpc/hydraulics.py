from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import InputError
from .params import Inputs, PlantParams

__all__ = (
    "VelocityProfile",
    "pressure_drop",
    "pressure_and_velocity_profile",
)

ArrayLike = Union[float, np.ndarray]

def pressure_drop(inputs: Inputs, params: PlantParams) -> float:
    """Two-phase pressure drop over the crystallizer (Pa), linear in the total flow."""
    return params.kappa0 + params.kappa1 * (inputs.q_pm + inputs.q_air)

@dataclass(frozen=True)
class VelocityProfile:
    """Axial pressure and slug velocity for one set of inputs.

    The pressure falls linearly from ``p_in`` at ``z = 0`` to ``p_out`` at
    ``z = length``. The liquid is incompressible while the gas slugs expand
    isothermally, so the unit-cell velocity grows along the tube.

    Attributes
    ----------
    p_in, p_out : :class:`float`
        Inlet and outlet pressure (Pa).
    length : :class:`float`
        Crystallizer length (m).
    q_pm : :class:`float`
        Liquid volume flow (m³/s).
    q_air_out : :class:`float`
        Gas volume flow at outlet pressure (m³/s).
    area : :class:`float`
        Free cross-section of the process tube (m²).
    """
    p_in: float
    p_out: float
    length: float
    q_pm: float
    q_air_out: float
    area: float

    def pressure(self, z: ArrayLike) -> ArrayLike:
        zc = np.clip(z, 0.0, self.length)
        return self.p_in + (self.p_out - self.p_in) * zc / self.length

    def velocity(self, z: ArrayLike) -> ArrayLike:
        return (self.q_pm + self.q_air_out * self.p_out / self.pressure(z)) / self.area

    def __call__(self, z: ArrayLike) -> tuple[ArrayLike, ArrayLike]:
        return self.pressure(z), self.velocity(z)

def pressure_and_velocity_profile(inputs: Inputs, params: PlantParams,
                                  dp: Optional[float] = None) -> VelocityProfile:
    """Build the :class:`VelocityProfile` for ``inputs``.

    Parameters
    ----------
    inputs : :class:`~slugmpc.params.Inputs`
        Plant inputs; ``q_air`` is referenced to the outlet pressure.
    params : :class:`~slugmpc.params.PlantParams`
        Plant parameters.
    dp : :class:`float` | :data:`None`
        Pressure drop to impose instead of :func:`pressure_drop`, by default :data:`None`.

    Raises
    ------
    :exc:`~slugmpc.errors.InputError`
        No flow through the tube, or a nonpositive inlet pressure.
    """
    if inputs.q_pm + inputs.q_air <= 0:
        raise InputError("Q_PM", inputs.q_pm, "Q_PM + Q_air must be positive")
    p_in = params.p_out + (pressure_drop(inputs, params) if dp is None else dp)
    if not p_in > 0:
        raise InputError("p_in", p_in, "inlet pressure must be positive")
    return VelocityProfile(
        p_in=p_in,
        p_out=params.p_out,
        length=params.length,
        q_pm=inputs.q_pm,
        q_air_out=inputs.q_air,
        area=params.area_cross,
    )
