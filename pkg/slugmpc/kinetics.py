"""Crystallization correlations for L-alanine in water.

Every function accepts scalars or numpy arrays and broadcasts.
"""

from __future__ import annotations

from typing import Literal, Union

import numpy as np

__all__ = (
    "solubility",
    "supersaturation",
    "growth_rate",
    "agglomeration_kernel",
    "KELVIN_OFFSET",
)

KELVIN_OFFSET = 273.15

ArrayLike = Union[float, np.ndarray]

SOLUBILITY_A = 0.11238
SOLUBILITY_B = 9.0849e-3
GROWTH_K = 5.857e-5
GROWTH_SCALE = 0.913

def _celsius(temperature: ArrayLike, unit: str) -> ArrayLike:
    if unit == "celsius":
        return temperature
    if unit == "kelvin":
        return np.subtract(temperature, KELVIN_OFFSET)
    raise ValueError(f"unknown temperature unit {unit!r}")

def solubility(temperature: ArrayLike, unit: Literal["celsius", "kelvin"] = "celsius") -> ArrayLike:
    """Saturation concentration ``c* = 0.11238 exp(9.0849e-3 T)`` with ``T`` in °C.

    Parameters
    ----------
    temperature : float | numpy.ndarray
        Temperature, in the unit given by ``unit``.
    unit : ``"celsius"`` | ``"kelvin"``
        Unit of ``temperature``. Kelvin values are converted to °C before
        the correlation is evaluated, by default ``"celsius"``.

    Returns
    -------
    float | numpy.ndarray
        Solubility in kg solute / kg solvent.
    """
    return SOLUBILITY_A * np.exp(SOLUBILITY_B * _celsius(temperature, unit))

def supersaturation(concentration: ArrayLike, temperature: ArrayLike,
                    unit: Literal["celsius", "kelvin"] = "celsius") -> ArrayLike:
    """Relative supersaturation ``(c - c*) / c*``."""
    c_star = solubility(temperature, unit)
    return (concentration - c_star) / c_star

def growth_rate(ds: ArrayLike) -> ArrayLike:
    """Size-independent growth rate (m/s).

    ``G = 5.857e-5 dS^2 tanh(0.913 / dS)`` for ``dS > 0`` and ``0``
    otherwise; dissolution is not modelled.
    """
    ds_arr = np.asarray(ds, dtype=float)
    positive = ds_arr > 0
    safe = np.where(positive, ds_arr, 1.0)
    g = np.where(positive, GROWTH_K * safe ** 2 * np.tanh(GROWTH_SCALE / safe), 0.0)
    if np.ndim(ds) == 0:
        return float(g)
    return g

def agglomeration_kernel(growth: ArrayLike, velocity: ArrayLike, beta0: float,
                         beta1: float = 1.0, beta2: float = 1.0) -> ArrayLike:
    """Size-independent agglomeration kernel ``beta0 * G**beta1 * v**beta2``.

    Parameters
    ----------
    growth : float | numpy.ndarray
        Growth rate (m/s), non-negative.
    velocity : float | numpy.ndarray
        Local slug velocity (m/s), positive.
    beta0 : float
        Prefactor; ``0`` disables agglomeration.
    beta1, beta2 : float
        Exponents, both ``1`` for L-alanine.
    """
    return beta0 * np.power(growth, beta1) * np.power(velocity, beta2)
