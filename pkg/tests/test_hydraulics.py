from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from slugmpc import InputError, Inputs, PlantParams
from slugmpc.hydraulics import pressure_and_velocity_profile, pressure_drop

def test_no_pressure_drop_gives_constant_velocity(params: PlantParams) -> None:
    inputs = Inputs(q_pm=1e-7, q_air=1e-7)
    profile = pressure_and_velocity_profile(inputs, params, dp=0.0)
    z = np.linspace(0, params.length, 7)
    np.testing.assert_allclose(profile.velocity(z), 2e-7 / params.area_cross, rtol=1e-14)
    assert profile.velocity(0.0) == pytest.approx(2.518e-2, rel=1e-3)

def test_gas_expansion_ratio(params: PlantParams) -> None:
    inputs = Inputs(q_pm=0.0, q_air=1e-7)
    profile = pressure_and_velocity_profile(inputs, params, dp=params.p_out)
    assert profile.p_in == pytest.approx(2 * params.p_out)
    assert profile.velocity(params.length) / profile.velocity(0.0) == pytest.approx(2.0)

def test_pressure_is_linear_and_velocity_monotone(params: PlantParams) -> None:
    profile = pressure_and_velocity_profile(Inputs(), params)
    z = np.linspace(0, params.length, 101)
    p = profile.pressure(z)
    np.testing.assert_allclose(np.diff(p, 2), 0.0, atol=1e-6)
    assert p[0] == pytest.approx(params.p_out + pressure_drop(Inputs(), params))
    assert p[-1] == pytest.approx(params.p_out)
    assert np.all(np.diff(profile.velocity(z)) >= 0)

def test_default_pressure_ratio_near_design_value(params: PlantParams) -> None:
    profile = pressure_and_velocity_profile(Inputs(), params)
    assert 1.2 < profile.p_in / profile.p_out < 1.4

def test_call_returns_pressure_and_velocity(params: PlantParams) -> None:
    profile = pressure_and_velocity_profile(Inputs(), params)
    p, v = profile(3.0)
    assert p == profile.pressure(3.0)
    assert v == profile.velocity(3.0)

def test_rejects_no_flow(params: PlantParams) -> None:
    with pytest.raises(InputError):
        pressure_and_velocity_profile(Inputs(q_pm=0.0, q_air=0.0), params)

def test_rejects_nonpositive_inlet_pressure(params: PlantParams) -> None:
    with pytest.raises(InputError) as info:
        pressure_and_velocity_profile(Inputs(), params, dp=-2 * params.p_out)
    assert info.value.name == "p_in"

def test_pressure_drop_is_linear_in_total_flow() -> None:
    params = dataclasses.replace(PlantParams(), kappa0=10.0, kappa1=1e9)
    assert pressure_drop(Inputs(q_pm=1e-7, q_air=2e-7), params) == pytest.approx(10.0 + 300.0)
