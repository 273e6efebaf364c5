from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest

from slugmpc import CourantError, PlantParams, SimulationError
from slugmpc.tempering import convective_rate, heat_split, new_grid, tm_grid_step, weno5_interface_values

def sine_cell_averages(n: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact cell averages of sin(2 pi x) on the unit interval and the exact
    flux-form rate of -d/dx for unit velocity."""
    dz = 1.0 / n
    edges = np.arange(n + 1) * dz
    k = 2 * math.pi
    averages = (np.cos(k * edges[:-1]) - np.cos(k * edges[1:])) / (k * dz)
    face = np.sin(k * edges)
    rate = -(face[1:] - face[:-1]) / dz
    return averages, rate, dz

def test_weno_reproduces_constants() -> None:
    values = np.full(12, 3.25)
    np.testing.assert_allclose(weno5_interface_values(values), 3.25, rtol=1e-15)
    assert weno5_interface_values(values).shape == (8,)

def test_weno_is_exact_for_linear_data() -> None:
    values = 2.0 + 0.5 * np.arange(10)
    # interface i + 1/2 of a linear profile is the mean of its neighbours
    np.testing.assert_allclose(weno5_interface_values(values), values[2:-2] + 0.25, rtol=1e-13)

def test_weno_convergence_order() -> None:
    errors = []
    for n in (40, 80, 160):
        averages, exact, dz = sine_cell_averages(n)
        rate = convective_rate(averages, 1.0, dz)
        errors.append(np.mean(np.abs(rate - exact)))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 4.0), orders

def test_periodic_advection_conserves_total() -> None:
    rng = np.random.default_rng(5)
    n = 64
    x = (np.arange(n) + 0.5) / n
    values = np.exp(-((x - 0.4) / 0.08) ** 2) + 0.1 * rng.random(n)
    total = math.fsum(values)
    dz = 1.0 / n
    for _ in range(200):
        values = values + 0.4 * dz * convective_rate(values, 1.0, dz)
    assert math.fsum(values) == pytest.approx(total, rel=1e-12)

def test_negative_velocity_rejected() -> None:
    with pytest.raises(SimulationError):
        convective_rate(np.ones(10), -1.0, 0.1)

def test_uniform_field_is_preserved() -> None:
    params = PlantParams(t_tm_in=298.15, t_env=298.15)
    grid = dataclasses.replace(new_grid(params, 48), velocity=0.02)
    out = grid
    for _ in range(10):
        out = tm_grid_step(out, np.zeros(48), 5.0, params)
    np.testing.assert_allclose(out.temperatures, 298.15, rtol=1e-13)

def test_isolated_cell_energy_balance() -> None:
    params = PlantParams(t_tm_in=298.15, t_env=298.15)
    grid = dataclasses.replace(new_grid(params, 48), diffusion=0.0)
    sources = np.zeros(48)
    sources[3] = 2.0
    out = tm_grid_step(grid, sources, 5.0, params)
    rise = 5.0 * 2.0 / (params.rho_tm * params.cp_tm * params.area_annulus * grid.dz)
    assert out.temperatures[3] - 298.15 == pytest.approx(rise, rel=1e-9)
    np.testing.assert_array_equal(np.delete(out.temperatures, 3), 298.15)

def test_environment_losses_cool_a_warm_jacket() -> None:
    params = PlantParams(t_tm_in=320.0)
    grid = dataclasses.replace(new_grid(params, 48), diffusion=0.0)
    out = tm_grid_step(grid, np.zeros(48), 5.0, params)
    assert np.all(out.temperatures < 320.0)

def test_courant_violation(params: PlantParams) -> None:
    grid = dataclasses.replace(new_grid(params, 48), velocity=1.0)
    with pytest.raises(CourantError) as info:
        tm_grid_step(grid, np.zeros(48), 5.0, params)
    assert info.value.courant == pytest.approx(10.0)

def test_diffusion_number_violation(params: PlantParams) -> None:
    grid = dataclasses.replace(new_grid(params, 48), diffusion=1.0)
    with pytest.raises(SimulationError):
        tm_grid_step(grid, np.zeros(48), 5.0, params)

def test_grid_geometry(params: PlantParams) -> None:
    grid = new_grid(params, 48)
    assert grid.n_cells == 48
    assert grid.length == pytest.approx(params.length)
    assert grid.cell_index(-1.0) == 0
    assert grid.cell_index(params.length + 1.0) == 47
    assert grid.temperature_at(3.0) == params.t_tm_in

def test_heat_split_inside_one_cell(params: PlantParams) -> None:
    grid = new_grid(params, 48)
    assert heat_split(1.1, 1.3, -7.5, grid) == {2: -7.5}

def test_heat_split_proportional(params: PlantParams) -> None:
    grid = new_grid(params, 48)
    shares = heat_split(0.375, 0.875, 4.0, grid)
    assert shares.keys() == {0, 1}
    assert shares[0] == pytest.approx(1.0)
    assert shares[1] == pytest.approx(3.0)

def test_heat_split_random_intervals_sum_to_duty(params: PlantParams) -> None:
    grid = new_grid(params, 48)
    rng = np.random.default_rng(11)
    for _ in range(1000):
        a, b = np.sort(rng.uniform(-1.0, params.length + 1.0, 2))
        duty = float(rng.normal(0.0, 50.0))
        shares = heat_split(float(a), float(b), duty, grid)
        assert all(0 <= k < grid.n_cells for k in shares)
        assert math.fsum(shares.values()) == pytest.approx(duty, rel=1e-12, abs=1e-300)

def test_heat_split_clips_to_grid(params: PlantParams) -> None:
    grid = new_grid(params, 48)
    shares = heat_split(params.length - 0.25, params.length + 0.25, 1.0, grid)
    assert shares == {47: 1.0}

def test_heat_split_rejects_reversed_interval(params: PlantParams) -> None:
    with pytest.raises(ValueError):
        heat_split(2.0, 1.0, 1.0, new_grid(params, 48))
