from __future__ import annotations

from typing import Any, Callable

import numpy as np
import pandas as pd
import pytest

from slugmpc import NarxLayout, Normalizer, PlantParams, SimConfig
from slugmpc.plant import TRAJECTORY_COLUMNS
from slugmpc.surrogate import Interval, Surrogate

def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale reproductions")

def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)

class LinearSurrogate(Surrogate):
    """``y' = x A^T + b`` with a fixed half-width, for controller tests."""
    kind = "nn"

    def __init__(self, layout: NarxLayout, normalizer: Normalizer, a: np.ndarray,
                 b: np.ndarray | None = None, width: float = 0.0, kind: str = "nn") -> None:
        self.layout = layout
        self.normalizer = normalizer
        self.a = np.asarray(a, dtype=float)
        self.b = np.zeros(self.a.shape[0]) if b is None else np.asarray(b, dtype=float)
        self.width = width
        self.kind = kind

    def predict_vjp(self, x: np.ndarray) -> tuple[Interval, Callable[..., np.ndarray]]:
        y = x @ self.a.T + self.b
        return (Interval(y - self.width, y, y + self.width),
                lambda d_lo, d_mid, d_up: (d_lo + d_mid + d_up) @ self.a)

    def mean_vjp(self, x: np.ndarray) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
        return x @ self.a.T + self.b, lambda d: d @ self.a

    def to_dict(self) -> dict[str, Any]:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "width": self.width}

def identity_normalizer(n_u: int = 3) -> Normalizer:
    return Normalizer(np.zeros(6), np.ones(6), np.zeros(n_u), np.ones(n_u))

@pytest.fixture
def params() -> PlantParams:
    return PlantParams()

@pytest.fixture
def fast_sim() -> SimConfig:
    return SimConfig(n_cells=24)

@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)

_U_LOW = np.array([1e-7, 1e-7, 1e-5, 0.0])
_U_HIGH = np.array([5e-7, 5e-7, 3e-5, 0.02])
_Y_BASE = np.array([300.0, 295.0, 0.15, 1e-4, 2e-4, 3e-4])
_Y_SCALE = np.array([2.0, 1.0, 1e-3, 1e-5, 2e-5, 3e-5])

def synthetic_trajectory(n: int, seed: int = 0, noise: float = 0.05) -> pd.DataFrame:
    """A stable linear system sampled every 50 s, in the trajectory CSV layout."""
    rng = np.random.default_rng(seed)
    unit = rng.random((n, 4))
    mix = np.random.default_rng(100).normal(0.0, 0.5, (4, 6))
    s = np.zeros((n, 6))
    for k in range(n - 1):
        s[k + 1] = 0.7 * s[k] + unit[k] @ mix + noise * rng.normal(size=6)
    data = np.column_stack((50.0 * np.arange(n), _U_LOW + unit * (_U_HIGH - _U_LOW), _Y_BASE + s * _Y_SCALE))
    return pd.DataFrame(data, columns=list(TRAJECTORY_COLUMNS))
