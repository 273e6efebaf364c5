from __future__ import annotations

import hashlib
import math
from contextlib import contextmanager
from os import PathLike
from typing import Any, Iterable, Iterator

import numpy as np

from .errors import ConfigError, DatasetError

__all__ = (
    "require_positive",
    "require_nonnegative",
    "require_choice",
    "compensated_sum",
    "make_rng",
    "child_seeds",
    "array_digest",
    "writing",
)

def require_positive(obj: Any, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ConfigError(name, f"must be a finite positive number, got {value!r}")

def require_nonnegative(obj: Any, *names: str) -> None:
    for name in names:
        value = getattr(obj, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
            raise ConfigError(name, f"must be a finite non-negative number, got {value!r}")

def require_choice(obj: Any, name: str, choices: Iterable[str]) -> None:
    choices = tuple(choices)
    if getattr(obj, name) not in choices:
        raise ConfigError(name, f"must be one of {choices}, got {getattr(obj, name)!r}")

def compensated_sum(values: Iterable[float]) -> float:
    # exactly rounded, order independent
    return math.fsum(values)

def make_rng(seed: int | np.random.SeedSequence | None) -> np.random.Generator:
    return np.random.default_rng(seed)

def child_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent, reproducible sub-streams for parallel jobs."""
    return np.random.SeedSequence(seed).spawn(n)

def array_digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()

@contextmanager
def writing(path: str | PathLike) -> Iterator[None]:
    """Turn OS and pandas failures while writing ``path`` into :exc:`~slugmpc.errors.DatasetError`."""
    try:
        yield
    except (OSError, ValueError) as err:
        raise DatasetError(f"cannot write {path}: {err}") from None
