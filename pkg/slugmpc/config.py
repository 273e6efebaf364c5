"""JSON configuration files for every configurable object.

A config file is a JSON object whose keys are the field names of one of the
frozen dataclasses in slugmpc. Values given on the command line override the
file; validation happens in the dataclass' ``__post_init__`` and always names
the offending field.
"""

from __future__ import annotations

import dataclasses
import json
import os
import types
import typing
from pathlib import Path
from typing import Any, Mapping, TypeVar

from .errors import ConfigError

__all__ = (
    "from_mapping",
    "load_config",
    "dump_config",
    "resolve_seed",
)

C = TypeVar("C")

def _coerce(name: str, hint: Any, value: Any) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if value is None:
        return None
    if origin is tuple or hint is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(name, f"expected a list, got {type(value).__name__}")
        if args and args[-1] is not Ellipsis and len(args) == len(value):
            return tuple(_coerce(name, a, v) for a, v in zip(args, value))
        inner = args[0] if args else Any
        return tuple(_coerce(name, inner, v) for v in value)
    if origin is typing.Union or origin is types.UnionType:
        # Optional[X]: try the non-None member
        for a in args:
            if a is type(None):
                continue
            return _coerce(name, a, value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    if dataclasses.is_dataclass(hint) and isinstance(value, Mapping):
        return from_mapping(hint, value)  # type: ignore[arg-type]
    return value

def from_mapping(cls: type[C], data: Mapping[str, Any]) -> C:
    """Build the dataclass ``cls`` from a mapping, rejecting unknown keys.

    Parameters
    ----------
    cls : type
        A dataclass type.
    data : Mapping[str, Any]
        Field values, e.g. a parsed JSON object.

    Returns
    -------
    C
        The validated instance.

    Raises
    ------
    :exc:`~slugmpc.errors.ConfigError`
        A key is unknown, a value has the wrong type or fails validation.
    """
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}  # type: ignore[arg-type]
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(key, f"unknown field for {cls.__name__}")
        kwargs[key] = _coerce(key, hints[key], value)
    try:
        return cls(**kwargs)
    except TypeError as err:
        raise ConfigError(cls.__name__, str(err)) from None

def load_config(cls: type[C], path: str | os.PathLike | None = None,
                overrides: Mapping[str, Any] | None = None) -> C:
    """Read ``path`` (JSON) into ``cls``, applying ``overrides`` on top.

    Overrides whose value is :data:`None` are ignored, so unset CLI flags
    do not clobber file values.
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with Path(path).open("r", encoding="utf-8") as f:
                loaded = json.load(f)
        except OSError as err:
            raise ConfigError("config", f"cannot read {path}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise ConfigError("config", f"{path} is not valid JSON: {err.msg} (line {err.lineno})") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config", f"{path} must contain a JSON object")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return from_mapping(cls, data)

def dump_config(obj: Any) -> str:
    """Canonical JSON text of a config dataclass (sorted keys)."""
    return json.dumps(dataclasses.asdict(obj), sort_keys=True, indent=2)

def resolve_seed(flag: int | None, configured: int | None = None) -> int:
    """Seed precedence: CLI flag, config file, ``SFC_SEED``, then ``0``."""
    if flag is not None:
        return flag
    if configured is not None:
        return configured
    env = os.environ.get("SFC_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError("SFC_SEED", f"must be an integer, got {env!r}") from None
    return 0
