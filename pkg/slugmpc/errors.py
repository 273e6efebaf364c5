"""Contains all Exception(s) slugmpc raises
"""

from __future__ import annotations

__all__ = (
    "SlugMpcError",
    "ConfigError",
    "SimulationError",
    "InputError",
    "CourantError",
    "DatasetError",
    "TrainingError",
    "CalibrationError",
    "NotWarmError",
    "RolloutError",
)

class SlugMpcError(Exception):
    """Base class of every error raised by slugmpc."""

class ConfigError(SlugMpcError):
    """Raised when a configuration value is invalid or unknown.

    Attributes
    ----------
    field : :class:`str`
        Name of the offending configuration field.
    """
    field: str

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field

class SimulationError(SlugMpcError):
    """Raised when the plant simulator reaches an invalid state,
    e.g. a nonfinite temperature or concentration."""

class InputError(SimulationError):
    """Raised when plant inputs are rejected.

    Attributes
    ----------
    name : :class:`str`
        The name of the rejected input, e.g. ``"Q_PM"``.
    value : :class:`float`
        The rejected value.
    """
    name: str
    value: float

    def __init__(self, name: str, value: float, message: str = "invalid value"):
        super().__init__(f"{name}={value!r}: {message}")
        self.name = name
        self.value = value

class CourantError(SimulationError):
    """Raised when a tempering-medium step violates the Courant condition.

    Attributes
    ----------
    courant : :class:`float`
        The offending Courant number ``v * dt / dz``.
    """
    courant: float

    def __init__(self, courant: float):
        super().__init__(f"Courant number {courant:.4g} exceeds 1")
        self.courant = courant

class DatasetError(SlugMpcError):
    """Raised for trajectories or datasets that cannot be windowed or split."""

class TrainingError(SlugMpcError):
    """Raised when training diverges.

    Attributes
    ----------
    epoch : :class:`int`
        The epoch at which the loss became nonfinite.
    loss : :class:`float`
        The last loss value observed.
    """
    epoch: int
    loss: float

    def __init__(self, epoch: int, loss: float, message: str = "training diverged"):
        super().__init__(f"{message} at epoch {epoch} (loss={loss!r})")
        self.epoch = epoch
        self.loss = loss

class CalibrationError(SlugMpcError):
    """Raised when a calibration set is too small for the requested miscoverage.

    Attributes
    ----------
    n : :class:`int`
        Size of the calibration set.
    required : :class:`int`
        Minimum size needed.
    """
    n: int
    required: int

    def __init__(self, n: int, required: int):
        super().__init__(f"calibration set has {n} samples, at least {required} are required")
        self.n = n
        self.required = required

class NotWarmError(SlugMpcError):
    """Raised when the controller is asked for an input before its
    NARX window holds enough history.

    Attributes
    ----------
    have : :class:`int`
        Number of measurements pushed so far.
    need : :class:`int`
        Number of measurements the window needs (``lag + 1``).
    """
    have: int
    need: int

    def __init__(self, have: int, need: int):
        super().__init__(f"NarxState not populated: {have} of {need} measurements")
        self.have = have
        self.need = need

class RolloutError(SlugMpcError):
    """Raised when a surrogate rollout produces a nonfinite prediction.

    Attributes
    ----------
    step : :class:`int`
        Prediction step at which the rollout failed.
    branch : :class:`int`
        Index of the scenario branch.
    """
    step: int
    branch: int

    def __init__(self, step: int, branch: int):
        super().__init__(f"nonfinite prediction at step {step} on branch {branch}")
        self.step = step
        self.branch = branch
