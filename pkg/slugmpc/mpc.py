"""Multi-stage model predictive control on a NARX surrogate.

The scenario tree branches once: the first prediction step splits into the
upper, nominal and lower realisation of the surrogate's interval, and each
branch is then propagated with the nominal model on its own NARX window.
All branches share the whole input sequence. The problem is solved by
single shooting over box-normalised inputs with L-BFGS-B, using gradients
backpropagated through the rollout.
"""

from __future__ import annotations

import logging
import math
import time
from collections import deque
from dataclasses import dataclass, replace
from os import PathLike
from typing import Literal, NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from ._utils import writing
from .errors import ConfigError, NotWarmError, RolloutError
from .narx import NarxLayout
from .surrogate import BllSurrogate, CqrSurrogate, IntervalVjp, MeanVjp, Surrogate

__all__ = (
    "MpcConfig",
    "NarxState",
    "ScenarioTree",
    "MpcSolution",
    "Controller",
    "branch",
    "rollout",
    "objective",
    "objective_and_gradient",
    "solve",
    "plan_open_loop",
    "D50",
    "D90",
)

logger = logging.getLogger(__name__)

D50 = 4
"""Index of ``d50`` among the measured channels."""
D90 = 5
"""Index of ``d90`` among the measured channels."""

N_MANIPULATED = 3

@dataclass(frozen=True)
class MpcConfig:
    """Controller settings.

    The cost uses ``d50``/``d90`` in metres and the manipulated inputs in
    box-normalised units ``(u - lower) / (upper - lower)``; the default
    weights make every term of order one.

    Attributes
    ----------
    horizon : :class:`int`
        Prediction horizon ``N_pred`` in control periods.
    gamma1, gamma2, gamma3, gamma4 : :class:`float`
        Weights of ``-d50`` (1/m), ``-Q_PM``, ``+Q_TM`` and ``|du|^2``.
    d90_max : :class:`float`
        Soft upper bound on ``d90`` (m).
    rho_soft : :class:`float`
        Weight of the squared bound violation (1/m²).
    lower, upper : tuple[:class:`float`, :class:`float`, :class:`float`]
        Box bounds of ``Q_PM``, ``Q_air`` and ``Q_TM`` (m³/s).
    mode : ``"nominal"`` | ``"cqr"`` | ``"bll"``
        Scenario tree: one nominal branch, or three branches from the
        interval of a CQR or BLL surrogate.
    m : :class:`float` | :data:`None`
        Overrides the interval multiplier of a BLL surrogate.
    alpha : :class:`float` | :data:`None`
        Miscoverage the CQR surrogate must be calibrated for.
    d50_ref : :class:`float` | :data:`None`
        Tracking target for ``d50`` (m); enables the tracking term.
    gamma_track : :class:`float`
        Weight of ``(d50 - d50_ref)^2`` (1/m²).
    period : :class:`float`
        Control period (s).
    max_iter : :class:`int`
        Iteration limit of the optimizer.
    tol : :class:`float`
        Relative objective and projected-gradient tolerance.
    """
    horizon: int = 10
    gamma1: float = 2.0e3
    gamma2: float = 1.0
    gamma3: float = 0.5
    gamma4: float = 1.0
    d90_max: float = 8.0e-4
    rho_soft: float = 1.0e11
    lower: tuple[float, float, float] = (1.5e-7, 1.5e-7, 1.0e-5)
    upper: tuple[float, float, float] = (4.5e-7, 4.5e-7, 3.0e-5)
    mode: Literal["nominal", "cqr", "bll"] = "nominal"
    m: Optional[float] = None
    alpha: Optional[float] = None
    d50_ref: Optional[float] = None
    gamma_track: float = 0.0
    period: float = 50.0
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if not isinstance(self.horizon, int) or self.horizon < 2:
            raise ConfigError("horizon", f"must be an integer >= 2, got {self.horizon!r}")
        for name in ("gamma1", "gamma2", "gamma3", "gamma4", "rho_soft", "gamma_track"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(name, f"must be a finite non-negative number, got {value!r}")
        if len(self.lower) != N_MANIPULATED or len(self.upper) != N_MANIPULATED:
            raise ConfigError("lower", "bounds need one value per manipulated input")
        for lo, up in zip(self.lower, self.upper):
            if not (math.isfinite(lo) and math.isfinite(up) and 0 <= lo < up):
                raise ConfigError("upper", "bounds must be finite with 0 <= lower < upper")
        if self.mode not in ("nominal", "cqr", "bll"):
            raise ConfigError("mode", f"must be 'nominal', 'cqr' or 'bll', got {self.mode!r}")
        if self.m is not None and not (math.isfinite(self.m) and self.m >= 0):
            raise ConfigError("m", "must be a finite non-negative number")
        if self.alpha is not None and not 0 < self.alpha < 1:
            raise ConfigError("alpha", "must lie in (0, 1)")
        if not self.d90_max > 0:
            raise ConfigError("d90_max", "must be positive (use a large value to disable the bound)")
        if not (self.period > 0 and self.max_iter >= 1 and self.tol > 0):
            raise ConfigError("period", "period, max_iter and tol must be positive")

    @property
    def n_branches(self) -> int:
        return 1 if self.mode == "nominal" else 3

    def to_unit(self, u: np.ndarray) -> np.ndarray:
        """Physical manipulated inputs to box-normalised ones."""
        lo, up = np.asarray(self.lower), np.asarray(self.upper)
        return (np.asarray(u)[..., :N_MANIPULATED] - lo) / (up - lo)

    def from_unit(self, v: np.ndarray) -> np.ndarray:
        lo, up = np.asarray(self.lower), np.asarray(self.upper)
        return lo + np.asarray(v) * (up - lo)

class NarxState:
    """The last ``lag + 1`` measurements and ``lag`` applied inputs.

    Inputs are pushed together with the measurement they led to, so after
    ``push(y_k, u_{k-1})`` the state holds ``y_k .. y_{k-l}`` and
    ``u_{k-1} .. u_{k-l}``.
    """

    def __init__(self, layout: NarxLayout) -> None:
        self.layout = layout
        self._ys: deque[np.ndarray] = deque(maxlen=layout.window)
        self._us: deque[np.ndarray] = deque(maxlen=layout.lag)

    def push(self, y: np.ndarray, u_prev: Optional[np.ndarray] = None) -> None:
        if u_prev is not None and self.layout.lag:
            self._us.appendleft(np.asarray(u_prev, dtype=float)[: self.layout.n_u].copy())
        self._ys.appendleft(np.asarray(y, dtype=float).copy())

    @property
    def ready(self) -> bool:
        return len(self._ys) == self.layout.window and len(self._us) == self.layout.lag

    def check(self) -> None:
        if not self.ready:
            # an input is only ever pushed together with a measurement
            raise NotWarmError(min(len(self._ys), len(self._us) + 1), self.layout.window)

    def measurements(self) -> np.ndarray:
        """``(lag + 1, n_y)``, newest first."""
        self.check()
        return np.array(self._ys)

    def inputs(self) -> np.ndarray:
        """``(lag, n_u)``, newest first."""
        self.check()
        return np.array(self._us).reshape(self.layout.lag, self.layout.n_u)

class ScenarioTree(NamedTuple):
    """Predicted trajectories of every branch in z-scored units.

    ``states[j, k]`` is the prediction ``k`` steps ahead on branch ``j``;
    ``k = 0`` is the measurement. Branch order is upper, nominal, lower.
    """
    states: np.ndarray
    inputs: np.ndarray
    """Z-scored input rows ``(lag + horizon, n_u)``: past inputs then the plan."""

class MpcSolution(NamedTuple):
    inputs: np.ndarray
    """Optimal manipulated inputs ``(horizon, 3)`` in m³/s."""
    applied: np.ndarray
    """The first row of :attr:`inputs`."""
    trajectories: np.ndarray
    """Predicted measurements ``(branches, horizon + 1, 6)`` in physical units."""
    objective: float
    slacks: np.ndarray
    """Predicted ``d90`` bound violations ``(branches, horizon)`` for ``k = 1 .. N`` (m)."""
    max_slack: float
    solve_time: float
    iterations: int
    converged: bool
    message: str
    history: list[float]
    """Objective after every accepted iteration, starting with the initial guess."""

class _Problem:
    """Fixed data of one solve: surrogate, measured history and weights."""

    def __init__(self, surrogate: Surrogate, state: NarxState, config: MpcConfig,
                 prev_input: Optional[np.ndarray], disturbance: Optional[float]) -> None:
        self.surrogate = surrogate
        self.config = config
        self.layout = layout = surrogate.layout
        norm = surrogate.normalizer
        self.y_hist = norm.standardize_y(state.measurements()[::-1])
        past = state.inputs()[::-1]
        self.u_past = norm.standardize_u(past) if layout.lag else np.empty((0, layout.n_u))
        self.u_mean = norm.u_mean
        self.u_std = norm.u_std
        self.y_mean = norm.y_mean
        self.y_std = norm.y_std
        if layout.use_disturbance:
            if disturbance is None:
                disturbance = float(past[-1, 3]) if layout.lag else 0.0
            self.w = float(disturbance)
        else:
            self.w = None
        if prev_input is None:
            prev_input = past[-1, :N_MANIPULATED] if layout.lag else 0.5 * (np.asarray(config.lower) + np.asarray(config.upper))
        self.prev_unit = config.to_unit(np.asarray(prev_input, dtype=float))

    def physical_inputs(self, v: np.ndarray) -> np.ndarray:
        u = self.config.from_unit(v)
        if self.w is not None:
            u = np.concatenate((u, np.full((u.shape[0], 1), self.w)), axis=1)
        return u

def branch(surrogate: Surrogate, x: np.ndarray, mode: str) -> tuple[np.ndarray, IntervalVjp]:
    """Successor states of the root node.

    Parameters
    ----------
    surrogate : :class:`~slugmpc.surrogate.Surrogate`
    x : :class:`numpy.ndarray`
        Z-scored NARX features of the root, shape ``(1, n_features)``.
    mode : :class:`str`
        ``"nominal"`` gives the single nominal prediction; any other mode
        gives ``(up, mid, lo)`` of the surrogate's interval.

    Returns
    -------
    tuple[:class:`numpy.ndarray`, callable]
        States ``(branches, n_y)`` and the backpropagation function of the
        interval.
    """
    if mode == "nominal":
        mid, mean_vjp = surrogate.mean_vjp(x)
        return mid, lambda d_lo, d_mid, d_up: mean_vjp(d_mid)
    iv, vjp = surrogate.predict_vjp(x)
    return np.concatenate((iv.up, iv.mid, iv.lo)), vjp

def _features(layout: NarxLayout, ys: np.ndarray, us: np.ndarray, k: int) -> np.ndarray:
    # ys: (B, lag + 1 + k', n_y) oldest first, us: (lag + horizon, n_u) oldest first
    lag = layout.lag
    y_win = ys[:, k:k + lag + 1][:, ::-1]
    u_win = np.broadcast_to(us[k:k + lag + 1][::-1], (ys.shape[0], lag + 1, us.shape[1]))
    return layout.assemble(y_win, u_win)

class _Rollout(NamedTuple):
    ys: np.ndarray
    us: np.ndarray
    root_vjp: IntervalVjp
    step_vjps: list[MeanVjp]

def _rollout(surrogate: Surrogate, y_hist: np.ndarray, u_past: np.ndarray, u_plan: np.ndarray,
             mode: str) -> _Rollout:
    layout = surrogate.layout
    lag = layout.lag
    horizon = u_plan.shape[0]
    us = np.concatenate((u_past, u_plan))
    root, root_vjp = branch(surrogate, _features(layout, y_hist[None], us, 0), mode)
    n_b = root.shape[0]
    ys = np.empty((n_b, lag + 1 + horizon, layout.n_y))
    ys[:, : lag + 1] = y_hist
    ys[:, lag + 1] = root
    if not np.all(np.isfinite(root)):
        bad = int(np.argmax(~np.all(np.isfinite(root), axis=1)))
        raise RolloutError(1, bad)
    vjps: list[MeanVjp] = []
    for k in range(1, horizon):
        nxt, vjp = surrogate.mean_vjp(_features(layout, ys, us, k))
        if not np.all(np.isfinite(nxt)):
            bad = int(np.argmax(~np.all(np.isfinite(nxt), axis=1)))
            raise RolloutError(k + 1, bad)
        ys[:, lag + 1 + k] = nxt
        vjps.append(vjp)
    return _Rollout(ys, us, root_vjp, vjps)

def rollout(surrogate: Surrogate, y_hist: np.ndarray, u_past: np.ndarray, u_plan: np.ndarray,
            mode: str = "nominal") -> ScenarioTree:
    """Propagate every branch over the input plan.

    Parameters
    ----------
    surrogate : :class:`~slugmpc.surrogate.Surrogate`
    y_hist : :class:`numpy.ndarray`
        Z-scored measurements ``(lag + 1, n_y)``, oldest first.
    u_past : :class:`numpy.ndarray`
        Z-scored past inputs ``(lag, n_u)``, oldest first.
    u_plan : :class:`numpy.ndarray`
        Z-scored planned inputs ``(horizon, n_u)``.
    mode : :class:`str`
        Tree shape, see :func:`branch`.

    Raises
    ------
    :exc:`~slugmpc.errors.RolloutError`
        A prediction became nonfinite.
    """
    r = _rollout(surrogate, y_hist, u_past, u_plan, mode)
    lag = surrogate.layout.lag
    return ScenarioTree(r.ys[:, lag:], r.us)

def objective(tree: ScenarioTree, unit_inputs: np.ndarray, prev_unit: np.ndarray, config: MpcConfig,
              y_mean: np.ndarray, y_std: np.ndarray) -> float:
    """Scenario-averaged cost of a rolled-out tree.

    For each branch the stage costs ``-g1 d50 - g2 Q_PM + g3 Q_TM + g4 |du|^2``
    over ``k = 0 .. N-1``, the terminal ``-g1 d50_N`` and the penalty
    ``rho max(0, d90_k - d90_max)^2`` over ``k = 1 .. N`` are summed; the
    branches are weighted equally. ``du_0`` is taken against ``prev_unit``.
    """
    states = tree.states * y_std + y_mean
    d50 = states[:, :, D50]
    d90 = states[:, 1:, D90]
    value = -config.gamma1 * float(np.mean(np.sum(d50, axis=1)))
    if config.d50_ref is not None and config.gamma_track:
        value += config.gamma_track * float(np.mean(np.sum((d50 - config.d50_ref) ** 2, axis=1)))
    slack = np.maximum(0.0, d90 - config.d90_max)
    value += config.rho_soft * float(np.mean(np.sum(slack ** 2, axis=1)))
    value += _input_cost(unit_inputs, prev_unit, config)
    return value

def _input_cost(v: np.ndarray, prev_unit: np.ndarray, config: MpcConfig) -> float:
    du = np.diff(np.vstack((prev_unit, v)), axis=0)
    return (-config.gamma2 * float(np.sum(v[:, 0])) + config.gamma3 * float(np.sum(v[:, 2]))
            + config.gamma4 * float(np.sum(du ** 2)))

def objective_and_gradient(v: np.ndarray, problem: _Problem) -> tuple[float, np.ndarray, _Rollout]:
    """Objective in box-normalised inputs ``v`` ``(horizon, 3)`` and its gradient."""
    config = problem.config
    surrogate = problem.surrogate
    layout = surrogate.layout
    lag = layout.lag
    horizon = v.shape[0]
    u_plan = (problem.physical_inputs(v) - problem.u_mean) / problem.u_std
    r = _rollout(surrogate, problem.y_hist, problem.u_past, u_plan, config.mode)
    tree = ScenarioTree(r.ys[:, lag:], r.us)
    value = objective(tree, v, problem.prev_unit, config, problem.y_mean, problem.y_std)

    n_b = r.ys.shape[0]
    states = tree.states * problem.y_std + problem.y_mean
    g_states = np.zeros_like(tree.states)
    g_states[:, :, D50] -= config.gamma1 / n_b
    if config.d50_ref is not None and config.gamma_track:
        g_states[:, :, D50] += 2 * config.gamma_track * (states[:, :, D50] - config.d50_ref) / n_b
    slack = np.maximum(0.0, states[:, 1:, D90] - config.d90_max)
    g_states[:, 1:, D90] += 2 * config.rho_soft * slack / n_b
    g_states *= problem.y_std

    g_ys = np.zeros_like(r.ys)
    g_ys[:, lag:] = g_states
    g_us = np.zeros_like(r.us)

    def scatter(k: int, dx: np.ndarray) -> None:
        d_y, d_u = layout.split(dx)
        for i in range(lag + 1):
            g_ys[:, k + lag - i] += d_y[:, i]
            g_us[k + lag - i] += d_u[:, i].sum(axis=0)

    for k in range(horizon - 1, 0, -1):
        scatter(k, r.step_vjps[k - 1](g_ys[:, lag + 1 + k]))
    g_root = g_ys[:, lag + 1]
    zero = np.zeros((1, layout.n_y))
    if config.mode == "nominal":
        dx0 = r.root_vjp(zero, g_root, zero)
    else:
        dx0 = r.root_vjp(g_root[2:3], g_root[1:2], g_root[0:1])
    scatter(0, dx0)

    span = np.asarray(config.upper) - np.asarray(config.lower)
    g_v = g_us[lag:, :N_MANIPULATED] / problem.u_std[:N_MANIPULATED] * span
    g_v[:, 0] -= config.gamma2
    g_v[:, 2] += config.gamma3
    du = np.diff(np.vstack((problem.prev_unit, v)), axis=0)
    g_v += 2 * config.gamma4 * du
    g_v[:-1] -= 2 * config.gamma4 * du[1:]
    return value, g_v, r

def _check_surrogate(surrogate: Surrogate, config: MpcConfig) -> Surrogate:
    if config.mode != "nominal" and config.mode != surrogate.kind:
        raise ConfigError("mode", f"mode {config.mode!r} needs a {config.mode} surrogate, got {surrogate.kind!r}")
    if config.m is not None and isinstance(surrogate, BllSurrogate) and config.m != surrogate.m:
        surrogate = BllSurrogate(surrogate.layout, surrogate.normalizer, surrogate.model, config.m)
    if config.alpha is not None and isinstance(surrogate, CqrSurrogate) and not math.isclose(config.alpha, surrogate.alpha):
        raise ConfigError("alpha", f"surrogate is calibrated for alpha={surrogate.alpha}; recalibrate it first")
    return surrogate

def solve(surrogate: Surrogate, state: NarxState, config: MpcConfig,
          prev_input: Optional[np.ndarray] = None, initial: Optional[np.ndarray] = None,
          disturbance: Optional[float] = None) -> MpcSolution:
    """Solve the multi-stage problem from the current NARX window.

    Parameters
    ----------
    surrogate : :class:`~slugmpc.surrogate.Surrogate`
        Internal model.
    state : :class:`NarxState`
        Populated NARX window.
    config : :class:`MpcConfig`
    prev_input : :class:`numpy.ndarray` | :data:`None`
        Input applied during the last period, for the move penalty. Defaults
        to the newest input of ``state``.
    initial : :class:`numpy.ndarray` | :data:`None`
        Initial guess ``(horizon, 3)`` in m³/s, e.g. a shifted previous
        solution. Defaults to ``prev_input`` held over the horizon.
    disturbance : :class:`float` | :data:`None`
        Measured ``w_cryst`` held over the horizon when the surrogate uses
        it; defaults to the newest value in ``state``.

    Returns
    -------
    :class:`MpcSolution`
        Inputs within the box bounds. If the optimizer stops early the best
        iterate is returned with ``converged=False``.

    Raises
    ------
    :exc:`~slugmpc.errors.NotWarmError`
        ``state`` is not populated.
    :exc:`~slugmpc.errors.RolloutError`
        The surrogate produced a nonfinite prediction.
    """
    surrogate = _check_surrogate(surrogate, config)
    start = time.perf_counter()
    problem = _Problem(surrogate, state, config, prev_input, disturbance)
    horizon = config.horizon
    if initial is None:
        v0 = np.tile(np.clip(problem.prev_unit, 0.0, 1.0), (horizon, 1))
    else:
        v0 = np.clip(config.to_unit(np.asarray(initial, dtype=float).reshape(horizon, -1)), 0.0, 1.0)

    memo: dict[bytes, float] = {}

    def fun(flat: np.ndarray) -> tuple[float, np.ndarray]:
        value, grad, _ = objective_and_gradient(flat.reshape(horizon, N_MANIPULATED), problem)
        memo.clear()
        memo[flat.tobytes()] = value
        return value, grad.ravel()

    history = [fun(v0.ravel())[0]]

    def callback(xk: np.ndarray) -> None:
        value = memo.get(xk.tobytes())
        history.append(value if value is not None else fun(xk)[0])

    res = minimize(
        fun, v0.ravel(), jac=True, method="L-BFGS-B",
        bounds=[(0.0, 1.0)] * (horizon * N_MANIPULATED), callback=callback,
        options={"maxiter": config.max_iter, "ftol": config.tol, "gtol": config.tol * 1e-2},
    )
    v = np.clip(res.x.reshape(horizon, N_MANIPULATED), 0.0, 1.0)
    value, _, r = objective_and_gradient(v, problem)
    if value > history[0]:
        # never worse than the initial guess
        v = v0
        value, _, r = objective_and_gradient(v, problem)
    elapsed = time.perf_counter() - start
    if not res.success:
        logger.warning("MPC solver stopped without convergence after %d iterations: %s", res.nit, res.message)

    lag = surrogate.layout.lag
    traj = r.ys[:, lag:] * problem.y_std + problem.y_mean
    slacks = np.maximum(0.0, traj[:, 1:, D90] - config.d90_max)
    inputs = config.from_unit(v)
    logger.debug("MPC solve: J=%.6g in %.3f s, %d iterations", value, elapsed, res.nit)
    return MpcSolution(
        inputs=inputs,
        applied=inputs[0].copy(),
        trajectories=traj,
        objective=float(value),
        slacks=slacks,
        max_slack=float(np.max(slacks, initial=0.0)),
        solve_time=elapsed,
        iterations=int(res.nit),
        converged=bool(res.success),
        message=str(res.message),
        history=history,
    )

class Controller:
    """Receding-horizon controller around :func:`solve`.

    Parameters
    ----------
    surrogate : :class:`~slugmpc.surrogate.Surrogate`
    config : :class:`MpcConfig` | :data:`None`

    Attributes
    ----------
    state : :class:`NarxState`
    last_input : :class:`numpy.ndarray` | :data:`None`
        Input applied during the current period (all input channels).
    solutions : list[:class:`MpcSolution`]
        One per :meth:`step`.
    """

    def __init__(self, surrogate: Surrogate, config: Optional[MpcConfig] = None) -> None:
        self.config = config or MpcConfig()
        self.surrogate = _check_surrogate(surrogate, self.config)
        self.state = NarxState(surrogate.layout)
        self.last_input: Optional[np.ndarray] = None
        self.disturbance: Optional[float] = None
        self.solutions: list[MpcSolution] = []
        self._rows: list[dict[str, object]] = []

    def observe(self, y: np.ndarray, u_prev: Optional[np.ndarray] = None) -> None:
        """Record a measurement without solving, e.g. while warming up.

        ``u_prev`` is the input applied during the period that ended with ``y``.
        """
        self.state.push(y, u_prev)
        if u_prev is not None:
            self.last_input = np.asarray(u_prev, dtype=float).copy()
            if self.last_input.size > N_MANIPULATED:
                self.disturbance = float(self.last_input[N_MANIPULATED])

    def step(self, y: np.ndarray, t: float = 0.0, disturbance: Optional[float] = None) -> np.ndarray:
        """Push ``y`` with the last applied input, solve and apply the first input.

        Returns
        -------
        :class:`numpy.ndarray`
            Manipulated inputs ``(Q_PM, Q_air, Q_TM)`` to apply (m³/s).

        Raises
        ------
        :exc:`~slugmpc.errors.NotWarmError`
            Fewer than ``lag + 1`` measurements have been observed.
        """
        self.state.push(y, self.last_input)
        self.state.check()
        if disturbance is not None:
            self.disturbance = float(disturbance)
        initial = None
        if self.solutions:
            prev = self.solutions[-1].inputs
            initial = np.vstack((prev[1:], prev[-1:]))
        sol = solve(self.surrogate, self.state, self.config,
                    prev_input=None if self.last_input is None else self.last_input[:N_MANIPULATED],
                    initial=initial, disturbance=self.disturbance)
        self.solutions.append(sol)
        self.last_input = sol.applied
        if self.surrogate.layout.use_disturbance:
            self.last_input = np.append(sol.applied, 0.0 if self.disturbance is None else self.disturbance)
        row: dict[str, object] = {"t": t}
        for name, value in zip(("Q_PM", "Q_air", "Q_TM"), sol.applied):
            row[name] = float(value)
        for j in range(sol.trajectories.shape[0]):
            row[f"d90_pred_b{j}"] = float(sol.trajectories[j, 1, D90])
        row.update(slack=sol.max_slack, objective=sol.objective, solve_time_s=sol.solve_time,
                   status="converged" if sol.converged else "max_iter")
        self._rows.append(row)
        return sol.applied.copy()

    @property
    def log(self) -> pd.DataFrame:
        """Per-step log: applied inputs, predicted ``d90`` per branch, slack,
        objective, solve time and status."""
        return pd.DataFrame(self._rows)

    def write_log(self, path: str | PathLike) -> None:
        with writing(path):
            self.log.to_csv(path, index=False, float_format="%.10g")

def plan_open_loop(surrogate: Surrogate, state: NarxState, config: MpcConfig, steps: int,
                   prev_input: Optional[np.ndarray] = None,
                   disturbance: Optional[float] = None) -> MpcSolution:
    """Solve once over ``steps`` periods, for applying the whole plan blindly."""
    return solve(surrogate, state, replace(config, horizon=steps), prev_input=prev_input,
                 disturbance=disturbance)

