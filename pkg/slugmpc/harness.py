"""Closed-loop case studies and their metrics.

Every study starts from the same recipe: the plant is simulated into a
steady state at fixed inputs, the controller's NARX window is filled from
the plant's own measurements and the controller then runs for a fixed
number of periods while the seed loading ``w_cryst`` follows the scenario.
Controllers compared within one study see the same plant seed, warm-up and
disturbance.

Outputs are laid out below one directory::

    <out>/data/                 excitation trajectories
    <out>/models/               surrogate artifacts
    <out>/runs/<name>/trajectory.csv
    <out>/runs/<name>/report.json
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from os import PathLike
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from ._utils import child_seeds, writing
from .errors import ConfigError, DatasetError, SlugMpcError
from .excitation import ExcitationPolicy, generate_data
from .mpc import D90, Controller, MpcConfig, plan_open_loop
from .narx import build_narx_dataset
from .params import INPUT_NAMES, MEASUREMENT_NAMES, Inputs
from .plant import Plant, PlantConfig
from .surrogate import Surrogate, SurrogateConfig, train_surrogate

__all__ = (
    "ScenarioConfig",
    "CaseStudyReport",
    "BoxStats",
    "CaseStudy2Report",
    "ComparisonReport",
    "SlugSizeReport",
    "OutputLayout",
    "box_stats",
    "controller_mode",
    "run_closed_loop",
    "run_open_loop",
    "case_study_1",
    "case_study_2",
    "open_vs_closed_loop",
    "slug_size_study",
    "summarize_runs",
)

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class ScenarioConfig:
    """A closed-loop scenario.

    Attributes
    ----------
    name : :class:`str`
        Run name, used as the output directory below ``runs/``.
    steps : :class:`int`
        Number of controller periods.
    warmup : :class:`float`
        Time the plant runs at :attr:`initial` before control starts (s).
    initial : tuple[:class:`float`, :class:`float`, :class:`float`]
        ``Q_PM``, ``Q_air`` and ``Q_TM`` during warm-up (m³/s).
    w_initial, w_final : :class:`float`
        Seed loading before and after the step.
    w_step : :class:`int` | :data:`None`
        Controller period at which ``w_cryst`` switches to :attr:`w_final`;
        :data:`None` keeps :attr:`w_initial` throughout.
    seed : :class:`int`
        Plant seed shared by all controllers of a study.
    workers : :class:`int`
        Worker processes for :func:`case_study_2`; ``1`` runs in-process.
    """
    name: str = "case_study_1"
    steps: int = 70
    warmup: float = 1500.0
    initial: tuple[float, float, float] = (3.0e-7, 3.0e-7, 2.0e-5)
    w_initial: float = 0.01
    w_final: float = 0.001
    w_step: Optional[int] = 35
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if not isinstance(self.steps, int) or self.steps < 2:
            raise ConfigError("steps", f"must be an integer >= 2, got {self.steps!r}")
        if not (math.isfinite(self.warmup) and self.warmup >= 0):
            raise ConfigError("warmup", "must be a finite non-negative duration")
        if len(self.initial) != 3 or not all(math.isfinite(q) and q > 0 for q in self.initial):
            raise ConfigError("initial", "needs three positive flows")
        for name in ("w_initial", "w_final"):
            if not (math.isfinite(getattr(self, name)) and getattr(self, name) >= 0):
                raise ConfigError(name, "must be a finite non-negative fraction")
        if self.w_step is not None and self.w_step < 0:
            raise ConfigError("w_step", "must be non-negative")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers", "must be a positive integer")
        if not self.name or "/" in self.name:
            raise ConfigError("name", f"must be a plain directory name, got {self.name!r}")

    def w_at(self, k: int) -> float:
        """Seed loading during controller period ``k``."""
        if self.w_step is not None and k >= self.w_step:
            return self.w_final
        return self.w_initial

    def inputs_at(self, u: Sequence[float], k: int) -> Inputs:
        return Inputs(float(u[0]), float(u[1]), float(u[2]), self.w_at(k))

@dataclass(frozen=True)
class CaseStudyReport:
    """Closed-loop metrics of one controller.

    Metrics are averaged over the controller periods, using the measurement
    the controller acted on in each period.

    Attributes
    ----------
    name : :class:`str`
    model : :class:`str`
        Surrogate kind.
    mode : :class:`str`
        Scenario-tree mode of the controller.
    steps : :class:`int`
    violation_pct : :class:`float`
        Percentage of periods with ``d90`` above the bound.
    avg_relative_violation_pct : :class:`float`
        Mean of ``max(0, (d90 - bound) / bound)`` in percent.
    avg_cost : :class:`float`
        Mean economic stage cost ``-g1 d50 - g2 Q_PM + g3 Q_TM`` with
        box-normalised flows; the move penalty and the soft constraint are
        left out.
    mean_solve_time, max_solve_time : :class:`float`
        Wall time of the solves (s).
    failed_steps : :class:`int`
        Periods in which the controller failed and the last input was held.
    rms_d50_error : :class:`float` | :data:`None`
        Root-mean-square deviation of ``d50`` from its reference when the
        controller tracks one (m).
    trajectory : :class:`pandas.DataFrame`
        Per period: time, inputs, measurements, predicted ``d90`` per
        branch, objective, solve time and status.
    """
    name: str
    model: str
    mode: str
    steps: int
    violation_pct: float
    avg_relative_violation_pct: float
    avg_cost: float
    mean_solve_time: float
    max_solve_time: float
    failed_steps: int = 0
    rms_d50_error: Optional[float] = None
    trajectory: pd.DataFrame = field(default_factory=pd.DataFrame, compare=False, repr=False)

    def to_dict(self) -> dict[str, Any]:
        data = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "trajectory"}
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in data.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

def controller_mode(kind: str) -> str:
    """Scenario-tree mode for a surrogate kind: plain networks run nominal."""
    return "nominal" if kind == "nn" else kind

def _settle(plant: Plant, controller: Controller, u: Inputs, scenario: ScenarioConfig) -> None:
    # steady state, then fill the window so that the first step pushes the last measurement
    plant.run(u, scenario.warmup)
    u_arr = u.as_array()
    lag = controller.surrogate.layout.lag
    if lag:
        controller.observe(plant.measurement.as_array())
        for _ in range(lag - 1):
            plant.sample(u)
            controller.observe(plant.measurement.as_array(), u_arr)
        plant.sample(u)
    controller.last_input = u_arr.copy()
    controller.disturbance = u.w_cryst

def _row(t: float, u: Inputs, y: np.ndarray) -> dict[str, Any]:
    row: dict[str, Any] = {"t": t}
    row.update(zip(INPUT_NAMES, (float(v) for v in u.as_array())))
    row.update(zip(MEASUREMENT_NAMES, (float(v) for v in y)))
    return row

def _report(name: str, model: str, config: MpcConfig, trajectory: pd.DataFrame) -> CaseStudyReport:
    d90 = trajectory["d90"].to_numpy()
    d50 = trajectory["d50"].to_numpy()
    bound = config.d90_max
    over = d90 > bound
    rel = np.where(over, (d90 - bound) / bound, 0.0) if math.isfinite(bound) else np.zeros_like(d90)
    unit = config.to_unit(trajectory.loc[:, ["Q_PM", "Q_air", "Q_TM"]].to_numpy())
    cost = -config.gamma1 * d50 - config.gamma2 * unit[:, 0] + config.gamma3 * unit[:, 2]
    times = trajectory["solve_time_s"].to_numpy(dtype=float)
    times = times[np.isfinite(times)]
    rms = None
    if config.d50_ref is not None:
        rms = float(np.sqrt(np.mean((d50 - config.d50_ref) ** 2)))
    return CaseStudyReport(
        name=name,
        model=model,
        mode=config.mode,
        steps=len(trajectory),
        violation_pct=100.0 * float(np.mean(over)),
        avg_relative_violation_pct=100.0 * float(np.mean(rel)),
        avg_cost=float(np.mean(cost)),
        mean_solve_time=float(np.mean(times)) if times.size else math.nan,
        max_solve_time=float(np.max(times)) if times.size else math.nan,
        failed_steps=int(np.sum(trajectory["status"] == "failed")),
        rms_d50_error=rms,
        trajectory=trajectory,
    )

def run_closed_loop(surrogate: Surrogate, config: MpcConfig, scenario: ScenarioConfig,
                    plant_config: Optional[PlantConfig] = None, name: Optional[str] = None) -> CaseStudyReport:
    """Run the receding-horizon controller on the simulated plant.

    A controller failure in one period is logged and recorded with status
    ``"failed"``; the previous input is held and the run continues.
    """
    plant = Plant.from_config(plant_config or PlantConfig(), seed=scenario.seed)
    controller = Controller(surrogate, config)
    u = scenario.inputs_at(scenario.initial, 0)
    _settle(plant, controller, u, scenario)

    rows = []
    n_b = config.n_branches
    for k in range(scenario.steps):
        w = scenario.w_at(k)
        y = plant.measurement.as_array()
        row = _row(plant.t, scenario.inputs_at(u.as_array(), k), y)
        try:
            applied = controller.step(y, t=plant.t, disturbance=w)
        except SlugMpcError as err:
            logger.warning("controller failed at step %d (%s); holding the last input", k, err)
            u = scenario.inputs_at(u.as_array(), k)
            row.update({f"d90_pred_b{j}": math.nan for j in range(n_b)})
            row.update(objective=math.nan, solve_time_s=math.nan, status="failed")
        else:
            sol = controller.solutions[-1]
            u = scenario.inputs_at(applied, k)
            row.update(zip(INPUT_NAMES, (float(v) for v in u.as_array())))
            row.update({f"d90_pred_b{j}": float(sol.trajectories[j, 1, D90]) for j in range(n_b)})
            row.update(objective=sol.objective, solve_time_s=sol.solve_time,
                       status="converged" if sol.converged else "max_iter")
        rows.append(row)
        plant.sample(u)

    report = _report(name or scenario.name, surrogate.kind, config, pd.DataFrame(rows))
    logger.info(
        "%s/%s: violations %.1f %%, relative violation %.2f %%, cost %.4g, solve time %.3f s (max %.3f s)",
        report.name, report.model, report.violation_pct, report.avg_relative_violation_pct,
        report.avg_cost, report.mean_solve_time, report.max_solve_time,
    )
    return report

def run_open_loop(surrogate: Surrogate, config: MpcConfig, scenario: ScenarioConfig,
                  plant_config: Optional[PlantConfig] = None, name: Optional[str] = None) -> CaseStudyReport:
    """Plan the whole scenario once from the initial state and apply the plan.

    The planner knows only the initial seed loading; the plant still sees
    the scenario's disturbance.
    """
    plant = Plant.from_config(plant_config or PlantConfig(), seed=scenario.seed)
    controller = Controller(surrogate, config)
    u = scenario.inputs_at(scenario.initial, 0)
    _settle(plant, controller, u, scenario)
    controller.state.push(plant.measurement.as_array(), controller.last_input)
    sol = plan_open_loop(controller.surrogate, controller.state, config, scenario.steps,
                         prev_input=u.as_array()[:3], disturbance=scenario.w_initial)

    rows = []
    for k in range(scenario.steps):
        u = scenario.inputs_at(sol.inputs[k], k)
        row = _row(plant.t, u, plant.measurement.as_array())
        row.update({f"d90_pred_b{j}": float(sol.trajectories[j, k + 1, D90]) for j in range(config.n_branches)})
        row.update(objective=sol.objective, solve_time_s=sol.solve_time if k == 0 else math.nan,
                   status="open_loop")
        rows.append(row)
        plant.sample(u)
    return _report(name or f"{scenario.name}_open_loop", surrogate.kind, config, pd.DataFrame(rows))

def case_study_1(models: Mapping[str, Surrogate], scenario: Optional[ScenarioConfig] = None,
                 config: Optional[MpcConfig] = None,
                 plant_config: Optional[PlantConfig] = None) -> dict[str, CaseStudyReport]:
    """Run every model's controller on the same seed-loading step.

    Parameters
    ----------
    models : Mapping[:class:`str`, :class:`~slugmpc.surrogate.Surrogate`]
        Surrogates by label, e.g. ``{"nn": ..., "cqr": ..., "bll": ...}``.
        Plain networks run a nominal controller, CQR and BLL models a
        three-branch one.
    scenario : :class:`ScenarioConfig` | :data:`None`
    config : :class:`MpcConfig` | :data:`None`
        Weights and bounds shared by all controllers; the mode is set per model.
    plant_config : :class:`~slugmpc.plant.PlantConfig` | :data:`None`

    Returns
    -------
    dict[:class:`str`, :class:`CaseStudyReport`]
    """
    scenario = scenario or ScenarioConfig()
    config = config or MpcConfig()
    reports = {}
    for label, model in models.items():
        cfg = replace(config, mode=controller_mode(model.kind))  # type: ignore[arg-type]
        reports[label] = run_closed_loop(model, cfg, scenario, plant_config, name=f"{scenario.name}_{label}")
    return reports

class BoxStats(NamedTuple):
    """Box-plot summary with whiskers at 1.5 IQR, clipped to the data."""
    n: int
    median: float
    q1: float
    q3: float
    whisker_lo: float
    whisker_hi: float
    outliers: tuple[float, ...]

def box_stats(values: Sequence[float]) -> BoxStats:
    """Quartiles, whiskers and outliers of the finite entries of ``values``."""
    v = np.asarray(values, dtype=float)
    v = np.sort(v[np.isfinite(v)])
    if v.size == 0:
        return BoxStats(0, math.nan, math.nan, math.nan, math.nan, math.nan, ())
    q1, median, q3 = (float(q) for q in np.percentile(v, (25, 50, 75)))
    iqr = q3 - q1
    inside = v[(v >= q1 - 1.5 * iqr) & (v <= q3 + 1.5 * iqr)]
    outliers = tuple(float(x) for x in v[(v < inside[0]) | (v > inside[-1])])
    return BoxStats(int(v.size), median, q1, q3, float(inside[0]), float(inside[-1]), outliers)

class CaseStudy2Report(NamedTuple):
    cells: pd.DataFrame
    """One row per dataset size, repetition and model; failed runs hold NaN."""
    summary: pd.DataFrame
    """Box-plot statistics of violation percentage and cost per size and model."""

def _case2_job(size: int, repetition: int, seed: int, policy: ExcitationPolicy,
               surrogate_config: SurrogateConfig, kinds: Sequence[str], scenario: ScenarioConfig,
               config: MpcConfig, plant_config: PlantConfig) -> list[dict[str, Any]]:
    rows = []
    try:
        runs = generate_data(replace(policy, seed=seed), size, plant_config)
        dataset = build_narx_dataset(runs, surrogate_config.layout, surrogate_config.split, seed=seed,
                                     sample_period=plant_config.sim.measurement_period)
    except SlugMpcError as err:
        logger.warning("dataset of size %d, repetition %d failed: %s", size, repetition, err)
        return [dict(size=size, repetition=repetition, model=k, violation_pct=math.nan,
                     avg_cost=math.nan, failed=True) for k in kinds]
    for kind in kinds:
        try:
            model = train_surrogate(dataset, replace(surrogate_config, kind=kind), seed=seed)  # type: ignore[arg-type]
            cfg = replace(config, mode=controller_mode(kind))  # type: ignore[arg-type]
            report = run_closed_loop(model, cfg, scenario, plant_config,
                                     name=f"{scenario.name}_{size}_{repetition}_{kind}")
        except SlugMpcError as err:
            logger.warning("%s at size %d, repetition %d failed: %s", kind, size, repetition, err)
            rows.append(dict(size=size, repetition=repetition, model=kind, violation_pct=math.nan,
                             avg_cost=math.nan, failed=True))
        else:
            rows.append(dict(size=size, repetition=repetition, model=kind, violation_pct=report.violation_pct,
                             avg_cost=report.avg_cost, failed=False))
    return rows

def case_study_2(sizes: Sequence[int], repetitions: int, scenario: Optional[ScenarioConfig] = None,
                 config: Optional[MpcConfig] = None, plant_config: Optional[PlantConfig] = None,
                 policy: Optional[ExcitationPolicy] = None,
                 surrogate_config: Optional[SurrogateConfig] = None,
                 kinds: Sequence[str] = ("nn", "cqr", "bll")) -> CaseStudy2Report:
    """Closed-loop performance against the size of the training data.

    For every size and repetition a dataset is generated with its own seed,
    each model kind is trained on it and run through ``scenario``. Jobs run
    in :attr:`ScenarioConfig.workers` processes. A failed job is recorded as
    missing and left out of the statistics.
    """
    scenario = scenario or ScenarioConfig(name="case_study_2")
    config = config or MpcConfig()
    plant_config = plant_config or PlantConfig()
    policy = policy or ExcitationPolicy()
    surrogate_config = surrogate_config or SurrogateConfig()
    if repetitions < 1 or not sizes:
        raise ConfigError("repetitions", "need at least one size and one repetition")

    jobs = [(size, rep) for size in sizes for rep in range(repetitions)]
    seeds = [int(ss.generate_state(1)[0]) for ss in child_seeds(policy.seed, len(jobs))]
    args = [(size, rep, seed, policy, surrogate_config, tuple(kinds), scenario, config, plant_config)
            for (size, rep), seed in zip(jobs, seeds)]
    if scenario.workers > 1:
        with ProcessPoolExecutor(max_workers=scenario.workers) as pool:
            results = list(pool.map(_case2_job, *zip(*args)))
    else:
        results = [_case2_job(*a) for a in args]
    cells = pd.DataFrame([row for rows in results for row in rows])

    summary = []
    for (size, kind), group in cells.groupby(["size", "model"], sort=True):
        entry: dict[str, Any] = {"size": size, "model": kind, "missing": int(group["failed"].sum())}
        for metric in ("violation_pct", "avg_cost"):
            stats = box_stats(group[metric].to_numpy())
            for key, value in stats._asdict().items():
                if key != "outliers":
                    entry[f"{metric}_{key}"] = value
        summary.append(entry)
    logger.info("case study 2: %d jobs, %d failed runs", len(jobs), int(cells["failed"].sum()))
    return CaseStudy2Report(cells, pd.DataFrame(summary))

class ComparisonReport(NamedTuple):
    open_loop: CaseStudyReport
    closed_loop: CaseStudyReport

    @property
    def rms_open(self) -> float:
        return float(self.open_loop.rms_d50_error)  # type: ignore[arg-type]

    @property
    def rms_closed(self) -> float:
        return float(self.closed_loop.rms_d50_error)  # type: ignore[arg-type]

def open_vs_closed_loop(surrogate: Surrogate, scenario: Optional[ScenarioConfig] = None,
                        config: Optional[MpcConfig] = None, plant_config: Optional[PlantConfig] = None,
                        d50_ref: float = 5.0e-4, gamma_track: float = 1.0e8) -> ComparisonReport:
    """Track a median diameter once with a one-shot plan and once in closed loop.

    The economic ``d50`` reward is replaced by the tracking term
    ``gamma_track (d50 - d50_ref)^2``; both runs see the same plant seed and
    seed-loading trajectory.
    """
    scenario = scenario or ScenarioConfig(name="open_vs_closed")
    config = replace(config or MpcConfig(), mode="nominal", gamma1=0.0, d50_ref=d50_ref, gamma_track=gamma_track)
    closed = run_closed_loop(surrogate, config, scenario, plant_config, name=f"{scenario.name}_closed_loop")
    opened = run_open_loop(surrogate, config, scenario, plant_config, name=f"{scenario.name}_open_loop")
    logger.info("d50 tracking RMS error: open loop %.4g m, closed loop %.4g m",
                opened.rms_d50_error, closed.rms_d50_error)
    return ComparisonReport(opened, closed)

class SlugSizeReport(NamedTuple):
    dt_coarse: float
    dt_fine: float
    coarse: tuple[float, float]
    """Mean outlet ``(T_PM, T_TM)`` with the coarse step (K)."""
    fine: tuple[float, float]
    max_relative_difference: float

def _fine_step(plant_config: PlantConfig, inputs: Inputs) -> float:
    sim = plant_config.sim
    dt_real = sim.slug_volume(plant_config.params) / inputs.q_pm
    # largest step at or below dt_real that divides the measurement period
    return sim.measurement_period / math.ceil(sim.measurement_period / dt_real - 1e-9)

def _outlet_temperatures(plant_config: PlantConfig, inputs: Inputs, duration: float, average: int,
                         seed: int) -> tuple[float, float]:
    plant = Plant.from_config(plant_config, seed=seed)
    plant.run(inputs, duration)
    ys = np.array([plant.sample(inputs).as_array()[:2] for _ in range(average)])
    return float(ys[:, 0].mean()), float(ys[:, 1].mean())

def slug_size_study(plant_config: Optional[PlantConfig] = None, inputs: Optional[Inputs] = None,
                    duration: float = 3000.0, dt_fine: Optional[float] = None,
                    average: int = 5, seed: int = 0) -> SlugSizeReport:
    """Compare steady outlet temperatures of the coarse model-scale slug
    with a fine step.

    By default the fine step makes one simulated slug as large as the real
    slug volume of :class:`~slugmpc.params.SimConfig`. Temperatures are
    averaged over ``average`` measurement periods after ``duration``
    seconds at constant inputs.
    """
    plant_config = plant_config or PlantConfig()
    inputs = inputs or Inputs()
    fine_dt = _fine_step(plant_config, inputs) if dt_fine is None else dt_fine
    fine_config = replace(plant_config, sim=replace(plant_config.sim, dt=fine_dt))
    coarse = _outlet_temperatures(plant_config, inputs, duration, average, seed)
    fine = _outlet_temperatures(fine_config, inputs, duration, average, seed)
    diff = max(abs(c - f) / abs(f) for c, f in zip(coarse, fine))
    logger.info("slug size study: dt %.3g s vs %.3g s, max relative outlet temperature difference %.3g",
                plant_config.sim.dt, fine_dt, diff)
    return SlugSizeReport(plant_config.sim.dt, fine_dt, coarse, fine, diff)

class OutputLayout:
    """Directories of one output root.

    Parameters
    ----------
    root : str | :class:`os.PathLike`
        Output directory; subdirectories are created on demand.
    """

    def __init__(self, root: str | PathLike) -> None:
        self.root = Path(root)

    @property
    def data(self) -> Path:
        return self._dir(self.root / "data")

    @property
    def models(self) -> Path:
        return self._dir(self.root / "models")

    def run(self, name: str) -> Path:
        return self._dir(self.root / "runs" / name)

    @staticmethod
    def _dir(path: Path) -> Path:
        with writing(path):
            path.mkdir(parents=True, exist_ok=True)
        return path

    def write_report(self, report: CaseStudyReport) -> Path:
        """Write ``trajectory.csv`` and ``report.json`` of ``report``; returns the run directory."""
        directory = self.run(report.name)
        with writing(directory):
            report.trajectory.to_csv(directory / "trajectory.csv", index=False, float_format="%.10g")
            (directory / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        return directory

def summarize_runs(root: str | PathLike) -> pd.DataFrame:
    """Collect every ``runs/*/report.json`` below ``root`` into one table.

    Raises
    ------
    :exc:`~slugmpc.errors.DatasetError`
        A report cannot be parsed.
    """
    rows = []
    for path in sorted(Path(root, "runs").glob("*/report.json")):
        try:
            rows.append(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as err:
            raise DatasetError(f"cannot read report {path}: {err}") from None
    return pd.DataFrame(rows)
