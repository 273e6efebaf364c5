"""Command-line entry point.

Every subcommand reads its own config file (``--config``), falling back to
the file a run config (``--run``) points to for that concern and then to
the defaults. Flags override file values. All configs are loaded and
validated before anything is simulated or written.

Exit codes: ``0`` on success, ``1`` on a runtime failure and ``2`` on a
usage or configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, TypeVar

from ._utils import writing
from .config import dump_config, load_config, resolve_seed
from .errors import ConfigError, SlugMpcError
from .excitation import ExcitationPolicy, generate_data, read_dataset, write_dataset
from .harness import (OutputLayout, ScenarioConfig, case_study_1, case_study_2, controller_mode,
                      open_vs_closed_loop, run_closed_loop, slug_size_study, summarize_runs)
from .mpc import MpcConfig
from .narx import build_narx_dataset
from .params import Inputs
from .plant import Plant, PlantConfig
from .surrogate import SurrogateConfig, evaluate, load_surrogate, save_surrogate, train_surrogate

__all__ = (
    "RunConfig",
    "build_parser",
    "dispatch",
    "main",
)

logger = logging.getLogger(__name__)

C = TypeVar("C")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

@dataclass(frozen=True)
class RunConfig:
    """Paths of the per-concern config files of a run, plus seed and output.

    Attributes
    ----------
    plant, excitation, surrogate, controller, scenario : :class:`str` | :data:`None`
        JSON files for :class:`~slugmpc.plant.PlantConfig`,
        :class:`~slugmpc.excitation.ExcitationPolicy`,
        :class:`~slugmpc.surrogate.SurrogateConfig`,
        :class:`~slugmpc.mpc.MpcConfig` and
        :class:`~slugmpc.harness.ScenarioConfig`. Relative paths are
        resolved against the run config's directory.
    seed : :class:`int` | :data:`None`
    out : :class:`str` | :data:`None`
        Output root.
    """
    plant: Optional[str] = None
    excitation: Optional[str] = None
    surrogate: Optional[str] = None
    controller: Optional[str] = None
    scenario: Optional[str] = None
    seed: Optional[int] = None
    out: Optional[str] = None

    def __post_init__(self) -> None:
        for f in ("plant", "excitation", "surrogate", "controller", "scenario"):
            path = getattr(self, f)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f, f"file {path} does not exist")

    @classmethod
    def load(cls, path: Optional[str]) -> RunConfig:
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as err:
            raise ConfigError("run", f"cannot read {path}: {err.strerror}") from None
        except json.JSONDecodeError as err:
            raise ConfigError("run", f"{path} is not valid JSON: {err.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("run", f"{path} must contain a JSON object")
        base = Path(path).parent
        for f in ("plant", "excitation", "surrogate", "controller", "scenario"):
            if isinstance(data.get(f), str):
                data[f] = str(base / data[f])
        return load_config(cls, None, data)

def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=None, help="random seed (default: run config, $SFC_SEED, 0)")
    parser.add_argument("--out", default=None, help="output directory (default: out)")
    parser.add_argument("--config", default=None, help="config file of this subcommand")
    parser.add_argument("--run", default=None, help="run config naming the config file of every concern")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slugmpc",
        description="Slug flow crystallizer simulation, NARX surrogates and multi-stage MPC.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", help="simulate the plant at constant inputs (--config: plant)")
    _common(p)
    p.add_argument("--steps", type=int, default=100, help="measurement periods to simulate")
    p.add_argument("--name", default="simulate")
    for flag in ("--q-pm", "--q-air", "--q-tm", "--w-cryst"):
        p.add_argument(flag, type=float, default=None)

    p = sub.add_parser("gen-data", help="generate excitation data (--config: excitation)")
    _common(p)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--plant", default=None, help="plant config file")

    p = sub.add_parser("train", help="train a surrogate (--config: surrogate)")
    _common(p)
    p.add_argument("--model", choices=("nn", "cqr", "bll"), default=None)
    p.add_argument("--data", default=None, help="trajectory CSV or directory (default: <out>/data)")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--m", type=float, default=None)
    p.add_argument("--lag", type=int, default=None)
    p.add_argument("--disturbance", action="store_true", default=None, help="feed w_cryst to the model")
    p.add_argument("--output", default=None, help="artifact path (default: <out>/models/<model>.json)")

    p = sub.add_parser("control", help="run one closed-loop scenario (--config: controller)")
    _common(p)
    p.add_argument("--model", required=True, help="surrogate artifact")
    p.add_argument("--mode", choices=("nominal", "cqr", "bll"), default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--name", default=None)
    p.add_argument("--plant", default=None, help="plant config file")
    p.add_argument("--scenario", default=None, help="scenario config file")

    p = sub.add_parser("case-study", help="run a case study (--config: scenario)")
    _common(p)
    p.add_argument("study", choices=("1", "2", "open-loop", "slug-size"))
    p.add_argument("--models", nargs="+", default=(), help="surrogate artifacts")
    p.add_argument("--sizes", type=int, nargs="+", default=(1000, 2000, 4000, 8000))
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--plant", default=None, help="plant config file")
    p.add_argument("--controller", default=None, help="controller config file")

    p = sub.add_parser("report", help="collect run reports into <out>/summary.csv")
    _common(p)
    return parser

class _Context:
    """Resolved configuration of one invocation."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.run = RunConfig.load(args.run)
        self.layout = OutputLayout(args.out or self.run.out or "out")

    def load(self, cls: type[C], concern: str, own: bool, flag: Optional[str] = None,
             overrides: Optional[dict[str, Any]] = None) -> C:
        path = flag or (self.args.config if own else None) or getattr(self.run, concern)
        return load_config(cls, path, overrides)

    def seed(self, configured: Optional[int] = None) -> int:
        return resolve_seed(self.args.seed, self.run.seed if self.run.seed is not None else configured)

def _seed_if_given(ctx: _Context, concern: str, own: bool, config: Any) -> Optional[int]:
    given = (ctx.args.config if own else None) or getattr(ctx.run, concern)
    return config.seed if given is not None else None

def _simulate(ctx: _Context) -> None:
    args = ctx.args
    plant_config = ctx.load(PlantConfig, "plant", True)
    if args.steps < 1:
        raise ConfigError("steps", "must be positive")
    seed = ctx.seed(_seed_if_given(ctx, "plant", True, plant_config.sim))
    changes = {k: v for k, v in (("q_pm", args.q_pm), ("q_air", args.q_air), ("q_tm", args.q_tm),
                                 ("w_cryst", args.w_cryst)) if v is not None}
    inputs = Inputs().replace(**changes)
    frame = Plant.from_config(plant_config, seed=seed).simulate([inputs] * args.steps)
    directory = ctx.layout.run(args.name)
    with writing(directory):
        frame.to_csv(directory / "trajectory.csv", index=False, float_format="%.10g")
        (directory / "plant.json").write_text(dump_config(plant_config) + "\n", encoding="utf-8")
    logger.info("wrote %d samples to %s", len(frame), directory / "trajectory.csv")

def _gen_data(ctx: _Context) -> None:
    args = ctx.args
    policy = ctx.load(ExcitationPolicy, "excitation", True)
    plant_config = ctx.load(PlantConfig, "plant", False, args.plant)
    if args.samples < 0 or args.runs < 1:
        raise ConfigError("samples", "need samples >= 0 and runs >= 1")
    policy = replace(policy, seed=ctx.seed(_seed_if_given(ctx, "excitation", True, policy)))
    runs = generate_data(policy, args.samples, plant_config, n_runs=args.runs)
    paths = write_dataset(runs, ctx.layout.data)
    with writing(ctx.layout.data):
        (ctx.layout.data / "excitation.json").write_text(dump_config(policy) + "\n", encoding="utf-8")
    logger.info("wrote %d trajectories to %s", len(paths), ctx.layout.data)

def _train(ctx: _Context) -> None:
    args = ctx.args
    overrides = {"kind": args.model, "alpha": args.alpha, "m": args.m, "lag": args.lag,
                 "use_disturbance": args.disturbance}
    config = ctx.load(SurrogateConfig, "surrogate", True, overrides=overrides)
    config = replace(config, seed=ctx.seed(_seed_if_given(ctx, "surrogate", True, config)))
    data = Path(args.data) if args.data else ctx.layout.root / "data"
    trajectories = read_dataset(data)
    dataset = build_narx_dataset(trajectories, config.layout, config.split, seed=config.seed, sample_period=None)
    model = train_surrogate(dataset, config)
    output = Path(args.output) if args.output else ctx.layout.models / f"{config.kind}.json"
    with writing(output.parent):
        output.parent.mkdir(parents=True, exist_ok=True)
    metadata: dict[str, Any] = {"seed": config.seed, "dataset_digest": dataset.digest,
                                "config": dataclasses.asdict(config)}
    if dataset.splits["test"].size:
        prediction = evaluate(model, dataset, "prediction")
        simulation = evaluate(model, dataset, "simulation")
        metadata["evaluation"] = {
            r.mode: {"mse": r.mse, "coverage": r.coverage, "n": r.n, "diverged": r.diverged}
            for r in (prediction, simulation)
        }
        if simulation.band is not None:
            with writing(output.with_suffix(".band.csv")):
                simulation.band.to_csv(output.with_suffix(".band.csv"), index=False, float_format="%.10g")
        logger.info("%s test MSE %.4g, coverage %.4f", config.kind, prediction.mse, prediction.coverage)
    save_surrogate(model, output, metadata)
    logger.info("wrote %s", output)

def _control(ctx: _Context) -> None:
    args = ctx.args
    config = ctx.load(MpcConfig, "controller", True, overrides={"mode": args.mode})
    scenario = ctx.load(ScenarioConfig, "scenario", False, args.scenario,
                        overrides={"steps": args.steps, "name": args.name})
    plant_config = ctx.load(PlantConfig, "plant", False, args.plant)
    scenario = replace(scenario, seed=ctx.seed(_seed_if_given(ctx, "scenario", False, scenario)))
    model, _ = load_surrogate(args.model)
    if args.mode is None:
        config = replace(config, mode=controller_mode(model.kind))  # type: ignore[arg-type]
    report = run_closed_loop(model, config, scenario, plant_config)
    ctx.layout.write_report(report)

def _case_study(ctx: _Context) -> None:
    args = ctx.args
    scenario = ctx.load(ScenarioConfig, "scenario", True, overrides={"workers": args.workers})
    config = ctx.load(MpcConfig, "controller", False, args.controller)
    plant_config = ctx.load(PlantConfig, "plant", False, args.plant)
    scenario = replace(scenario, seed=ctx.seed(_seed_if_given(ctx, "scenario", True, scenario)))
    layout = ctx.layout

    if args.study == "slug-size":
        result = slug_size_study(plant_config, seed=scenario.seed)
        directory = layout.run(scenario.name)
        with writing(directory):
            (directory / "report.json").write_text(
                json.dumps(result._asdict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return

    if args.study == "2":
        policy = ctx.load(ExcitationPolicy, "excitation", False)
        surrogate_config = ctx.load(SurrogateConfig, "surrogate", False)
        result2 = case_study_2(args.sizes, args.repetitions, scenario, config, plant_config,
                               replace(policy, seed=scenario.seed), surrogate_config)
        directory = layout.run(scenario.name)
        with writing(directory):
            result2.cells.to_csv(directory / "cells.csv", index=False, float_format="%.10g")
            result2.summary.to_csv(directory / "summary.csv", index=False, float_format="%.10g")
        return

    if not args.models:
        raise ConfigError("models", f"case study {args.study} needs --models")
    models = {}
    for path in args.models:
        model, _ = load_surrogate(path)
        models[Path(path).stem] = model
    if args.study == "1":
        for report in case_study_1(models, scenario, config, plant_config).values():
            layout.write_report(report)
        return
    comparison = open_vs_closed_loop(next(iter(models.values())), scenario, config, plant_config)
    layout.write_report(comparison.open_loop)
    layout.write_report(comparison.closed_loop)

def _report(ctx: _Context) -> None:
    table = summarize_runs(ctx.layout.root)
    if table.empty:
        raise SlugMpcError(f"no run reports below {ctx.layout.root / 'runs'}")
    with writing(ctx.layout.root / "summary.csv"):
        table.to_csv(ctx.layout.root / "summary.csv", index=False, float_format="%.10g")
    print(table.to_string(index=False))

_COMMANDS: dict[str, Callable[[_Context], None]] = {
    "simulate": _simulate,
    "gen-data": _gen_data,
    "train": _train,
    "control": _control,
    "case-study": _case_study,
    "report": _report,
}

def _configure_logging(verbose: int, quiet: bool) -> None:
    level = logging.WARNING if quiet else (logging.DEBUG if verbose else logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)

def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code.

    Unknown subcommands and flags make :mod:`argparse` print the usage and
    exit with code ``2``.
    """
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose, args.quiet)
    try:
        _COMMANDS[args.command](_Context(args))
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SlugMpcError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0

def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        return dispatch(argv)
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 2
