#!/usr/bin/env python3
"""
cli.py — Command-line front end for the simulator

Usage:
  python -m eventgrad run      --config configs/ls_eventgrad.json --out out/run
  python -m eventgrad compare  --config configs/ls_eventgrad.json --out out/cmp
  python -m eventgrad sweep    --config configs/ls_sweep_horizon.json
  python -m eventgrad bound    --config configs/ls_bound_geometric.json
  python -m eventgrad validate eventgrad/configs/*.json

Exit codes:
  0 = success (bound inapplicability is reported, not a failure)
  1 = runtime failure
  2 = bad config or bad arguments

Environment:
  EVENTGRAD_THREADS  caps the number of sweep points run concurrently
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from ..config import ConfigError, ExperimentConfig, ExperimentConfigValidator, SweepPoint
from ..sim.analysis import BoundInputs, bound_report, estimate_constants, gradient_norm_diagnostic
from ..sim.comm import message_percentage
from ..sim.engine import Algorithm, RunMetrics, Simulation, compare
from ..sim.errors import BoundError, SimulationError
from ..sim.trigger import ScheduleKind, ThresholdSchedule
from . import batch_validator
from .io import _save_json, dumps_json, write_csv, write_metrics_csv, write_metrics_jsonl, write_traces_csv

logger = logging.getLogger(__name__)

THREADS_ENV = "EVENTGRAD_THREADS"


def _banner(title: str) -> None:
    print(f"\n{'='*60}")
    print(title)
    print(f"{'='*60}")


def load_experiment(path: Path, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    config = ExperimentConfigValidator().validate_strict(Path(path))
    return config.with_overrides(seed=seed, output_dir=out)


def sweep_threads(env: Optional[Dict[str, str]] = None) -> int:
    """Sweep parallelism from EVENTGRAD_THREADS (default: CPU count)."""
    env = os.environ if env is None else env
    raw = env.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def _seeds_meta(seed: int, n: int) -> Dict[str, Any]:
    return {"seed": seed, "data": 0, "init": 1, "probe": 2, "pe": list(range(3, n + 3))}


def build_meta(experiment: ExperimentConfig, metrics: RunMetrics) -> Dict[str, Any]:
    run = experiment.run
    return {
        "config": experiment.to_dict(),
        "rho": metrics.rho,
        "seeds": _seeds_meta(run.seed, run.n),
        "lipschitz": metrics.lipschitz,
        "gamma_effective": metrics.gamma,
        "iterations_per_epoch": metrics.iterations_per_epoch,
        "epochs": metrics.epochs,
        "wall_time_s": metrics.wall_time_s,
        "initial_loss": metrics.initial_loss,
        "initial_disagreement": metrics.initial_disagreement,
        "final_loss": metrics.final_loss,
        "final_accuracy": metrics.final_accuracy,
        "untriggered_checks": metrics.untriggered_checks,
        "max_threshold_final": metrics.rows[-1].max_threshold,
        "comm": metrics.stats.to_dict(),
    }


def write_run_outputs(out_dir: Path, experiment: ExperimentConfig, metrics: RunMetrics) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    records = metrics.records()
    if experiment.output_format == "jsonl":
        write_metrics_jsonl(out_dir / "metrics.jsonl", records)
    else:
        write_metrics_csv(out_dir / "metrics.csv", records)
    if experiment.output_traces:
        write_traces_csv(out_dir / "traces.csv", metrics.trace_records())
    _save_json(out_dir / "meta.json", build_meta(experiment, metrics))


# ===== Commands =====

def cmd_run(experiment: ExperimentConfig) -> int:
    out_dir = Path(experiment.output_dir)
    metrics = Simulation.build(experiment.run).run(record_traces=experiment.output_traces)
    write_run_outputs(out_dir, experiment, metrics)

    _banner(f"run: {experiment.name} ({experiment.run.algorithm.value})")
    print(f"Iterations:   {len(metrics.rows)} ({metrics.epochs:.2f} epochs)")
    print(f"Final loss:   {metrics.final_loss:.6g}")
    if metrics.final_accuracy is not None:
        print(f"Accuracy:     {metrics.final_accuracy:.4f}")
    print(f"Messages:     {metrics.stats.messages_sent}")
    print(f"Volume:       {metrics.stats.scalar_volume}")
    print(f"Outputs:      {out_dir}")
    return 0


def cmd_compare(experiment: ExperimentConfig) -> int:
    if experiment.run.algorithm != Algorithm.EVENTGRAD:
        raise ConfigError("compare needs algorithm 'eventgrad' (the regular arm is derived from it)")
    out_dir = Path(experiment.output_dir)
    report = compare(experiment.run, record_traces=experiment.output_traces)
    regular_exp = replace(experiment, run=experiment.run.as_regular())
    write_run_outputs(out_dir / "regular", regular_exp, report.regular)
    write_run_outputs(out_dir / "eventgrad", experiment, report.event)
    _save_json(out_dir / "report.json", report.to_dict())

    _banner(f"compare: {experiment.name}")
    print(f"Final loss (regular):   {report.regular.final_loss:.6g}")
    print(f"Final loss (eventgrad): {report.event.final_loss:.6g}")
    print(f"Messages:               {report.message_pct:.2f}% of regular")
    print(f"Volume:                 {report.volume_pct:.2f}% of regular")
    print(f"Report:                 {out_dir / 'report.json'}")
    return 0


def _run_sweep_point(experiment: ExperimentConfig, point: SweepPoint, out_root: Path) -> Dict[str, Any]:
    point_exp = replace(experiment, run=point.config)
    if point.config.algorithm == Algorithm.EVENTGRAD:
        report = compare(point.config, record_traces=experiment.output_traces)
        metrics = report.event
        pct = message_percentage(report.event.stats, report.regular.stats)
    else:
        metrics = Simulation.build(point.config).run(record_traces=experiment.output_traces)
        pct = 100.0
    write_run_outputs(out_root / point.label(), point_exp, metrics)
    row: Dict[str, Any] = dict(point.values)
    row.update({
        "final_loss": metrics.final_loss,
        "messages": metrics.stats.messages_sent,
        "volume": metrics.stats.scalar_volume,
        "message_pct": pct,
    })
    return row


def cmd_sweep(experiment: ExperimentConfig, threads: int) -> int:
    if not experiment.has_sweep or not experiment.sweep_grid:
        raise ConfigError("sweep needs a nonempty sweep.grid")
    out_root = Path(experiment.output_dir)
    points = experiment.sweep_points()
    logger.info("sweep: %d points on %d threads", len(points), threads)

    if threads > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda p: _run_sweep_point(experiment, p, out_root / "points"), points))
    else:
        rows = [_run_sweep_point(experiment, p, out_root / "points") for p in points]

    fields = [k for k, _ in experiment.sweep_grid] + ["final_loss", "messages", "volume", "message_pct"]
    write_csv(out_root / "sweep.csv", rows, fields)

    _banner(f"sweep: {experiment.name} ({len(points)} points)")
    for row in rows:
        grid = ", ".join(f"{k}={row[k]}" for k, _ in experiment.sweep_grid)
        print(f"  {grid}: loss={row['final_loss']:.6g} messages={row['message_pct']:.2f}%")
    print(f"Table: {out_root / 'sweep.csv'}")
    return 0


def _bound_schedule(experiment: ExperimentConfig) -> ThresholdSchedule:
    if experiment.bound.schedule is not None:
        return experiment.bound.schedule
    trigger = experiment.run.trigger
    if trigger is None:
        return ThresholdSchedule(kind=ScheduleKind.ZERO)
    if trigger.schedule.kind == ScheduleKind.NONE:
        raise BoundError("uncapped thresholds have no g(k); set trigger.schedule or bound.schedule")
    return trigger.schedule


def build_bound_report(experiment: ExperimentConfig) -> Dict[str, Any]:
    section = experiment.bound
    sim = Simulation.build(experiment.run)
    estimates = estimate_constants(
        sim.objectives,
        sim.mixing,
        samples=section.samples,
        seed=section.estimate_seed,
        f_star=experiment.run.objective.f_star,
        x0=sim.X0.mean(axis=0),
    )
    inputs = BoundInputs(
        gamma=sim.gamma,
        L=estimates.L if section.L is None else float(section.L),
        sigma=estimates.sigma if section.sigma is None else float(section.sigma),
        varsigma=estimates.varsigma if section.varsigma is None else float(section.varsigma),
        rho=sim.mixing.rho,
        n=experiment.run.n,
        K=experiment.run.iterations,
        f0_minus_fstar=estimates.f0_minus_fstar if section.f0_minus_fstar is None else float(section.f0_minus_fstar),
        schedule=_bound_schedule(experiment),
    )
    report = bound_report(inputs, estimates)
    if section.run_diagnostic:
        try:
            report["diagnostic"] = gradient_norm_diagnostic(experiment.run, inputs)
        except BoundError as e:
            report["diagnostic"] = {"error": str(e)}
    return report


def cmd_bound(experiment: ExperimentConfig) -> int:
    report = build_bound_report(experiment)
    out_dir = Path(experiment.output_dir)
    _save_json(out_dir / "bound.json", report)
    print(dumps_json(report))
    if not report["conditions"]["C2_positive"]:
        print("[WARN] step size too large for spectral gap: theorem bound inapplicable", file=sys.stderr)
    return 0


def cmd_validate(paths: Sequence[str], strict: bool) -> int:
    validator = ExperimentConfigValidator(strict_mode=strict)
    _banner("Experiment Config Validation")
    passed, _, _ = batch_validator.validate_configs(validator, [Path(p) for p in paths], strict=strict)
    print(f"\nSummary: {passed}/{len(paths)} passed")
    return 0 if passed == len(paths) else 2


# ===== Entry point =====

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventgrad",
        description="Decentralized SGD simulator with event-triggered communication",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "Run one experiment"),
        ("compare", "Run the regular and eventgrad arms and report savings"),
        ("sweep", "Run every point of sweep.grid"),
        ("bound", "Evaluate the convergence bounds"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=str, help="Experiment JSON")
        p.add_argument("--out", type=str, default=None, help="Output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, default=None, help="Seed (overrides config)")

    p = sub.add_parser("validate", help="Validate experiment configs")
    p.add_argument("paths", nargs="+", help="Config files")
    p.add_argument("--strict", action="store_true", help="Treat warnings as failures")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    if args.command == "validate":
        return cmd_validate(args.paths, args.strict)

    try:
        experiment = load_experiment(Path(args.config), seed=args.seed, out=args.out)
        if args.command == "run":
            return cmd_run(experiment)
        if args.command == "compare":
            return cmd_compare(experiment)
        if args.command == "sweep":
            return cmd_sweep(experiment, sweep_threads())
        return cmd_bound(experiment)
    except ConfigError as e:
        if e.issues:
            for issue in e.issues:
                print(issue.format(args.config), file=sys.stderr)
        else:
            print(f"[FATAL] {e}", file=sys.stderr)
        return 2
    except (SimulationError, OSError, ValueError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
