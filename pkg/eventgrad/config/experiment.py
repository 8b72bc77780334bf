"""
experiment.py — Experiment documents <-> typed run configuration

An experiment JSON document mirrors RunConfig and adds output settings, a
sweep grid and a bound section. `ExperimentConfig.from_dict` assumes the
document already passed schema validation; `to_dict` produces the echo
written to meta.json, which parses back to an equal config.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from ..sim.engine import Algorithm, InitSpec, RunConfig, StepSizeRule
from ..sim.mixing import MixingSpec
from ..sim.objectives import ObjectiveKind, ObjectiveSpec
from ..sim.trigger import ScheduleKind, ThresholdPolicy, ThresholdSchedule, TriggerConfig

# Grid keys in the order sweep.csv reports them when a document lists several.
SWEEP_KEYS = ("n", "gamma", "seed", "horizon", "history_len", "topk_percent")
EVENT_ONLY_SWEEP_KEYS = {"horizon", "history_len", "topk_percent"}


def _float_or_inf(value: Any) -> float:
    if value == "Infinity":
        return math.inf
    return float(value)


def _float_to_json(value: float) -> Any:
    return "Infinity" if math.isinf(value) else value


def schedule_from_dict(data: Optional[Dict[str, Any]]) -> ThresholdSchedule:
    if not data:
        return ThresholdSchedule()
    defaults = ThresholdSchedule()
    return ThresholdSchedule(
        kind=ScheduleKind(data.get("kind", "none")),
        alpha=float(data.get("alpha", defaults.alpha)),
        beta=float(data.get("beta", defaults.beta)),
        c=float(data.get("c", defaults.c)),
    )


def trigger_from_dict(data: Dict[str, Any]) -> TriggerConfig:
    defaults = TriggerConfig()
    return TriggerConfig(
        policy=ThresholdPolicy(data.get("policy", defaults.policy.value)),
        horizon=float(data.get("horizon", defaults.horizon)),
        history_len=int(data.get("history_len", defaults.history_len)),
        delta0=_float_or_inf(data.get("delta0", defaults.delta0)),
        schedule=schedule_from_dict(data.get("schedule")),
    )


def trigger_to_dict(trigger: TriggerConfig) -> Dict[str, Any]:
    out = trigger.to_dict()
    out["delta0"] = _float_to_json(trigger.delta0)
    return out


def objective_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> ObjectiveSpec:
    """Relative csv paths resolve against `base_dir` (the config file directory)."""
    defaults = ObjectiveSpec()
    f_star = data.get("f_star")
    csv_path = data.get("csv_path")
    if csv_path is not None and base_dir is not None and not Path(csv_path).is_absolute():
        csv_path = str(base_dir / csv_path)
    return ObjectiveSpec(
        kind=ObjectiveKind(data["kind"]),
        dim=int(data.get("dim", defaults.dim)),
        samples_per_pe=int(data.get("samples_per_pe", defaults.samples_per_pe)),
        batch_size=int(data.get("batch_size", defaults.batch_size)),
        noise=float(data.get("noise", defaults.noise)),
        classes=int(data.get("classes", defaults.classes)),
        hidden=int(data.get("hidden", defaults.hidden)),
        separation=float(data.get("separation", defaults.separation)),
        heterogeneity=float(data.get("heterogeneity", defaults.heterogeneity)),
        identical_shards=bool(data.get("identical_shards", defaults.identical_shards)),
        csv_path=csv_path,
        f_star=None if f_star is None else float(f_star),
    )


def run_config_from_dict(data: Dict[str, Any], base_dir: Optional[Path] = None) -> RunConfig:
    """Build the RunConfig part of an experiment document."""
    algorithm = Algorithm(data["algorithm"])
    trigger = None
    sparsify = None
    if algorithm == Algorithm.EVENTGRAD:
        trigger = trigger_from_dict(data.get("trigger", {}))
        if "sparsify" in data:
            sparsify = float(data["sparsify"]["topk_percent"])
    mixing_data = data.get("mixing", {})
    init_data = data.get("init", {})
    return RunConfig(
        n=int(data["n"]),
        objective=objective_from_dict(data["objective"], base_dir),
        gamma=float(data["gamma"]),
        iterations=int(data["iterations"]),
        seed=int(data["seed"]),
        algorithm=algorithm,
        mixing=MixingSpec(
            topology=mixing_data.get("topology", "ring"),
            custom_matrix=mixing_data.get("custom_matrix"),
        ),
        trigger=trigger,
        sparsify=sparsify,
        staleness=int(data.get("staleness", 0)),
        self_fresh=bool(data.get("self_fresh", False)),
        step_size_rule=StepSizeRule(data.get("step_size_rule", StepSizeRule.CONSTANT.value)),
        init=InitSpec(
            scale=None if init_data.get("scale") is None else float(init_data["scale"]),
            identical=bool(init_data.get("identical", True)),
        ),
        workers=int(data.get("workers", 1)),
    )


def run_config_to_dict(config: RunConfig) -> Dict[str, Any]:
    out = config.to_dict()
    if config.trigger is not None:
        out["trigger"] = trigger_to_dict(config.trigger)
    return out


@dataclass(frozen=True)
class BoundSection:
    """`bound` section: constant overrides and estimation settings."""

    samples: int = 8
    estimate_seed: int = 0
    run_diagnostic: bool = False
    schedule: Optional[ThresholdSchedule] = None
    L: Optional[float] = None
    sigma: Optional[float] = None
    varsigma: Optional[float] = None
    f0_minus_fstar: Optional[float] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoundSection":
        schedule = data.get("schedule")
        return cls(
            samples=int(data.get("samples", 8)),
            estimate_seed=int(data.get("estimate_seed", 0)),
            run_diagnostic=bool(data.get("run_diagnostic", False)),
            schedule=None if schedule is None else schedule_from_dict(schedule),
            L=data.get("L"),
            sigma=data.get("sigma"),
            varsigma=data.get("varsigma"),
            f0_minus_fstar=data.get("f0_minus_fstar"),
        )

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "samples": self.samples,
            "estimate_seed": self.estimate_seed,
            "run_diagnostic": self.run_diagnostic,
        }
        if self.schedule is not None:
            out["schedule"] = self.schedule.to_dict()
        for name in ("L", "sigma", "varsigma", "f0_minus_fstar"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass(frozen=True)
class SweepPoint:
    index: int
    values: Tuple[Tuple[str, Any], ...]
    config: RunConfig

    def label(self) -> str:
        parts = [f"{k}={v}" for k, v in self.values]
        return f"{self.index:03d}_" + "_".join(parts) if parts else f"{self.index:03d}"


@dataclass(frozen=True)
class ExperimentConfig:
    run: RunConfig
    name: str = "experiment"
    output_dir: str = "out"
    output_format: str = "csv"
    output_traces: bool = False
    sweep_grid: Tuple[Tuple[str, Tuple[Any, ...]], ...] = ()
    has_sweep: bool = False
    bound: BoundSection = field(default_factory=BoundSection)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Path] = None) -> "ExperimentConfig":
        output = data.get("output", {})
        sweep = data.get("sweep")
        grid: List[Tuple[str, Tuple[Any, ...]]] = []
        if sweep is not None:
            raw = sweep.get("grid", {})
            grid = [(key, tuple(raw[key])) for key in SWEEP_KEYS if key in raw]
        return cls(
            run=run_config_from_dict(data, base_dir),
            name=data.get("name", "experiment"),
            output_dir=output.get("dir", "out"),
            output_format=output.get("format", "csv"),
            output_traces=bool(output.get("traces", False)),
            sweep_grid=tuple(grid),
            has_sweep=sweep is not None,
            bound=BoundSection.from_dict(data.get("bound", {})),
        )

    def to_dict(self) -> Dict[str, Any]:
        out = run_config_to_dict(self.run)
        out["name"] = self.name
        out["output"] = {"dir": self.output_dir, "format": self.output_format}
        if self.output_traces:
            out["output"]["traces"] = True
        if self.has_sweep:
            out["sweep"] = {"grid": {key: list(values) for key, values in self.sweep_grid}}
        out["bound"] = self.bound.to_dict()
        return out

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> "ExperimentConfig":
        """Apply CLI --seed / --out."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, run=replace(cfg.run, seed=seed))
        if output_dir is not None:
            cfg = replace(cfg, output_dir=output_dir)
        return cfg

    def sweep_points(self) -> List[SweepPoint]:
        """Cartesian product of the grid, last key varying fastest."""
        keys = [k for k, _ in self.sweep_grid]
        points: List[SweepPoint] = []
        for index, combo in enumerate(itertools.product(*(v for _, v in self.sweep_grid))):
            values = tuple(zip(keys, combo))
            points.append(SweepPoint(index=index, values=values, config=apply_grid_values(self.run, dict(values))))
        return points


def apply_grid_values(config: RunConfig, values: Dict[str, Any]) -> RunConfig:
    top: Dict[str, Any] = {}
    for key in ("n", "gamma", "seed"):
        if key in values:
            top[key] = type(getattr(config, key))(values[key])
    if "horizon" in values or "history_len" in values:
        assert config.trigger is not None
        trigger = config.trigger
        if "horizon" in values:
            trigger = replace(trigger, horizon=float(values["horizon"]))
        if "history_len" in values:
            trigger = replace(trigger, history_len=int(values["history_len"]))
        top["trigger"] = trigger
    if "topk_percent" in values:
        top["sparsify"] = float(values["topk_percent"])
    return replace(config, **top)
