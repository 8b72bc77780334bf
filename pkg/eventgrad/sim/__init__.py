"""
Simulation Package

Numeric core of the decentralized SGD simulator:
    - mixing: ring topology, mixing matrices, spectral quantity rho
    - objectives: gradient oracles and data shards
    - trigger: event condition, adaptive thresholds, threshold schedules
    - comm: one-sided window emulation, Top-K payloads, message accounting
    - engine: regular and event-triggered training loops
    - analysis: convergence-bound evaluators
"""

from .errors import SimulationError
from .mixing import MixingMatrix, MixingSpec, build_ring_mixing, spectral_gap
from .objectives import ObjectiveKind, ObjectiveSpec, make_objectives
from .trigger import ScheduleKind, ThresholdPolicy, ThresholdSchedule, TriggerConfig
from .engine import Algorithm, ComparisonReport, InitSpec, RunConfig, RunMetrics, StepSizeRule, compare, run
from .analysis import BoundInputs, bound_report, corollary1_rhs, estimate_constants, theorem1_rhs

__all__ = [
    "SimulationError",
    "MixingMatrix",
    "MixingSpec",
    "build_ring_mixing",
    "spectral_gap",
    "ObjectiveKind",
    "ObjectiveSpec",
    "make_objectives",
    "ScheduleKind",
    "ThresholdPolicy",
    "ThresholdSchedule",
    "TriggerConfig",
    "Algorithm",
    "ComparisonReport",
    "InitSpec",
    "RunConfig",
    "RunMetrics",
    "StepSizeRule",
    "compare",
    "run",
    "BoundInputs",
    "bound_report",
    "corollary1_rhs",
    "estimate_constants",
    "theorem1_rhs",
]
