"""
engine.py — Regular (D-PSGD) and event-triggered training loops

Iteration k of both algorithms has three phases:

    1. communication  regular: every block of every PE goes to both
                      neighbors; eventgrad: k = 0 is the forced broadcast,
                      afterwards a block is sent only when its drift from
                      the last sent copy reaches its threshold
    2. barrier        staged puts land in the receivers' windows
    3. compute        x_{k+1,i} = sum_j W_ji x_j - gamma * grad F_i(x_i; xi)

For eventgrad the x_j come from PE i's window (the last received copies)
and PE i's own column is its last sent copy unless `self_fresh` is set.
With zero thresholds both loops perform the same floating point operations
in the same order, so their trajectories match bitwise.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .comm import (
    CommStats,
    PutQueue,
    SendMode,
    Window,
    broadcast_to_neighbors,
    make_windows,
    message_percentage,
    volume_percentage,
)
from .errors import DimensionError, InvariantError, RunConfigError
from .mixing import MixingMatrix, MixingSpec, build_mixing, mix_row
from .objectives import (
    BlockLayout,
    ModelState,
    Objective,
    ObjectiveSpec,
    global_accuracy,
    global_gradient,
    global_loss,
    lipschitz_constant,
    make_objectives,
)
from .trigger import (
    ThresholdSchedule,
    TriggerConfig,
    TriggerState,
    apply_cap,
    check_event,
    update_on_trigger,
)

logger = logging.getLogger(__name__)


class Algorithm(str, Enum):
    REGULAR = "regular"
    EVENTGRAD = "eventgrad"


class StepSizeRule(str, Enum):
    CONSTANT = "constant"
    INVERSE_LIPSCHITZ = "inverse_lipschitz"


@dataclass(frozen=True)
class InitSpec:
    """Initial models, shared by all PEs unless not identical.

    scale=None is the objective default: zeros for the linear models, fan-in
    scaled weights for the MLP. Otherwise every coordinate is scale * N(0, 1).
    """

    scale: Optional[float] = None
    identical: bool = True

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"identical": self.identical}
        if self.scale is not None:
            out["scale"] = self.scale
        return out


@dataclass(frozen=True)
class RunConfig:
    n: int
    objective: ObjectiveSpec
    gamma: float
    iterations: int
    seed: int = 0
    algorithm: Algorithm = Algorithm.REGULAR
    mixing: MixingSpec = field(default_factory=MixingSpec)
    trigger: Optional[TriggerConfig] = None
    sparsify: Optional[float] = None
    staleness: int = 0
    self_fresh: bool = False
    step_size_rule: StepSizeRule = StepSizeRule.CONSTANT
    init: InitSpec = field(default_factory=InitSpec)
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n < 1:
            raise RunConfigError(f"n must be >= 1, got {self.n}")
        if not self.gamma > 0.0:
            raise RunConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.iterations < 1:
            raise RunConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.staleness < 0:
            raise RunConfigError(f"staleness must be >= 0, got {self.staleness}")
        if self.workers < 1:
            raise RunConfigError(f"workers must be >= 1, got {self.workers}")
        if self.algorithm == Algorithm.REGULAR:
            if self.trigger is not None or self.sparsify is not None:
                raise RunConfigError("regular algorithm takes no trigger or sparsify settings")
        elif self.trigger is None:
            object.__setattr__(self, "trigger", TriggerConfig())
        if self.sparsify is not None and not 0.0 < self.sparsify <= 100.0:
            raise RunConfigError(f"sparsify top-k percent must be in (0, 100], got {self.sparsify}")

    def as_regular(self) -> "RunConfig":
        return replace(self, algorithm=Algorithm.REGULAR, trigger=None, sparsify=None, staleness=0)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "n": self.n,
            "seed": self.seed,
            "iterations": self.iterations,
            "gamma": self.gamma,
            "step_size_rule": self.step_size_rule.value,
            "algorithm": self.algorithm.value,
            "objective": self.objective.to_dict(),
            "mixing": self.mixing.to_dict(),
            "staleness": self.staleness,
            "self_fresh": self.self_fresh,
            "init": self.init.to_dict(),
            "workers": self.workers,
        }
        if self.trigger is not None:
            out["trigger"] = self.trigger.to_dict()
        if self.sparsify is not None:
            out["sparsify"] = {"topk_percent": self.sparsify}
        return out


# ===== Metrics =====

CSV_FIELDS = ("iter", "loss", "disagreement", "messages_cum", "volume_cum", "events")


@dataclass(frozen=True)
class MetricsRow:
    iter: int
    loss: float
    disagreement: float
    messages_cum: int
    volume_cum: int
    events: int
    max_threshold: float = 0.0

    def as_record(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in CSV_FIELDS}


TRACE_FIELDS = ("iter", "pe", "block", "param_norm", "threshold", "sent")


@dataclass(frozen=True)
class TraceRow:
    """Norm and effective threshold of one (PE, block) after an iteration.

    `sent` is 1 when the block was communicated during that iteration; the
    regular algorithm sends every block with threshold 0.
    """

    iter: int
    pe: int
    block: int
    param_norm: float
    threshold: float
    sent: int

    def as_record(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in TRACE_FIELDS}


@dataclass
class RunMetrics:
    """Per-iteration trace plus the averaged final model."""

    rows: List[MetricsRow]
    final_model: ModelState
    final_loss: float
    initial_loss: float
    initial_disagreement: float
    stats: CommStats
    rho: float
    gamma: float
    lipschitz: float
    iterations_per_epoch: float
    wall_time_s: float = 0.0
    untriggered_checks: int = 0
    grad_norms_sq: List[float] = field(default_factory=list)
    traces: List[TraceRow] = field(default_factory=list)
    final_accuracy: Optional[float] = None

    @property
    def epochs(self) -> float:
        return len(self.rows) / self.iterations_per_epoch

    def losses(self) -> List[float]:
        return [r.loss for r in self.rows]

    def disagreements(self) -> List[float]:
        return [r.disagreement for r in self.rows]

    def messages(self) -> List[int]:
        return [r.messages_cum for r in self.rows]

    def records(self) -> List[Dict[str, Any]]:
        return [r.as_record() for r in self.rows]

    def trace_records(self) -> List[Dict[str, Any]]:
        return [t.as_record() for t in self.traces]


def disagreement(X: np.ndarray) -> float:
    """D = sum_i ||x_i - x_bar||^2 / n."""
    centered = X - X.mean(axis=0)
    return float(np.sum(centered * centered) / X.shape[0])


def trace_rows(
    k: int,
    X: np.ndarray,
    layout: BlockLayout,
    triggers: Optional[Sequence[Sequence[TriggerState]]] = None,
) -> List[TraceRow]:
    rows: List[TraceRow] = []
    for i in range(X.shape[0]):
        for b, block in enumerate(layout.blocks):
            norm = float(np.linalg.norm(X[i, block.slice]))
            if triggers is None:
                rows.append(TraceRow(k + 1, i, b, norm, 0.0, 1))
            else:
                st = triggers[i][b]
                rows.append(TraceRow(k + 1, i, b, norm, st.threshold, int(st.last_sent_iter == k)))
    return rows


# ===== Shared helpers =====

def _gradients(
    objectives: Sequence[Objective],
    points: Sequence[np.ndarray],
    rngs: Sequence[np.random.Generator],
    pool: Optional[Executor] = None,
) -> List[np.ndarray]:
    """Stochastic gradient of every PE; each PE draws only from its own rng."""
    if pool is None:
        return [obj.stochastic_gradient(x, rng) for obj, x, rng in zip(objectives, points, rngs)]
    return list(pool.map(lambda args: args[0].stochastic_gradient(args[1], args[2]), zip(objectives, points, rngs)))


def _check_shapes(X: np.ndarray, mixing: MixingMatrix, objectives: Sequence[Objective]) -> None:
    if X.ndim != 2 or X.shape[0] != mixing.n or len(objectives) != mixing.n:
        raise DimensionError(
            f"states {X.shape}, mixing n={mixing.n}, {len(objectives)} objectives are inconsistent"
        )
    if X.shape[1] != objectives[0].layout.total_dim:
        raise DimensionError(f"model dimension {X.shape[1]} != {objectives[0].layout.total_dim}")


def record_regular_traffic(stats: CommStats, mixing: MixingMatrix, layout: BlockLayout) -> None:
    """Every block of every PE to every neighbor (dense)."""
    sizes = layout.sizes()
    for i in range(mixing.n):
        for block_id, size in enumerate(sizes):
            for _ in mixing.neighbors(i):
                stats.record_counts(i, block_id, size)


def step_regular(
    X: np.ndarray,
    mixing: MixingMatrix,
    objectives: Sequence[Objective],
    gamma: float,
    rngs: Sequence[np.random.Generator],
    stats: Optional[CommStats] = None,
    pool: Optional[Executor] = None,
) -> np.ndarray:
    """X_{k+1} = X_k W - gamma * dF(X_k; xi_k), one row per PE.

    Traffic is only accounted (in `stats`); values are exact.
    """
    _check_shapes(X, mixing, objectives)
    if stats is not None:
        record_regular_traffic(stats, mixing, objectives[0].layout)
    grads = _gradients(objectives, list(X), rngs, pool)
    rows = list(X)
    out = np.empty_like(X)
    for i in range(mixing.n):
        out[i] = mix_row(mixing.weights, i, rows) - gamma * grads[i]
    return out


# ===== Event-triggered state =====

@dataclass
class EventGradState:
    """Everything PE-local that the event-triggered loop carries."""

    X: np.ndarray
    X_hat: np.ndarray
    triggers: List[List[TriggerState]]
    windows: List[Window]
    queue: PutQueue
    stats: CommStats
    layout: BlockLayout
    untriggered_checks: int = 0

    def max_threshold(self) -> float:
        return max(st.threshold for row in self.triggers for st in row)


def init_eventgrad(
    X0: np.ndarray,
    mixing: MixingMatrix,
    layout: BlockLayout,
    trigger: TriggerConfig,
    mode: SendMode,
    staleness: int = 0,
) -> EventGradState:
    """Forced k = 0 event: every block of every PE is written to every neighbor.

    These first writes land immediately (no staleness) so no window slot is
    ever unset. Slots start from the senders' initial models, which every PE
    can regenerate from the shared init seed; a Top-K forced broadcast then
    overwrites only its kept entries instead of leaving zeros behind.
    """
    X = np.array(X0, dtype=float, copy=True)
    slices = [b.slice for b in layout.blocks]
    windows = make_windows(mixing.neighbor_lists, slices, layout.total_dim, initial=X)
    stats = CommStats()
    triggers: List[List[TriggerState]] = []
    seed_queue = PutQueue(staleness=0)
    for i in range(mixing.n):
        row: List[TriggerState] = []
        for block_id, sl in enumerate(slices):
            value = X[i, sl]
            row.append(TriggerState.initial(value, trigger))
            broadcast_to_neighbors(i, block_id, value, mode, mixing.neighbors(i), seed_queue, stats, 0)
        triggers.append(row)
    seed_queue.flush(0, windows)
    return EventGradState(
        X=X,
        X_hat=X.copy(),
        triggers=triggers,
        windows=windows,
        queue=PutQueue(staleness=staleness),
        stats=stats,
        layout=layout,
    )


def _event_phase(
    state: EventGradState,
    mixing: MixingMatrix,
    schedule: ThresholdSchedule,
    mode: SendMode,
    k: int,
) -> int:
    events = 0
    slices = [b.slice for b in state.layout.blocks]
    for i in range(mixing.n):
        for block_id, sl in enumerate(slices):
            st = apply_cap(state.triggers[i][block_id], k, schedule)
            current = state.X[i, sl]
            if check_event(st, current):
                broadcast_to_neighbors(i, block_id, current, mode, mixing.neighbors(i), state.queue, state.stats, k)
                st = update_on_trigger(st, current, k, schedule)
                state.X_hat[i, sl] = current
                events += 1
            else:
                drift = st.drift(current)
                if not drift < st.threshold:
                    raise InvariantError(
                        f"error bound violated at k={k}, PE {i}, block {block_id}: "
                        f"||x_hat - x|| = {drift!r} >= delta = {st.threshold!r}"
                    )
                state.untriggered_checks += 1
            state.triggers[i][block_id] = st
    return events


def step_eventgrad(
    state: EventGradState,
    mixing: MixingMatrix,
    objectives: Sequence[Objective],
    gamma: float,
    rngs: Sequence[np.random.Generator],
    schedule: ThresholdSchedule,
    mode: SendMode,
    k: int,
    self_fresh: bool = False,
    pool: Optional[Executor] = None,
) -> int:
    """One EventGraD iteration; updates `state` in place, returns events fired.

    At k = 0 the forced broadcast from `init_eventgrad` is this iteration's
    communication, so no event check runs.
    """
    _check_shapes(state.X, mixing, objectives)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    events = 0 if k == 0 else _event_phase(state, mixing, schedule, mode, k)
    state.queue.flush(k, state.windows)

    own = state.X if self_fresh else state.X_hat
    grads = _gradients(objectives, [own[i] for i in range(mixing.n)], rngs, pool)
    out = np.empty_like(state.X)
    for i in range(mixing.n):
        window = state.windows[i]
        rows: Dict[int, np.ndarray] = {j: window.read(j) for j in window.sources}
        rows[i] = own[i]
        out[i] = mix_row(mixing.weights, i, rows) - gamma * grads[i]
    state.X = out
    return events


# ===== Runs =====

@dataclass
class Simulation:
    """Everything derived deterministically from a RunConfig."""

    config: RunConfig
    objectives: List[Objective]
    mixing: MixingMatrix
    X0: np.ndarray
    rngs: List[np.random.Generator]
    lipschitz: float
    gamma: float

    @classmethod
    def build(cls, config: RunConfig) -> "Simulation":
        seeds = np.random.SeedSequence(config.seed).spawn(config.n + 3)
        data_rng = np.random.default_rng(seeds[0])
        init_rng = np.random.default_rng(seeds[1])
        probe_rng = np.random.default_rng(seeds[2])
        rngs = [np.random.default_rng(s) for s in seeds[3:]]

        objectives = make_objectives(config.objective, config.n, data_rng)
        if config.n == 1:
            mixing = MixingMatrix.from_weights([[1.0]])
        else:
            mixing = build_mixing(config.mixing, config.n)
        lipschitz = lipschitz_constant(objectives, probe_rng)

        gamma = config.gamma
        if config.step_size_rule == StepSizeRule.INVERSE_LIPSCHITZ:
            gamma = config.gamma / lipschitz

        dim = objectives[0].layout.total_dim
        if config.init.identical:
            x0 = objectives[0].initial_model(init_rng, config.init.scale)
            X0 = np.tile(x0, (config.n, 1))
        else:
            X0 = np.stack([objectives[0].initial_model(init_rng, config.init.scale) for _ in range(config.n)])
        assert X0.shape == (config.n, dim)
        return cls(config, objectives, mixing, X0, rngs, lipschitz, gamma)

    @property
    def layout(self) -> BlockLayout:
        return self.objectives[0].layout

    def iterations_per_epoch(self) -> float:
        obj = self.objectives[0]
        return obj.shard_size / obj.batch_size

    def _evaluate(self, X: np.ndarray) -> Tuple[float, float]:
        return global_loss(self.objectives, X.mean(axis=0)), disagreement(X)

    def run(self, track_gradient: bool = False, record_traces: bool = False) -> RunMetrics:
        cfg = self.config
        logger.info(
            "run start: algorithm=%s n=%d K=%d gamma=%.6g rho=%.6g",
            cfg.algorithm.value, cfg.n, cfg.iterations, self.gamma, self.mixing.rho,
        )
        started = time.perf_counter()
        initial_loss, initial_dis = self._evaluate(self.X0)
        rows: List[MetricsRow] = []
        grad_norms: List[float] = []
        traces: List[TraceRow] = []

        pool: Optional[ThreadPoolExecutor] = None
        if cfg.workers > 1:
            pool = ThreadPoolExecutor(max_workers=cfg.workers)
        try:
            if cfg.algorithm == Algorithm.REGULAR:
                stats = CommStats()
                X = self.X0.copy()
                for k in range(cfg.iterations):
                    if track_gradient:
                        grad_norms.append(_grad_norm_sq(self.objectives, X))
                    X = step_regular(X, self.mixing, self.objectives, self.gamma, self.rngs, stats, pool)
                    loss, dis = self._evaluate(X)
                    events = self.mixing.n * self.layout.num_blocks
                    rows.append(MetricsRow(k + 1, loss, dis, stats.messages_sent, stats.scalar_volume, events))
                    if record_traces:
                        traces.extend(trace_rows(k, X, self.layout))
                untriggered = 0
            else:
                assert cfg.trigger is not None
                mode = SendMode(topk_percent=cfg.sparsify)
                state = init_eventgrad(self.X0, self.mixing, self.layout, cfg.trigger, mode, cfg.staleness)
                schedule = cfg.trigger.schedule
                for k in range(cfg.iterations):
                    if track_gradient:
                        grad_norms.append(_grad_norm_sq(self.objectives, state.X))
                    if k == 0:
                        events = self.mixing.n * self.layout.num_blocks
                    else:
                        events = 0
                    events += step_eventgrad(
                        state, self.mixing, self.objectives, self.gamma, self.rngs,
                        schedule, mode, k, cfg.self_fresh, pool,
                    )
                    loss, dis = self._evaluate(state.X)
                    rows.append(MetricsRow(
                        k + 1, loss, dis, state.stats.messages_sent, state.stats.scalar_volume,
                        events, state.max_threshold(),
                    ))
                    if record_traces:
                        traces.extend(trace_rows(k, state.X, self.layout, state.triggers))
                X, stats, untriggered = state.X, state.stats, state.untriggered_checks
        finally:
            if pool is not None:
                pool.shutdown()

        averaged = ModelState(self.layout, X.mean(axis=0))
        metrics = RunMetrics(
            rows=rows,
            final_model=averaged,
            final_loss=global_loss(self.objectives, averaged),
            initial_loss=initial_loss,
            initial_disagreement=initial_dis,
            stats=stats,
            rho=self.mixing.rho,
            gamma=self.gamma,
            lipschitz=self.lipschitz,
            iterations_per_epoch=self.iterations_per_epoch(),
            wall_time_s=time.perf_counter() - started,
            untriggered_checks=untriggered,
            grad_norms_sq=grad_norms,
            traces=traces,
            final_accuracy=global_accuracy(self.objectives, averaged),
        )
        logger.info(
            "run done: final_loss=%.6g messages=%d volume=%d (%.2fs)",
            metrics.final_loss, stats.messages_sent, stats.scalar_volume, metrics.wall_time_s,
        )
        return metrics


def _grad_norm_sq(objectives: Sequence[Objective], X: np.ndarray) -> float:
    g = global_gradient(objectives, X.mean(axis=0))
    return float(g @ g)


def run(config: RunConfig, track_gradient: bool = False, record_traces: bool = False) -> RunMetrics:
    """Execute K iterations of the configured algorithm."""
    return Simulation.build(config).run(track_gradient=track_gradient, record_traces=record_traces)


# ===== Comparison =====

@dataclass
class ComparisonReport:
    regular: RunMetrics
    event: RunMetrics

    @property
    def message_pct(self) -> float:
        return message_percentage(self.event.stats, self.regular.stats)

    @property
    def volume_pct(self) -> float:
        return volume_percentage(self.event.stats, self.regular.stats)

    @property
    def loss_gap_max(self) -> float:
        return max(abs(a - b) for a, b in zip(self.regular.losses(), self.event.losses()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "final_loss_regular": self.regular.final_loss,
            "final_loss_event": self.event.final_loss,
            "message_pct": self.message_pct,
            "volume_pct": self.volume_pct,
            "loss_gap_max": self.loss_gap_max,
            "accuracy_regular": self.regular.final_accuracy,
            "accuracy_event": self.event.final_accuracy,
            "messages_regular": self.regular.stats.messages_sent,
            "messages_event": self.event.stats.messages_sent,
            "volume_regular": self.regular.stats.scalar_volume,
            "volume_event": self.event.stats.scalar_volume,
        }


def compare(config: RunConfig, record_traces: bool = False) -> ComparisonReport:
    """Run the regular arm and the eventgrad arm on the same seed and data."""
    if config.algorithm != Algorithm.EVENTGRAD:
        raise RunConfigError("compare needs an eventgrad config (the regular arm is derived from it)")
    regular = run(config.as_regular(), record_traces=record_traces)
    event = run(config, record_traces=record_traces)
    return ComparisonReport(regular=regular, event=event)
