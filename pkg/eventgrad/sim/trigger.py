"""
trigger.py — Event-triggered communication condition and thresholds

A block is sent when ||x_hat - x|| >= delta. After each event the
threshold is recomputed from the slope of the block between events:

    slope = ||x_hat_old - x|| / (k - k_hat)
    delta = mean(last H slopes) * h

and optionally capped by a schedule sqrt(g(k)) so that delta^2 <= g(k)
holds at every iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Tuple

import numpy as np

from .errors import DimensionError, ScheduleError, TriggerError


class ScheduleKind(str, Enum):
    NONE = "none"
    ZERO = "zero"
    CONSTANT_CAP = "constant_cap"
    GEOMETRIC_CAP = "geometric_cap"


class ThresholdPolicy(str, Enum):
    ADAPTIVE = "adaptive"
    STATIC = "static"


@dataclass(frozen=True)
class ThresholdSchedule:
    """Bound g(k) on squared thresholds.

    none:          no cap, g undefined
    zero:          g(k) = 0 (every block fires every iteration)
    constant_cap:  g(k) = c^2
    geometric_cap: g(k) = alpha * beta^k
    """

    kind: ScheduleKind = ScheduleKind.NONE
    alpha: float = 1.0
    beta: float = 0.5
    c: float = 0.0

    def __post_init__(self) -> None:
        if self.kind == ScheduleKind.GEOMETRIC_CAP:
            if not self.alpha > 0.0:
                raise ScheduleError(f"geometric schedule needs alpha > 0, got {self.alpha}")
            if not 0.0 < self.beta <= 1.0:
                raise ScheduleError(f"geometric schedule needs 0 < beta <= 1, got {self.beta}")
        if self.kind == ScheduleKind.CONSTANT_CAP and not self.c >= 0.0:
            raise ScheduleError(f"constant cap needs c >= 0, got {self.c}")

    def g(self, k: int) -> float:
        if self.kind == ScheduleKind.NONE:
            raise ScheduleError("uncapped schedule has no g(k) bound")
        if self.kind == ScheduleKind.ZERO:
            return 0.0
        if self.kind == ScheduleKind.CONSTANT_CAP:
            return self.c * self.c
        return self.alpha * self.beta ** k

    def cap(self, k: int) -> float:
        """Largest threshold allowed at iteration k."""
        if self.kind == ScheduleKind.NONE:
            return math.inf
        if self.kind == ScheduleKind.ZERO:
            return 0.0
        if self.kind == ScheduleKind.CONSTANT_CAP:
            return self.c
        return math.sqrt(self.alpha * self.beta ** k)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "alpha": self.alpha, "beta": self.beta, "c": self.c}


@dataclass(frozen=True)
class TriggerConfig:
    """`trigger` config section."""

    policy: ThresholdPolicy = ThresholdPolicy.ADAPTIVE
    horizon: float = 1.0
    history_len: int = 1
    delta0: float = 0.0
    schedule: ThresholdSchedule = field(default_factory=ThresholdSchedule)

    def __post_init__(self) -> None:
        if not self.horizon > 0.0:
            raise TriggerError(f"horizon must be > 0, got {self.horizon}")
        if self.history_len < 1:
            raise TriggerError(f"history_len must be >= 1, got {self.history_len}")
        if not self.delta0 >= 0.0:
            raise TriggerError(f"delta0 must be >= 0, got {self.delta0}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "policy": self.policy.value,
            "horizon": self.horizon,
            "history_len": self.history_len,
            "delta0": self.delta0,
            "schedule": self.schedule.to_dict(),
        }


@dataclass(frozen=True)
class TriggerState:
    """Per (PE, block) event state.

    `last_sent_value` is x_hat, `last_sent_iter` is k_hat. The stored value
    is never mutated; every transition returns a new state.
    """

    last_sent_value: np.ndarray
    last_sent_iter: int
    threshold: float
    slope_history: Tuple[float, ...] = ()
    horizon: float = 1.0
    history_len: int = 1
    adaptive: bool = True

    @classmethod
    def initial(cls, value: np.ndarray, config: TriggerConfig) -> "TriggerState":
        """State right after the forced event at k = 0."""
        sent = np.array(value, dtype=float, copy=True)
        sent.setflags(write=False)
        return cls(
            last_sent_value=sent,
            last_sent_iter=0,
            threshold=min(config.delta0, config.schedule.cap(0)),
            horizon=config.horizon,
            history_len=config.history_len,
            adaptive=config.policy == ThresholdPolicy.ADAPTIVE,
        )

    def drift(self, current: np.ndarray) -> float:
        """||x_hat - x|| (Euclidean / Frobenius over the flattened block)."""
        current = np.asarray(current, dtype=float)
        if current.shape != self.last_sent_value.shape:
            raise DimensionError(
                f"block shape {current.shape} does not match last sent {self.last_sent_value.shape}"
            )
        return float(np.linalg.norm(self.last_sent_value - current))


def check_event(state: TriggerState, current: np.ndarray) -> bool:
    """True iff ||x_hat - x|| >= delta. Pure."""
    return state.drift(current) >= state.threshold


def apply_cap(state: TriggerState, k: int, schedule: ThresholdSchedule) -> TriggerState:
    """Enforce delta <= sqrt(g(k)) at iteration k."""
    capped = min(state.threshold, schedule.cap(k))
    if capped == state.threshold:
        return state
    return replace(state, threshold=capped)


def update_on_trigger(
    state: TriggerState,
    current: np.ndarray,
    k: int,
    schedule: ThresholdSchedule,
) -> TriggerState:
    """Record an event at iteration k and recompute the threshold."""
    if k <= state.last_sent_iter:
        raise TriggerError(
            f"event iteration {k} must be after last event at {state.last_sent_iter}"
        )
    slope = state.drift(current) / (k - state.last_sent_iter)
    history = (state.slope_history + (slope,))[-state.history_len:]

    if state.adaptive:
        threshold = (math.fsum(history) / len(history)) * state.horizon
    else:
        threshold = state.threshold
    threshold = min(threshold, schedule.cap(k))

    sent = np.array(current, dtype=float, copy=True)
    sent.setflags(write=False)
    return replace(
        state,
        last_sent_value=sent,
        last_sent_iter=k,
        threshold=threshold,
        slope_history=history,
    )


# ===== Schedule sums =====

def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)


def geometric_closed_form_G(alpha: float, beta: float, K: int) -> float:
    """alpha * (1 - beta^(K+1)) / (1 - beta)."""
    if beta == 1.0:
        return alpha * (K + 1)
    log_beta = math.log(beta)
    return alpha * (-math.expm1((K + 1) * log_beta)) / (-math.expm1(log_beta))


def geometric_closed_form_Ghalf(alpha: float, beta: float, K: int) -> float:
    """sqrt(alpha) * (1 - sqrt(beta)^(K+1)) / (1 - sqrt(beta))."""
    if beta == 1.0:
        return math.sqrt(alpha) * (K + 1)
    half_log = 0.5 * math.log(beta)
    return math.sqrt(alpha) * (-math.expm1((K + 1) * half_log)) / (-math.expm1(half_log))


def schedule_sum_G(schedule: ThresholdSchedule, K: int) -> float:
    """G(K) = sum_{k=0}^{K} g(k), by direct summation."""
    if K < 0:
        raise ScheduleError(f"K must be >= 0, got {K}")
    total = math.fsum(schedule.g(k) for k in range(K + 1))
    if schedule.kind == ScheduleKind.GEOMETRIC_CAP:
        closed = geometric_closed_form_G(schedule.alpha, schedule.beta, K)
        if not _close(total, closed):
            raise ScheduleError(f"G({K}) direct sum {total!r} disagrees with closed form {closed!r}")
    return total


def schedule_sum_Ghalf(schedule: ThresholdSchedule, K: int) -> float:
    """G_1/2(K) = sum_{k=0}^{K} sqrt(g(k)), by direct summation."""
    if K < 0:
        raise ScheduleError(f"K must be >= 0, got {K}")
    total = math.fsum(math.sqrt(schedule.g(k)) for k in range(K + 1))
    if schedule.kind == ScheduleKind.GEOMETRIC_CAP:
        closed = geometric_closed_form_Ghalf(schedule.alpha, schedule.beta, K)
        if not _close(total, closed):
            raise ScheduleError(f"G_1/2({K}) direct sum {total!r} disagrees with closed form {closed!r}")
    return total
