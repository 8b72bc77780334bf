"""
analysis.py — Convergence-bound evaluators and constant estimation

Numeric diagnostics for the averaged-model rate of the event-triggered
algorithm:

    theorem1_rhs     general bound for any step size with C2 > 0
    corollary1_rhs   bound under gamma = 1 / (2 rho L^2 sqrt(K) + sigma sqrt(K/n))
                     plus the three "K large enough" conditions

Both long expressions are written twice (a term-by-term path and a
straight-line reference path) and cross-checked to 1e-12 on every call.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import BoundError, DimensionError
from .mixing import MixingMatrix
from .objectives import (
    LeastSquaresObjective,
    Objective,
    global_loss,
    least_squares_optimum,
    lipschitz_constant,
)
from .trigger import ScheduleKind, ThresholdSchedule, schedule_sum_G, schedule_sum_Ghalf

if TYPE_CHECKING:
    from .engine import RunConfig

logger = logging.getLogger(__name__)

CROSS_CHECK_TOL = 1e-12


@dataclass(frozen=True)
class BoundInputs:
    gamma: float
    L: float
    sigma: float
    varsigma: float
    rho: float
    n: int
    K: int
    f0_minus_fstar: float
    schedule: ThresholdSchedule = field(default_factory=lambda: ThresholdSchedule(kind=ScheduleKind.ZERO))

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho < 1.0:
            raise BoundError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.gamma > 0.0:
            raise BoundError(f"gamma must be > 0, got {self.gamma}")
        if self.n < 1 or self.K < 1:
            raise BoundError(f"need n >= 1 and K >= 1, got n={self.n}, K={self.K}")
        for name in ("L", "sigma", "varsigma", "f0_minus_fstar"):
            if not getattr(self, name) >= 0.0:
                raise BoundError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.schedule.kind == ScheduleKind.NONE:
            raise BoundError("bounds need a threshold schedule g(k); 'none' has no g")

    def G(self) -> float:
        return schedule_sum_G(self.schedule, self.K - 1)

    def Ghalf(self) -> float:
        return schedule_sum_Ghalf(self.schedule, self.K - 1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma,
            "L": self.L,
            "sigma": self.sigma,
            "varsigma": self.varsigma,
            "rho": self.rho,
            "n": self.n,
            "K": self.K,
            "f0_minus_fstar": self.f0_minus_fstar,
            "schedule": self.schedule.to_dict(),
        }


# ===== Constants =====

def C2(inp: BoundInputs) -> float:
    gap = 1.0 - math.sqrt(inp.rho)
    return 1.0 - 36.0 * inp.gamma ** 2 * inp.n * inp.L ** 2 / gap ** 2


def C1(inp: BoundInputs) -> float:
    c2 = C2(inp)
    gap = 1.0 - math.sqrt(inp.rho)
    return (1.0 - inp.gamma) / 2.0 - 72.0 * inp.gamma ** 3 * inp.L ** 2 / (c2 * gap ** 2)


def C3(L: float, rho: float) -> float:
    """Infinite for rho = 0 (fully connected mixing in one step)."""
    if rho == 0.0 or L == 0.0:
        return math.inf
    return (1.0 - math.sqrt(rho)) ** 2 * (2.0 * L ** 2 + 1.0) / (6.0 * rho * L ** 2)


def C4(L: float) -> float:
    return (7.0 * L ** 2 + L + 1.0) / 2.0


def _close(a: float, b: float) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return math.isclose(a, b, rel_tol=CROSS_CHECK_TOL, abs_tol=CROSS_CHECK_TOL)


def _weighted(coeff: float, amount: float) -> float:
    # inf * 0 is taken as 0: an absent threshold term contributes nothing
    return 0.0 if amount == 0.0 else coeff * amount


# ===== General bound =====

def _theorem1_terms(inp: BoundInputs, G: float, Ghalf: float) -> List[float]:
    g, L, n, K = inp.gamma, inp.L, inp.n, inp.K
    c2 = C2(inp)
    gap2 = (1.0 - math.sqrt(inp.rho)) ** 2
    g_coeff = (
        12.0 / c2 * g ** 3 * n * L ** 2 * (2.0 * L ** 2 + 1.0)
        + (3.0 * g * L ** 2 + L + 1.0) / (2.0 * K)
        + 72.0 * g ** 3 * L ** 4 / (K * c2 * gap2)
    )
    sigma_term = 2.0 * n * g ** 3 * inp.sigma ** 2 * L ** 2 / (c2 * (1.0 - inp.rho))
    return [
        inp.f0_minus_fstar / K,
        g ** 2 * L * inp.sigma ** 2 / (2.0 * n),
        g_coeff * G,
        g * inp.rho * L ** 2 * Ghalf ** 2 / c2,
        sigma_term,
        18.0 * n * g ** 3 * inp.varsigma ** 2 * L ** 2 / (c2 * gap2),
    ]


def _theorem1_reference(inp: BoundInputs, G: float, Ghalf: float) -> float:
    y, L, s, v, r, n, K, d = (
        inp.gamma, inp.L, inp.sigma, inp.varsigma, inp.rho, inp.n, inp.K, inp.f0_minus_fstar
    )
    q = 1.0 - r ** 0.5
    inv_c2 = 1.0 / (1.0 - 36.0 * n * (y * L / q) ** 2)
    total = d / K + y * y * L * s * s / (2 * n)
    total += G * (
        12 * inv_c2 * n * (y ** 3) * (L ** 2) * (2 * L * L + 1)
        + (3 * y * L * L + L + 1) / (2 * K)
        + 72 * inv_c2 * (y ** 3) * (L ** 4) / (K * q * q)
    )
    total += inv_c2 * y * r * L * L * Ghalf * Ghalf
    total += 2 * inv_c2 * n * (y ** 3) * (s * L) ** 2 / (1 - r)
    total += 18 * inv_c2 * n * (y ** 3) * (v * L / q) ** 2
    return total


def theorem1_rhs(inp: BoundInputs) -> float:
    """Right-hand side of the general rate bound.

    Raises BoundError when C2 <= 0 (step size too large for the spectral gap).
    """
    c2 = C2(inp)
    if not c2 > 0.0:
        raise BoundError(f"step size too large for spectral gap (C2 = {c2!r} <= 0)")
    G, Ghalf = inp.G(), inp.Ghalf()
    value = math.fsum(_theorem1_terms(inp, G, Ghalf))
    reference = _theorem1_reference(inp, G, Ghalf)
    if not _close(value, reference):
        raise BoundError(f"theorem bound cross-check failed: {value!r} vs {reference!r}")
    return value


# ===== Tuned-step bound =====

def corollary_step_size(L: float, sigma: float, rho: float, n: int, K: int) -> float:
    """gamma = 1 / (2 rho L^2 sqrt(K) + sigma sqrt(K / n))."""
    denom = 2.0 * rho * L ** 2 * math.sqrt(K) + sigma * math.sqrt(K / n)
    if not denom > 0.0:
        raise BoundError("corollary step size undefined when rho * L = 0 and sigma = 0")
    return 1.0 / denom


@dataclass(frozen=True)
class CorollaryConditions:
    """The three "K large enough" requirements; False when undefined (sigma = 0)."""

    variance_terms: bool
    c2_half: bool
    step_size: bool

    @property
    def all_hold(self) -> bool:
        return self.variance_terms and self.c2_half and self.step_size

    def to_dict(self) -> Dict[str, bool]:
        return {
            "K_variance_terms": self.variance_terms,
            "K_c2_half": self.c2_half,
            "K_step_size": self.step_size,
            "all": self.all_hold,
        }


def corollary_conditions(inp: BoundInputs) -> CorollaryConditions:
    L, s, v, r, n, K = inp.L, inp.sigma, inp.varsigma, inp.rho, inp.n, inp.K
    q = 1.0 - math.sqrt(r)
    if s == 0.0:
        return CorollaryConditions(False, False, False)
    offset = inp.f0_minus_fstar + L / 2.0
    first = math.inf
    if offset > 0.0:
        first = 4.0 * n ** 3 * L ** 2 / (s ** 3 * offset) * (s ** 2 / (1.0 - r) + 9.0 * v ** 2 / q ** 2)
    second = 72.0 * L ** 2 * n ** 2 / (s ** 2 * q ** 2)
    third = (math.sqrt(n) * (L + 1.0) / (2.0 * r * L ** 2 * math.sqrt(n) + s)) ** 2
    return CorollaryConditions(K >= first, K >= second, K >= third)


@dataclass(frozen=True)
class CorollaryResult:
    rhs: float
    conditions: CorollaryConditions
    gamma: Optional[float]

    @property
    def applicable(self) -> bool:
        return self.conditions.all_hold


def _corollary1_terms(inp: BoundInputs, G: float, Ghalf: float) -> List[float]:
    K = inp.K
    root_k = math.sqrt(K)
    return [
        (2.0 * inp.f0_minus_fstar + inp.L) * (1.0 / K + 1.0 / math.sqrt(K * inp.n)),
        _weighted(2.0 * C3(inp.L, inp.rho) / root_k + 2.0 * C4(inp.L) / K, G),
        2.0 / root_k * Ghalf ** 2,
    ]


def _corollary1_reference(inp: BoundInputs, G: float, Ghalf: float) -> float:
    L, r, n, K, d = inp.L, inp.rho, inp.n, inp.K, inp.f0_minus_fstar
    out = (2 * d + L) / K + (2 * d + L) / (K * n) ** 0.5
    if G != 0.0:
        if r == 0.0 or L == 0.0:
            return math.inf
        c3 = (1 - r ** 0.5) ** 2 * (2 * L * L + 1) / (6 * r * L * L)
        out += G * (2 * c3 * K ** -0.5 + (7 * L * L + L + 1) / K)
    out += 2 * Ghalf * Ghalf * K ** -0.5
    return out


def corollary1_rhs(inp: BoundInputs) -> CorollaryResult:
    """Corollary bound plus its applicability report (never raises on inapplicability)."""
    G, Ghalf = inp.G(), inp.Ghalf()
    value = math.fsum(_corollary1_terms(inp, G, Ghalf))
    reference = _corollary1_reference(inp, G, Ghalf)
    if not _close(value, reference):
        raise BoundError(f"corollary bound cross-check failed: {value!r} vs {reference!r}")
    try:
        gamma = corollary_step_size(inp.L, inp.sigma, inp.rho, inp.n, inp.K)
    except BoundError:
        gamma = None
    return CorollaryResult(rhs=value, conditions=corollary_conditions(inp), gamma=gamma)


# ===== Constant estimation =====

@dataclass(frozen=True)
class ConstantEstimates:
    """Problem constants with per-constant provenance.

    `exact_L` / `exact_f_star` mark closed-form values; `sigma_sampled` is
    False only when every shard uses its full batch (sigma = 0 exactly).
    varsigma is always a maximum over random probe points.
    """

    L: float
    sigma: float
    varsigma: float
    f0: float
    f_star: float
    exact_L: bool
    exact_f_star: bool
    samples: int
    sigma_sampled: bool = True

    @property
    def f0_minus_fstar(self) -> float:
        return max(0.0, self.f0 - self.f_star)

    def estimated(self) -> Dict[str, bool]:
        return {
            "L": not self.exact_L,
            "sigma": self.sigma_sampled,
            "varsigma": True,
            "f_star": not self.exact_f_star,
        }

    def to_dict(self) -> Dict[str, Any]:
        return {
            "L": self.L,
            "sigma": self.sigma,
            "varsigma": self.varsigma,
            "f0": self.f0,
            "f_star": self.f_star,
            "exact_L": self.exact_L,
            "exact_f_star": self.exact_f_star,
            "samples": self.samples,
            "estimated": self.estimated(),
        }


VARIANCE_DRAWS = 32


def estimate_constants(
    objectives: Sequence[Objective],
    mixing: MixingMatrix,
    samples: int = 8,
    seed: int = 0,
    f_star: Optional[float] = None,
    x0: Optional[np.ndarray] = None,
) -> ConstantEstimates:
    """Estimate (L, sigma, varsigma, f(0), f*) for the given shards.

    sigma^2 is the largest empirical mini-batch gradient variance over
    `samples` random points and all PEs; varsigma^2 is the largest spread of
    local full gradients around the global one. A full-shard batch gives
    sigma = 0 exactly.
    """
    if not objectives:
        raise BoundError("estimate_constants needs at least one objective")
    if mixing.n != len(objectives):
        raise DimensionError(f"{len(objectives)} objectives for a mixing matrix over {mixing.n} PEs")
    if samples < 1:
        raise BoundError(f"samples must be >= 1, got {samples}")

    rng = np.random.default_rng(seed)
    dim = objectives[0].layout.total_dim
    L = lipschitz_constant(objectives, rng)
    exact_L = all(isinstance(obj, LeastSquaresObjective) for obj in objectives)

    sigma_sq = 0.0
    varsigma_sq = 0.0
    sigma_sampled = any(obj.batch_size != obj.shard_size for obj in objectives)
    for _ in range(samples):
        x = rng.standard_normal(dim)
        local = [obj.full_gradient(x) for obj in objectives]
        mean = np.mean(local, axis=0)
        spread = float(np.mean([np.sum((g - mean) ** 2) for g in local]))
        varsigma_sq = max(varsigma_sq, spread)
        for obj, full in zip(objectives, local):
            if obj.sample_indices(rng) is None:
                continue
            draws = [obj.stochastic_gradient(x, rng) - full for _ in range(VARIANCE_DRAWS)]
            sigma_sq = max(sigma_sq, float(np.mean([d @ d for d in draws])))

    start = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
    f0 = global_loss(objectives, start)
    exact_f_star = False
    if f_star is None:
        if exact_L:
            _, f_star = least_squares_optimum(objectives)
            exact_f_star = True
        else:
            f_star = 0.0
    estimates = ConstantEstimates(
        L=L,
        sigma=math.sqrt(sigma_sq),
        varsigma=math.sqrt(varsigma_sq),
        f0=f0,
        f_star=float(f_star),
        exact_L=exact_L,
        exact_f_star=exact_f_star,
        samples=samples,
        sigma_sampled=sigma_sampled,
    )
    logger.info("constants: L=%.6g sigma=%.6g varsigma=%.6g f0-f*=%.6g",
                L, estimates.sigma, estimates.varsigma, estimates.f0_minus_fstar)
    return estimates


def norm_inequality_check(a: np.ndarray, b: np.ndarray) -> bool:
    """||a + b||^2 <= 2||a||^2 + 2||b||^2."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"vectors of shapes {a.shape} and {b.shape}")
    s = a + b
    lhs = float(s @ s) if s.ndim == 1 else float(np.sum(s * s))
    rhs = 2.0 * float(np.sum(a * a)) + 2.0 * float(np.sum(b * b))
    # slack for rounding in the tight case a == b
    return lhs <= rhs * (1.0 + 4.0 * np.finfo(float).eps)


# ===== Reports =====

def bound_report(inp: BoundInputs, estimates: Optional[ConstantEstimates] = None) -> Dict[str, Any]:
    """JSON-ready report: both bounds, applicability conditions and constants."""
    c2 = C2(inp)
    rhs_theorem1: Optional[float] = None
    if c2 > 0.0:
        rhs_theorem1 = theorem1_rhs(inp)
    corollary = corollary1_rhs(inp)
    constants: Dict[str, Any] = {
        "C1": C1(inp) if c2 > 0.0 else None,
        "C2": c2,
        "C3": C3(inp.L, inp.rho),
        "C4": C4(inp.L),
        "G": inp.G(),
        "G_half": inp.Ghalf(),
        "gamma_corollary": corollary.gamma,
    }
    conditions: Dict[str, Any] = {"C2_positive": c2 > 0.0}
    conditions.update(corollary.conditions.to_dict())
    report: Dict[str, Any] = {
        "rhs_theorem1": rhs_theorem1,
        "rhs_corollary1": corollary.rhs,
        "conditions": conditions,
        "constants": constants,
        "inputs": inp.to_dict(),
    }
    if estimates is not None:
        report["estimates"] = estimates.to_dict()
    return report


def gradient_norm_diagnostic(config: "RunConfig", inp: BoundInputs) -> Dict[str, Any]:
    """Run the engine at the corollary step size and compare the measured
    average squared gradient norm of the averaged model with the corollary
    bound. Reported, never asserted.
    """
    from .engine import StepSizeRule, run

    corollary = corollary1_rhs(inp)
    if corollary.gamma is None:
        raise BoundError("diagnostic run needs the corollary step size, which is undefined here")
    diag_config = replace(
        config, gamma=corollary.gamma, step_size_rule=StepSizeRule.CONSTANT, iterations=inp.K,
    )
    metrics = run(diag_config, track_gradient=True)
    measured = math.fsum(metrics.grad_norms_sq) / len(metrics.grad_norms_sq)
    return {
        "gamma": corollary.gamma,
        "measured_avg_grad_norm_sq": measured,
        "rhs_corollary1": corollary.rhs,
        "within_bound": measured <= corollary.rhs,
        "conditions_hold": corollary.applicable,
        "final_loss": metrics.final_loss,
    }

