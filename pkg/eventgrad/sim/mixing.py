"""
mixing.py — Communication topology and doubly stochastic mixing matrices

Features:
- Ring mixing matrix with 1/3 self weight and 1/3 per neighbor
- Validation of user-supplied matrices (square, symmetric, doubly stochastic)
- Spectral quantity rho = max(|lambda_2|, |lambda_n|)
- Column deviation of W^k from the uniform vector (consensus rate probe)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import MixingValidationError, TopologyError

TOLERANCE = 1e-12


@dataclass(frozen=True)
class MixingMatrix:
    """Symmetric doubly stochastic weights over n PEs.

    Immutable after construction; `weights` is stored read-only so the same
    instance can be shared by every worker.
    """

    weights: np.ndarray
    neighbor_lists: Tuple[Tuple[int, ...], ...]
    rho: float = field(default=0.0)

    @property
    def n(self) -> int:
        return int(self.weights.shape[0])

    def neighbors(self, i: int) -> Tuple[int, ...]:
        return self.neighbor_lists[i]

    def to_list(self) -> List[float]:
        """Dense row-major export (the `mixing.custom_matrix` format)."""
        return [float(v) for v in self.weights.reshape(-1)]

    @classmethod
    def from_weights(cls, weights: Any, tol: float = TOLERANCE) -> "MixingMatrix":
        """Validate an arbitrary matrix and wrap it.

        Raises MixingValidationError if any invariant is violated.
        """
        w = np.array(weights, dtype=float, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] == 0:
            raise MixingValidationError(f"mixing matrix must be square and nonempty, got shape {w.shape}")
        n = w.shape[0]

        if np.any(w < -tol) or np.any(w > 1.0 + tol):
            raise MixingValidationError("mixing weights must lie in [0, 1]")
        if not np.allclose(w, w.T, rtol=0.0, atol=tol):
            raise MixingValidationError("mixing matrix must be symmetric")
        row_err = np.max(np.abs(w.sum(axis=1) - 1.0))
        col_err = np.max(np.abs(w.sum(axis=0) - 1.0))
        if row_err > tol or col_err > tol:
            raise MixingValidationError(
                f"mixing matrix must be doubly stochastic (row err {row_err:.3e}, col err {col_err:.3e})"
            )

        w.setflags(write=False)
        neighbor_lists = tuple(
            tuple(j for j in range(n) if j != i and w[i, j] > 0.0) for i in range(n)
        )
        rho = _spectral_rho(w)
        if not rho < 1.0:
            raise MixingValidationError(f"spectral gap assumption violated: rho={rho} >= 1")
        return cls(weights=w, neighbor_lists=neighbor_lists, rho=rho)

    @classmethod
    def from_list(cls, values: Sequence[float], n: int) -> "MixingMatrix":
        if len(values) != n * n:
            raise MixingValidationError(f"custom_matrix needs {n * n} entries for n={n}, got {len(values)}")
        return cls.from_weights(np.asarray(values, dtype=float).reshape(n, n))


@dataclass(frozen=True)
class MixingSpec:
    """Config-side description of the topology."""

    topology: str = "ring"
    custom_matrix: Optional[List[float]] = None

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"topology": self.topology}
        if self.custom_matrix is not None:
            out["custom_matrix"] = list(self.custom_matrix)
        return out


def _spectral_rho(w: np.ndarray) -> float:
    n = w.shape[0]
    if n == 1:
        return 0.0
    eig = np.sort(np.linalg.eigvalsh(w))[::-1]
    rho = float(max(abs(eig[1]), abs(eig[-1])))
    # eigvalsh leaves ~1e-17 where the exact value is 0 (n=3 ring, W = J/n)
    return 0.0 if rho < TOLERANCE else rho


def build_ring_mixing(n: int) -> MixingMatrix:
    """Ring of n PEs, weight 1/(deg+1) = 1/3 on self and both neighbors."""
    if n < 3:
        raise TopologyError(f"ring topology undefined for n={n} (need n >= 3)")
    w = np.zeros((n, n), dtype=float)
    third = 1.0 / 3.0
    for i in range(n):
        w[i, i] = third
        w[i, (i - 1) % n] = third
        w[i, (i + 1) % n] = third
    return MixingMatrix.from_weights(w)


def build_mixing(spec: MixingSpec, n: int) -> MixingMatrix:
    if spec.custom_matrix is not None:
        return MixingMatrix.from_list(spec.custom_matrix, n)
    if spec.topology != "ring":
        raise TopologyError(f"unknown topology: {spec.topology}")
    return build_ring_mixing(n)


def spectral_gap(mixing: MixingMatrix) -> float:
    """rho = max(|lambda_2(W)|, |lambda_n(W)|), eigenvalues sorted descending."""
    return _spectral_rho(np.asarray(mixing.weights))


def mix_power_deviation(mixing: MixingMatrix, k: int, i: int) -> float:
    """Squared norm of (1/n)*1 - W^k e_i."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    n = mixing.n
    if not 0 <= i < n:
        raise IndexError(f"PE index {i} out of range for n={n}")
    column = np.linalg.matrix_power(mixing.weights, k)[:, i]
    diff = np.full(n, 1.0 / n) - column
    return float(diff @ diff)


def mix_row(weights: np.ndarray, i: int, rows: Sequence[np.ndarray]) -> np.ndarray:
    """Sum_j W[j, i] * rows[j] over nonzero weights, ascending j.

    Both the regular and the event-triggered update go through this so that
    identical inputs give bitwise identical outputs.
    """
    out: Optional[np.ndarray] = None
    for j in range(weights.shape[0]):
        wji = weights[j, i]
        if wji == 0.0:
            continue
        term = wji * rows[j]
        out = term if out is None else out + term
    assert out is not None
    return out
