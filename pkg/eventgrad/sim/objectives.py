"""
objectives.py — Stochastic gradient oracles and data shards

Built-in objectives (all desk scale, seeded):
- least_squares: f_i(x) = 1/2 ||A_i x - b_i||^2 (sum over shard rows)
- logistic:      softmax cross-entropy, weight matrix + bias (mean over rows)
- mlp:           one tanh hidden layer + softmax cross-entropy, hand backprop

Models are flat float vectors; a BlockLayout maps the flat vector onto the
ordered parameter blocks (one weight matrix or bias vector each), which are
the unit of event triggering and messaging.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, ObjectiveError


class ObjectiveKind(str, Enum):
    LEAST_SQUARES = "least_squares"
    LOGISTIC = "logistic"
    MLP = "mlp"


# ===== Model layout =====

@dataclass(frozen=True)
class ParameterBlock:
    """One named tensor of the model, stored flattened at `offset`."""

    name: str
    shape: Tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.shape else 1

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.size)


@dataclass(frozen=True)
class BlockLayout:
    blocks: Tuple[ParameterBlock, ...]

    @classmethod
    def from_shapes(cls, shapes: Sequence[Tuple[str, Tuple[int, ...]]]) -> "BlockLayout":
        if not shapes:
            raise ObjectiveError("a model needs at least one parameter block")
        blocks: List[ParameterBlock] = []
        offset = 0
        for name, shape in shapes:
            block = ParameterBlock(name=name, shape=tuple(int(s) for s in shape), offset=offset)
            if block.size < 1:
                raise ObjectiveError(f"parameter block {name} is empty")
            blocks.append(block)
            offset += block.size
        return cls(blocks=tuple(blocks))

    @property
    def total_dim(self) -> int:
        last = self.blocks[-1]
        return last.offset + last.size

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    def sizes(self) -> List[int]:
        return [b.size for b in self.blocks]

    def view(self, values: np.ndarray, index: int) -> np.ndarray:
        """Block `index` of a flat vector, reshaped (shares memory)."""
        block = self.blocks[index]
        return values[block.slice].reshape(block.shape)


@dataclass
class ModelState:
    """A PE's model x_{k,i}: flat values plus the block layout."""

    layout: BlockLayout
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.total_dim,):
            raise DimensionError(
                f"model vector has shape {self.values.shape}, layout needs ({self.layout.total_dim},)"
            )

    def block(self, index: int) -> np.ndarray:
        return self.values[self.layout.blocks[index].slice]


ModelLike = Union[ModelState, np.ndarray]


# ===== Objective spec =====

@dataclass(frozen=True)
class ObjectiveSpec:
    """Dataset generation / import parameters (`objective` config section)."""

    kind: ObjectiveKind = ObjectiveKind.LEAST_SQUARES
    dim: int = 10
    samples_per_pe: int = 64
    batch_size: int = 8
    noise: float = 0.1
    classes: int = 2
    hidden: int = 8
    separation: float = 2.0
    heterogeneity: float = 0.0
    identical_shards: bool = False
    csv_path: Optional[str] = None
    f_star: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "kind": self.kind.value,
            "dim": self.dim,
            "samples_per_pe": self.samples_per_pe,
            "batch_size": self.batch_size,
            "noise": self.noise,
            "classes": self.classes,
            "hidden": self.hidden,
            "separation": self.separation,
            "heterogeneity": self.heterogeneity,
            "identical_shards": self.identical_shards,
        }
        if self.csv_path is not None:
            out["csv_path"] = self.csv_path
        if self.f_star is not None:
            out["f_star"] = self.f_star
        return out


# ===== Objectives =====

class Objective(ABC):
    """Local objective f_i of one PE over its data shard.

    `reduction` decides how per-row terms combine: "sum" objectives scale a
    mini-batch by shard_size/batch, "mean" objectives by 1/batch, so both
    give unbiased gradient estimates.
    """

    kind: ClassVar[ObjectiveKind]
    reduction: ClassVar[str] = "mean"

    def __init__(self, features: np.ndarray, targets: np.ndarray, batch_size: int, layout: BlockLayout) -> None:
        features = np.array(features, dtype=float)
        if features.ndim != 2 or features.shape[0] == 0:
            raise ObjectiveError("every PE shard must be a nonempty 2-D feature array")
        if len(targets) != features.shape[0]:
            raise ObjectiveError("features and targets disagree on the number of samples")
        if batch_size < 1:
            raise ObjectiveError(f"batch_size must be >= 1, got {batch_size}")
        self.features = features
        self.targets = np.array(targets)
        self.batch_size = int(batch_size)
        self.layout = layout
        self.features.setflags(write=False)
        self.targets.setflags(write=False)

    @property
    def shard_size(self) -> int:
        return int(self.features.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.features.shape[1])

    # --- per-row sums, implemented by subclasses ---

    @abstractmethod
    def _loss_sum(self, x: np.ndarray, feats: np.ndarray, targs: np.ndarray) -> float:
        ...

    @abstractmethod
    def _grad_sum(self, x: np.ndarray, feats: np.ndarray, targs: np.ndarray) -> np.ndarray:
        ...

    # --- public oracle ---

    def _flat(self, model: ModelLike) -> np.ndarray:
        x = model.values if isinstance(model, ModelState) else np.asarray(model, dtype=float)
        if x.shape != (self.layout.total_dim,):
            raise DimensionError(
                f"model dimension {x.shape} does not match objective ({self.layout.total_dim},)"
            )
        return x

    def _scale(self, count: int) -> float:
        if self.reduction == "sum":
            return self.shard_size / count
        return 1.0 / count

    def sample_indices(self, rng: np.random.Generator) -> Optional[np.ndarray]:
        """Mini-batch row indices, uniform with replacement.

        A batch as large as the shard is the whole shard (no sampling, no
        randomness consumed).
        """
        if self.batch_size == self.shard_size:
            return None
        return rng.integers(0, self.shard_size, size=self.batch_size)

    def gradient_on(self, model: ModelLike, indices: Optional[np.ndarray]) -> np.ndarray:
        x = self._flat(model)
        if indices is None:
            return self._grad_sum(x, self.features, self.targets) * self._scale(self.shard_size)
        return self._grad_sum(x, self.features[indices], self.targets[indices]) * self._scale(len(indices))

    def stochastic_gradient(self, model: ModelLike, rng: np.random.Generator) -> np.ndarray:
        return self.gradient_on(model, self.sample_indices(rng))

    def full_gradient(self, model: ModelLike) -> np.ndarray:
        return self.gradient_on(model, None)

    def local_loss(self, model: ModelLike) -> float:
        x = self._flat(model)
        return float(self._loss_sum(x, self.features, self.targets) * self._scale(self.shard_size))

    def initial_model(self, rng: np.random.Generator, scale: Optional[float] = None) -> np.ndarray:
        """scale * N(0, 1) per coordinate; the zero vector when scale is None."""
        if scale is None:
            return np.zeros(self.layout.total_dim)
        return scale * rng.standard_normal(self.layout.total_dim)

    def accuracy(self, model: ModelLike) -> Optional[float]:
        """Fraction of shard rows classified correctly; None for regression."""
        return None


class LeastSquaresObjective(Objective):
    kind = ObjectiveKind.LEAST_SQUARES
    reduction = "sum"

    def __init__(self, features: np.ndarray, targets: np.ndarray, batch_size: int) -> None:
        layout = BlockLayout.from_shapes([("x", (np.asarray(features).shape[1],))])
        super().__init__(features, np.asarray(targets, dtype=float), batch_size, layout)

    def _loss_sum(self, x: np.ndarray, feats: np.ndarray, targs: np.ndarray) -> float:
        r = feats @ x - targs
        return 0.5 * float(r @ r)

    def _grad_sum(self, x: np.ndarray, feats: np.ndarray, targs: np.ndarray) -> np.ndarray:
        return feats.T @ (feats @ x - targs)

    def hessian(self) -> np.ndarray:
        return self.features.T @ self.features

    def lipschitz(self) -> float:
        """Exact gradient Lipschitz constant: largest eigenvalue of A^T A."""
        return float(np.linalg.eigvalsh(self.hessian())[-1])


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _cross_entropy_sum(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(len(labels)), labels]
    return float(np.sum(log_norm - picked))


def _hit_rate(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


class LogisticObjective(Objective):
    """Multiclass (softmax) logistic regression; binary is classes=2."""

    kind = ObjectiveKind.LOGISTIC

    def __init__(self, features: np.ndarray, labels: np.ndarray, batch_size: int, classes: int) -> None:
        d = np.asarray(features).shape[1]
        self.classes = int(classes)
        layout = BlockLayout.from_shapes([("weight", (d, self.classes)), ("bias", (self.classes,))])
        super().__init__(features, _as_labels(labels, self.classes), batch_size, layout)

    def _unpack(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self.layout.view(x, 0), self.layout.view(x, 1)

    def _loss_sum(self, x: np.ndarray, feats: np.ndarray, targs: np.ndarray) -> float:
        w, b = self._unpack(x)
        return _cross_entropy_sum(feats @ w + b, targs)

    def _grad_sum(self, x: np.ndarray, feats: np.ndarray, targs: np.ndarray) -> np.ndarray:
        w, b = self._unpack(x)
        dz = _softmax(feats @ w + b)
        dz[np.arange(len(targs)), targs] -= 1.0
        return np.concatenate([(feats.T @ dz).reshape(-1), dz.sum(axis=0)])

    def accuracy(self, model: ModelLike) -> Optional[float]:
        w, b = self._unpack(self._flat(model))
        return _hit_rate(self.features @ w + b, self.targets)


class MLPObjective(Objective):
    """One hidden tanh layer, softmax cross-entropy output."""

    kind = ObjectiveKind.MLP

    def __init__(self, features: np.ndarray, labels: np.ndarray, batch_size: int, classes: int, hidden: int) -> None:
        d = np.asarray(features).shape[1]
        self.classes = int(classes)
        self.hidden = int(hidden)
        layout = BlockLayout.from_shapes([
            ("hidden.weight", (d, self.hidden)),
            ("hidden.bias", (self.hidden,)),
            ("output.weight", (self.hidden, self.classes)),
            ("output.bias", (self.classes,)),
        ])
        super().__init__(features, _as_labels(labels, self.classes), batch_size, layout)

    def _unpack(self, x: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(self.layout.view(x, i) for i in range(4))

    def _forward(self, x: np.ndarray, feats: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        w1, b1, w2, b2 = self._unpack(x)
        h = np.tanh(feats @ w1 + b1)
        return h, h @ w2 + b2

    def _loss_sum(self, x: np.ndarray, feats: np.ndarray, targs: np.ndarray) -> float:
        _, logits = self._forward(x, feats)
        return _cross_entropy_sum(logits, targs)

    def _grad_sum(self, x: np.ndarray, feats: np.ndarray, targs: np.ndarray) -> np.ndarray:
        _, _, w2, _ = self._unpack(x)
        h, logits = self._forward(x, feats)
        dz = _softmax(logits)
        dz[np.arange(len(targs)), targs] -= 1.0
        g_w2 = h.T @ dz
        g_b2 = dz.sum(axis=0)
        da = (dz @ w2.T) * (1.0 - h * h)
        g_w1 = feats.T @ da
        g_b1 = da.sum(axis=0)
        return np.concatenate([g_w1.reshape(-1), g_b1, g_w2.reshape(-1), g_b2])

    def accuracy(self, model: ModelLike) -> Optional[float]:
        _, logits = self._forward(self._flat(model), self.features)
        return _hit_rate(logits, self.targets)

    def initial_model(self, rng: np.random.Generator, scale: Optional[float] = None) -> np.ndarray:
        """Weights N(0, 1/fan_in), biases zero; an explicit scale overrides this."""
        if scale is not None:
            return super().initial_model(rng, scale)
        d = self.input_dim
        w1 = rng.standard_normal((d, self.hidden)) / np.sqrt(d)
        w2 = rng.standard_normal((self.hidden, self.classes)) / np.sqrt(self.hidden)
        return np.concatenate([w1.reshape(-1), np.zeros(self.hidden), w2.reshape(-1), np.zeros(self.classes)])


def _as_labels(labels: np.ndarray, classes: int) -> np.ndarray:
    arr = np.asarray(labels)
    as_int = arr.astype(int)
    if np.any(as_int != arr) or np.any(as_int < 0) or np.any(as_int >= classes):
        raise ObjectiveError(f"class labels must be integers in [0, {classes})")
    return as_int


# ===== Module-level oracle API =====

def stochastic_gradient(obj: Objective, model: ModelLike, rng: np.random.Generator) -> np.ndarray:
    """grad F_i(x; xi) for a freshly sampled mini-batch xi."""
    return obj.stochastic_gradient(model, rng)


def full_gradient(obj: Objective, model: ModelLike) -> np.ndarray:
    """Exact grad f_i(x) over the whole local shard."""
    return obj.full_gradient(model)


def global_loss(objectives: Sequence[Objective], model: ModelLike) -> float:
    """f(x) = (1/n) sum_i f_i(x)."""
    if not objectives:
        raise ObjectiveError("global_loss needs at least one objective")
    return float(np.mean([obj.local_loss(model) for obj in objectives]))


def global_gradient(objectives: Sequence[Objective], model: ModelLike) -> np.ndarray:
    return np.mean([obj.full_gradient(model) for obj in objectives], axis=0)


def global_accuracy(objectives: Sequence[Objective], model: ModelLike) -> Optional[float]:
    """Accuracy over the union of all shards (row-weighted); None for regression."""
    hits = [obj.accuracy(model) for obj in objectives]
    if any(h is None for h in hits):
        return None
    rows = [obj.shard_size for obj in objectives]
    return float(np.dot(hits, rows) / sum(rows))


# ===== Dataset construction =====

def load_csv_dataset(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Rows `features..., target`; lines starting with '#' are skipped."""
    data = np.loadtxt(Path(path), delimiter=",", comments="#", ndmin=2)
    if data.shape[1] < 2:
        raise ObjectiveError(f"CSV dataset needs at least one feature and a target column: {path}")
    return data[:, :-1], data[:, -1]


def _split_shards(features: np.ndarray, targets: np.ndarray, n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    feat_parts = np.array_split(features, n)
    targ_parts = np.array_split(targets, n)
    shards = list(zip(feat_parts, targ_parts))
    if any(len(t) == 0 for _, t in shards):
        raise ObjectiveError(f"dataset of {len(targets)} rows cannot give {n} nonempty shards")
    return shards


def _synthetic_regression(spec: ObjectiveSpec, n: int, rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray]]:
    m, d = spec.samples_per_pe, spec.dim
    x_true = rng.standard_normal(d)
    features = rng.standard_normal((n * m, d))
    noise = spec.noise * rng.standard_normal(n * m)
    shifts = spec.heterogeneity * rng.standard_normal((n, d))
    pe_of_row = np.repeat(np.arange(n), m)
    targets = np.einsum("rd,rd->r", features, x_true + shifts[pe_of_row]) + noise
    return _split_shards(features, targets, n)


def _synthetic_clusters(spec: ObjectiveSpec, n: int, rng: np.random.Generator) -> List[Tuple[np.ndarray, np.ndarray]]:
    m, d, c = spec.samples_per_pe, spec.dim, spec.classes
    means = spec.separation * rng.standard_normal((c, d)) / np.sqrt(d)
    labels = rng.permutation(np.arange(n * m) % c)
    features = means[labels] + rng.standard_normal((n * m, d))
    shifts = spec.heterogeneity * rng.standard_normal((n, d))
    features += shifts[np.repeat(np.arange(n), m)]
    return _split_shards(features, labels, n)


def make_objectives(spec: ObjectiveSpec, n: int, rng: np.random.Generator) -> List[Objective]:
    """Build one Objective per PE from a single seeded dataset."""
    if n < 1:
        raise ObjectiveError(f"need at least one PE, got n={n}")

    if spec.csv_path is not None:
        features, targets = load_csv_dataset(spec.csv_path)
        shards = _split_shards(features, targets, n)
    elif spec.kind == ObjectiveKind.LEAST_SQUARES:
        shards = _synthetic_regression(spec, n, rng)
    else:
        shards = _synthetic_clusters(spec, n, rng)

    if spec.identical_shards:
        shards = [shards[0]] * n

    objectives: List[Objective] = []
    for feats, targs in shards:
        if spec.kind == ObjectiveKind.LEAST_SQUARES:
            objectives.append(LeastSquaresObjective(feats, targs, spec.batch_size))
        elif spec.kind == ObjectiveKind.LOGISTIC:
            objectives.append(LogisticObjective(feats, targs, spec.batch_size, spec.classes))
        else:
            objectives.append(MLPObjective(feats, targs, spec.batch_size, spec.classes, spec.hidden))
    return objectives


# ===== Smoothness and optimum =====

LIPSCHITZ_PROBES = 16
PROBE_STEP = 1e-3


def lipschitz_constant(objectives: Sequence[Objective], rng: np.random.Generator) -> float:
    """L for the local objectives.

    Exact (max over PEs of lambda_max(A_i^T A_i)) for least squares; other
    objectives get a finite-difference probe of ||grad(x) - grad(y)|| / ||x - y||
    over random nearby pairs, maximised over PEs and probes.
    """
    if not objectives:
        raise ObjectiveError("lipschitz_constant needs at least one objective")
    if all(isinstance(obj, LeastSquaresObjective) for obj in objectives):
        return max(obj.lipschitz() for obj in objectives)  # type: ignore[attr-defined]

    dim = objectives[0].layout.total_dim
    best = 0.0
    for _ in range(LIPSCHITZ_PROBES):
        x = rng.standard_normal(dim)
        direction = rng.standard_normal(dim)
        direction *= PROBE_STEP / np.linalg.norm(direction)
        y = x + direction
        for obj in objectives:
            diff = obj.full_gradient(x) - obj.full_gradient(y)
            best = max(best, float(np.linalg.norm(diff)) / PROBE_STEP)
    if not best > 0.0:
        raise ObjectiveError("gradient is constant; Lipschitz probe found L = 0")
    return best


def least_squares_optimum(objectives: Sequence[Objective]) -> Tuple[np.ndarray, float]:
    """Minimiser and minimum of f = (1/n) sum_i f_i for least squares shards."""
    if not objectives or not all(isinstance(obj, LeastSquaresObjective) for obj in objectives):
        raise ObjectiveError("closed-form optimum is only available for least squares")
    hess = sum(obj.features.T @ obj.features for obj in objectives)
    rhs = sum(obj.features.T @ obj.targets for obj in objectives)
    x_star = np.linalg.lstsq(hess, rhs, rcond=None)[0]
    return x_star, global_loss(objectives, x_star)
