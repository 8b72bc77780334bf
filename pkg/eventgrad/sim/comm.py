"""
comm.py — Emulated one-sided (RMA) communication

A sender writes block values straight into a receiver's window; the receiver
takes no action. Writes are staged during an iteration and applied at the
barrier in ascending (sent_iter, src, block_id, dst) order, which keeps runs
bit-reproducible.

Accounting:
    Dense payload  -> volume = block length
    Sparse payload -> volume = 2 * kept entries (indices count as scalars)
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CommError, DimensionError

logger = logging.getLogger(__name__)


# ===== Payloads and messages =====

@dataclass(frozen=True)
class DensePayload:
    values: np.ndarray

    @property
    def volume(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class SparsePayload:
    """Kept (index, value) pairs of a block; indices strictly increasing."""

    indices: np.ndarray
    values: np.ndarray
    length: int

    def __post_init__(self) -> None:
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise DimensionError("sparse payload needs matching 1-D indices and values")
        if self.indices.size and (np.any(np.diff(self.indices) <= 0)):
            raise CommError("sparse indices must be strictly increasing")

    @property
    def volume(self) -> int:
        return 2 * int(self.indices.size)

    def pairs(self) -> List[Tuple[int, float]]:
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]


Payload = Union[DensePayload, SparsePayload]


@dataclass(frozen=True)
class Message:
    src: int
    dst: int
    block_id: int
    payload: Payload
    sent_iter: int

    @property
    def volume(self) -> int:
        return self.payload.volume

    def order_key(self) -> Tuple[int, int, int, int]:
        return (self.sent_iter, self.src, self.block_id, self.dst)


# ===== Statistics =====

@dataclass
class CommStats:
    """Cumulative communication counters (monotone over a run)."""

    messages_sent: int = 0
    scalar_volume: int = 0
    messages_by_block: Counter = field(default_factory=Counter)
    volume_by_block: Counter = field(default_factory=Counter)
    messages_by_pe: Counter = field(default_factory=Counter)

    def record(self, msg: Message) -> None:
        self.record_counts(msg.src, msg.block_id, msg.volume)

    def record_counts(self, src: int, block_id: int, volume: int) -> None:
        self.messages_sent += 1
        self.scalar_volume += volume
        self.messages_by_block[block_id] += 1
        self.volume_by_block[block_id] += volume
        self.messages_by_pe[src] += 1

    def to_dict(self) -> Dict[str, object]:
        return {
            "messages_sent": self.messages_sent,
            "scalar_volume": self.scalar_volume,
            "messages_by_block": {str(k): v for k, v in sorted(self.messages_by_block.items())},
            "volume_by_block": {str(k): v for k, v in sorted(self.volume_by_block.items())},
            "messages_by_pe": {str(k): v for k, v in sorted(self.messages_by_pe.items())},
        }


# ===== Windows =====

class Window:
    """Receiver-side mailbox of PE `owner`.

    Holds the last received copy of every neighbor's full model (one flat
    vector per source, sliced per block) plus the iteration each block slot
    was last written. Only `one_sided_put` writes here; `read` hands out
    read-only views.
    """

    def __init__(
        self,
        owner: int,
        sources: Iterable[int],
        block_slices: Sequence[slice],
        total_dim: int,
        initial: Optional[np.ndarray] = None,
    ) -> None:
        self.owner = owner
        self._block_slices = list(block_slices)
        self._slots: Dict[int, np.ndarray] = {}
        for j in sorted(set(sources)):
            if initial is None:
                self._slots[j] = np.zeros(total_dim)
            else:
                if initial[j].shape != (total_dim,):
                    raise DimensionError(f"initial model of PE {j} has shape {initial[j].shape}")
                self._slots[j] = np.array(initial[j], dtype=float, copy=True)
        self._written: Dict[Tuple[int, int], int] = {}

    @property
    def sources(self) -> Tuple[int, ...]:
        return tuple(self._slots)

    @property
    def num_blocks(self) -> int:
        return len(self._block_slices)

    def has_source(self, src: int) -> bool:
        return src in self._slots

    def read(self, src: int, block_id: Optional[int] = None) -> np.ndarray:
        if src not in self._slots:
            raise CommError(f"PE {self.owner} has no window slot for PE {src}")
        full = self._slots[src]
        view = full if block_id is None else full[self._block_slices[block_id]]
        view = view.view()
        view.setflags(write=False)
        return view

    def written_iter(self, src: int, block_id: int) -> Optional[int]:
        return self._written.get((src, block_id))

    def is_seeded(self) -> bool:
        return all(
            (j, b) in self._written for j in self._slots for b in range(len(self._block_slices))
        )

    def _write(self, msg: Message) -> None:
        block = self._slots[msg.src][self._block_slices[msg.block_id]]
        payload = msg.payload
        if isinstance(payload, DensePayload):
            if payload.values.size != block.size:
                raise DimensionError(
                    f"dense payload of length {payload.values.size} for block of length {block.size}"
                )
            block[:] = payload.values.reshape(-1)
        else:
            if payload.length != block.size:
                raise DimensionError(f"sparse payload for length {payload.length}, block has {block.size}")
            if payload.indices.size and (payload.indices[0] < 0 or payload.indices[-1] >= block.size):
                raise CommError(f"sparse index out of range for block of length {block.size}")
            block[payload.indices] = payload.values
        self._written[(msg.src, msg.block_id)] = msg.sent_iter


def make_windows(
    neighbor_lists: Sequence[Sequence[int]],
    block_slices: Sequence[slice],
    total_dim: int,
    initial: Optional[np.ndarray] = None,
) -> List[Window]:
    """One window per PE; `initial` (n x d) pre-fills every source slot."""
    return [Window(i, nbrs, block_slices, total_dim, initial) for i, nbrs in enumerate(neighbor_lists)]


# ===== Operations =====

def one_sided_put(msg: Message, windows: Sequence[Window], stats: Optional[CommStats] = None) -> int:
    """Write `msg` into the destination window; returns the message volume.

    Dense payloads overwrite the slot; sparse payloads overwrite only the
    listed indices.
    """
    if not 0 <= msg.dst < len(windows):
        raise CommError(f"destination PE {msg.dst} does not exist")
    window = windows[msg.dst]
    if not window.has_source(msg.src):
        raise CommError(f"PE {msg.dst} is not a neighbor of PE {msg.src}")
    if not 0 <= msg.block_id < window.num_blocks:
        raise CommError(f"block id {msg.block_id} out of range")
    window._write(msg)
    if stats is not None:
        stats.record(msg)
    return msg.volume


def topk_count(length: int, k_percent: float) -> int:
    """ceil(length * K / 100), robust to float noise in the product.

    At least one entry for any K > 0 and nonempty block.
    """
    if length < 1:
        return 0
    return min(length, max(1, math.ceil(round(length * k_percent / 100.0, 9))))


def topk_sparsify(value: np.ndarray, k_percent: float) -> SparsePayload:
    """Keep the ceil(len*K/100) largest-magnitude entries.

    Ties go to the lower index; output indices are ascending.
    """
    if not 0.0 < k_percent <= 100.0:
        raise CommError(f"top-k percent must be in (0, 100], got {k_percent}")
    flat = np.asarray(value, dtype=float).reshape(-1)
    if flat.size == 0:
        raise DimensionError("cannot sparsify an empty block")
    keep = topk_count(flat.size, k_percent)
    order = np.argsort(-np.abs(flat), kind="stable")[:keep]
    indices = np.sort(order)
    return SparsePayload(indices=indices, values=flat[indices].copy(), length=int(flat.size))


@dataclass(frozen=True)
class SendMode:
    """dense, or top-k with `topk_percent`."""

    topk_percent: Optional[float] = None

    @property
    def is_dense(self) -> bool:
        return self.topk_percent is None

    def encode(self, value: np.ndarray) -> Payload:
        if self.is_dense:
            return DensePayload(values=np.array(value, dtype=float, copy=True).reshape(-1))
        return topk_sparsify(value, self.topk_percent)


class PutQueue:
    """Puts staged during an iteration, applied at the barrier.

    A put sent at iteration k becomes visible at iteration k + staleness.
    """

    def __init__(self, staleness: int = 0) -> None:
        if staleness < 0:
            raise CommError(f"staleness must be >= 0, got {staleness}")
        self.staleness = staleness
        self._pending: List[Tuple[int, Message]] = []

    def __len__(self) -> int:
        return len(self._pending)

    def stage(self, msg: Message) -> None:
        self._pending.append((msg.sent_iter + self.staleness, msg))

    def flush(self, k: int, windows: Sequence[Window]) -> int:
        """Apply every put visible at iteration k; returns how many."""
        due = [m for t, m in self._pending if t <= k]
        if not due:
            return 0
        self._pending = [(t, m) for t, m in self._pending if t > k]
        for msg in sorted(due, key=Message.order_key):
            one_sided_put(msg, windows)
        return len(due)


def broadcast_to_neighbors(
    src: int,
    block_id: int,
    value: np.ndarray,
    mode: SendMode,
    neighbors: Sequence[int],
    queue: PutQueue,
    stats: CommStats,
    k: int,
) -> int:
    """Stage one put per neighbor of `src`; returns the number of puts.

    Messages are accounted when sent; they land in the windows when the
    queue is flushed.
    """
    payload = mode.encode(value)
    for dst in sorted(neighbors):
        msg = Message(src=src, dst=dst, block_id=block_id, payload=payload, sent_iter=k)
        stats.record(msg)
        queue.stage(msg)
    logger.debug("PE %d block %d broadcast at k=%d to %s", src, block_id, k, list(neighbors))
    return len(neighbors)


def message_percentage(event_stats: CommStats, regular_stats: CommStats) -> float:
    """100 * event messages / regular messages."""
    if regular_stats.messages_sent == 0:
        raise CommError("regular run sent no messages; percentage undefined")
    return 100.0 * event_stats.messages_sent / regular_stats.messages_sent


def volume_percentage(event_stats: CommStats, regular_stats: CommStats) -> float:
    if regular_stats.scalar_volume == 0:
        raise CommError("regular run sent no data; percentage undefined")
    return 100.0 * event_stats.scalar_volume / regular_stats.scalar_volume
