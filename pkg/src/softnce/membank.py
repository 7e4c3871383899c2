"""FIFO memory queue of key embeddings used as negatives.

A ring buffer of unit-norm rows.  `snapshot()` exposes the contents in
FIFO order (row 0 is the oldest survivor), which is the index order the
loss's tie rule and beta weights refer to.  The training loop takes one
snapshot per step before enqueueing that step's keys, so a step never
scores against its own keys.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    BatchTooLarge,
    DimensionMismatch,
    EmptyQueue,
    NotUnitNorm,
)
from .tensorcore import Rng, as_array

_NORM_TOL = 1e-4


@dataclass
class NegativeQueue:
    """Fixed-capacity FIFO bank of unit-norm embeddings.

    slots is the raw ring storage; head is the next insertion position;
    filled counts stored rows.  Use snapshot()/enqueue(), not slots,
    unless you are the checkpoint codec.
    """

    capacity: int
    dim: int
    dtype: np.dtype = np.float32
    slots: np.ndarray = field(default=None)
    head: int = 0
    filled: int = 0

    def __post_init__(self):
        if self.capacity < 1 or self.dim < 1:
            raise ValueError("queue needs capacity >= 1 and dim >= 1")
        if self.slots is None:
            self.slots = np.zeros((self.capacity, self.dim), dtype=self.dtype)
        self.dtype = self.slots.dtype

    def prefill(self, rng: Rng):
        """Fill every slot with an independent random unit vector.

        Run once before training so the first steps already see a full
        bank of well-defined negatives.
        """
        g = rng.stream("queue-prefill").standard_normal((self.capacity, self.dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        self.slots[:] = g.astype(self.dtype)
        self.head = 0
        self.filled = self.capacity

    def snapshot(self) -> np.ndarray:
        """Copy of the stored rows in FIFO order: row 0 is the oldest."""
        if self.filled < self.capacity:
            return self.slots[: self.filled].copy()
        if self.head == 0:
            return self.slots.copy()
        return np.concatenate([self.slots[self.head:], self.slots[: self.head]])


def enqueue(queue: NegativeQueue, key_batch) -> NegativeQueue:
    """Append key rows, evicting the oldest entries once full.

    Rows must be unit-norm within 1e-4.  Mutates and returns the queue.
    """
    batch = as_array(key_batch)
    if batch.ndim != 2 or batch.shape[1] != queue.dim:
        raise DimensionMismatch(
            f"key batch shape {batch.shape} does not fit queue dim {queue.dim}"
        )
    n = batch.shape[0]
    if n > queue.capacity:
        raise BatchTooLarge(f"batch of {n} exceeds capacity {queue.capacity}")
    norms = np.linalg.norm(batch, axis=1)
    off = np.abs(norms - 1.0) > _NORM_TOL
    if off.any():
        i = int(np.flatnonzero(off)[0])
        raise NotUnitNorm(f"key row {i} has norm {norms[i]:.6f}")
    batch = batch.astype(queue.dtype, copy=False)
    end = queue.head + n
    if end <= queue.capacity:
        queue.slots[queue.head:end] = batch
    else:
        first = queue.capacity - queue.head
        queue.slots[queue.head:] = batch[:first]
        queue.slots[: end - queue.capacity] = batch[first:]
    queue.head = end % queue.capacity
    queue.filled = min(queue.capacity, queue.filled + n)
    return queue


def all_similarities(queue: NegativeQueue, query_batch) -> np.ndarray:
    """Row i holds query i's dot products against every stored negative.

    Columns follow snapshot order, the same indexing beta_weights ranks.
    """
    if queue.filled == 0:
        raise EmptyQueue("queue holds no negatives")
    q = as_array(query_batch)
    if q.shape[1] != queue.dim:
        raise DimensionMismatch(f"query dim {q.shape[1]} vs queue dim {queue.dim}")
    return q @ queue.snapshot().T


def top_k_similar(queue: NegativeQueue, query, k: int):
    """The min(k, filled) most similar stored negatives for one query.

    Returns (indices, similarities), descending; indices refer to snapshot
    order, and ties go to the lower index (the older entry).  Linear-time
    selection, no full sort.
    """
    if queue.filled == 0:
        raise EmptyQueue("queue holds no negatives")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query)
    if q.ndim != 1 or q.shape[0] != queue.dim:
        raise DimensionMismatch(f"query shape {q.shape} vs queue dim {queue.dim}")
    sims = (queue.snapshot() @ q)[None, :]
    idx = kernels.topk_rows(sims, min(k, queue.filled))[0]
    return idx, sims[0, idx]
