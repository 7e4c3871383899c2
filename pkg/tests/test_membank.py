from collections import deque

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softnce.errors import (
    BatchTooLarge,
    DimensionMismatch,
    EmptyQueue,
    NotUnitNorm,
)
from softnce.membank import NegativeQueue, all_similarities, enqueue, top_k_similar
from softnce.tensorcore import Rng, l2_normalize_rows


def unit_batch(rng, n, d):
    return l2_normalize_rows(rng.standard_normal((n, d)))


class TestFifo:
    @given(st.integers(0, 2**31), st.integers(1, 12),
           st.lists(st.integers(1, 8), min_size=0, max_size=20))
    def test_snapshot_matches_deque_oracle(self, seed, capacity, batch_sizes):
        rng = np.random.default_rng(seed)
        d = 4
        queue = NegativeQueue(capacity=capacity, dim=d, dtype=np.float64)
        oracle = deque(maxlen=capacity)
        for n in batch_sizes:
            n = min(n, capacity)
            batch = unit_batch(rng, n, d)
            enqueue(queue, batch)
            oracle.extend(batch)
            snap = queue.snapshot()
            assert snap.shape == (len(oracle), d)
            assert np.array_equal(snap, np.array(oracle))

    def test_oldest_first_order(self, rng):
        queue = NegativeQueue(capacity=3, dim=2, dtype=np.float64)
        rows = np.eye(2)[[0, 1, 0, 1]] * 1.0
        for i in range(4):
            enqueue(queue, rows[i:i + 1])
        snap = queue.snapshot()
        assert np.array_equal(snap, rows[1:4])

    def test_filled_saturates(self, rng):
        queue = NegativeQueue(capacity=5, dim=3, dtype=np.float64)
        for _ in range(4):
            enqueue(queue, unit_batch(rng, 3, 3))
        assert queue.filled == 5
        assert queue.snapshot().shape == (5, 3)

    def test_prefill_unit_rows(self):
        queue = NegativeQueue(capacity=16, dim=6, dtype=np.float32)
        queue.prefill(Rng(0))
        assert queue.filled == 16
        norms = np.linalg.norm(queue.snapshot().astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-6)

    def test_prefill_deterministic(self):
        a = NegativeQueue(capacity=8, dim=4, dtype=np.float32)
        b = NegativeQueue(capacity=8, dim=4, dtype=np.float32)
        a.prefill(Rng(3))
        b.prefill(Rng(3))
        assert np.array_equal(a.snapshot(), b.snapshot())


class TestEnqueueValidation:
    def test_batch_larger_than_capacity(self, rng):
        queue = NegativeQueue(capacity=4, dim=3, dtype=np.float64)
        with pytest.raises(BatchTooLarge):
            enqueue(queue, unit_batch(rng, 5, 3))

    def test_dim_mismatch(self, rng):
        queue = NegativeQueue(capacity=4, dim=3, dtype=np.float64)
        with pytest.raises(DimensionMismatch):
            enqueue(queue, unit_batch(rng, 2, 5))

    def test_not_unit_norm(self, rng):
        queue = NegativeQueue(capacity=4, dim=3, dtype=np.float64)
        with pytest.raises(NotUnitNorm):
            enqueue(queue, rng.standard_normal((2, 3)) * 3.0)


class TestSimilarities:
    def test_empty_queue_rejected(self, rng):
        queue = NegativeQueue(capacity=4, dim=3, dtype=np.float64)
        with pytest.raises(EmptyQueue):
            all_similarities(queue, unit_batch(rng, 2, 3))

    def test_matches_matmul(self, rng):
        queue = NegativeQueue(capacity=8, dim=5, dtype=np.float64)
        enqueue(queue, unit_batch(rng, 6, 5))
        q = unit_batch(rng, 3, 5)
        sims = all_similarities(queue, q)
        assert np.allclose(sims, q @ queue.snapshot().T, atol=0)

    def test_top_k_matches_full_sort(self, rng):
        queue = NegativeQueue(capacity=32, dim=4, dtype=np.float64)
        queue.prefill(Rng(9))
        q = unit_batch(rng, 1, 4)[0]
        idx, sims = top_k_similar(queue, q, k=7)
        ref = np.argsort(-(queue.snapshot() @ q), kind="stable")[:7]
        assert np.array_equal(idx, ref)
        assert np.allclose(sims, (queue.snapshot() @ q)[ref], atol=0)
