import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from softnce import backend
from softnce.errors import DimensionMismatch, MisalignedWeights, ShapeMismatch
from softnce.kernels import softnce_rows, topk_rows
from softnce.losses import pattern_betas


def topk_oracle(row, k):
    """Full stable sort by (-value, index)."""
    return np.argsort(-row, kind="stable")[:k]


def softnce_oracle(sim_pos, sim_negs, topk_idx, betas, alpha, tau):
    """Scalar-python reference for one batch, double precision."""
    b, n = sim_negs.shape
    loss = np.zeros(b)
    gpos = np.zeros(b)
    gneg = np.zeros((b, n))
    for i in range(b):
        z = np.concatenate(([sim_pos[i]], sim_negs[i])) / tau
        w = np.zeros(n + 1)
        w[0] = alpha
        for j, idx in enumerate(topk_idx[i]):
            w[idx + 1] = betas[j]
        m = z.max()
        p = np.exp(z - m)
        p /= p.sum()
        lse = m + math.log(np.exp(z - m).sum())
        loss[i] = float(np.dot(w, lse - z))
        g = (p - w) / tau
        gpos[i] = g[0]
        gneg[i] = g[1:]
    return loss, gpos, gneg


class TestTopK:
    @given(st.integers(0, 2**31), st.integers(1, 12), st.integers(1, 40))
    def test_matches_full_sort(self, seed, rows, n):
        rng = np.random.default_rng(seed)
        sims = rng.standard_normal((rows, n))
        k = int(rng.integers(1, n + 1))
        for name in ("numpy",) + (("numba",) if backend.HAS_NUMBA else ()):
            got = topk_rows(sims, k, backend_name=name)
            for i in range(rows):
                assert np.array_equal(got[i], topk_oracle(sims[i], k)), (name, i)

    def test_tie_break_prefers_lowest_index(self, backend_name):
        sims = np.array([[1.0, 3.0, 3.0, 2.0, 3.0]])
        assert np.array_equal(topk_rows(sims, 3, backend_name=backend_name),
                              [[1, 2, 4]])
        assert np.array_equal(topk_rows(sims, 2, backend_name=backend_name),
                              [[1, 2]])
        assert np.array_equal(topk_rows(sims, 5, backend_name=backend_name),
                              [[1, 2, 4, 3, 0]])

    def test_all_equal_values(self, backend_name):
        sims = np.full((2, 6), 0.5)
        got = topk_rows(sims, 4, backend_name=backend_name)
        assert np.array_equal(got, [[0, 1, 2, 3]] * 2)

    def test_k_clamped_to_width(self, backend_name):
        sims = np.array([[3.0, 1.0, 2.0]])
        got = topk_rows(sims, 10, backend_name=backend_name)
        assert np.array_equal(got, [[0, 2, 1]])

    def test_k_one_is_argmax(self, backend_name, rng):
        sims = rng.standard_normal((20, 33))
        got = topk_rows(sims, 1, backend_name=backend_name)
        assert np.array_equal(got[:, 0], np.argmax(sims, axis=1))

    def test_rejects_bad_rank_and_k(self):
        with pytest.raises(DimensionMismatch):
            topk_rows(np.zeros(5), 2)
        with pytest.raises(Exception):
            topk_rows(np.zeros((2, 5)), 0)


class TestSoftnceRows:
    def test_matches_scalar_oracle(self, backend_name, rng):
        for trial in range(20):
            b, n = int(rng.integers(1, 9)), int(rng.integers(2, 40))
            k = int(rng.integers(1, n + 1))
            alpha = float(rng.uniform(0.5, 1.0))
            tau = float(rng.uniform(0.05, 1.0))
            sims = rng.standard_normal((b, n))
            pos = rng.standard_normal(b)
            betas = pattern_betas("linear_decay" if trial % 2 else "average",
                                  k, alpha)
            idx = topk_rows(sims, k, backend_name=backend_name)
            loss, gp, gn = softnce_rows(pos, sims, idx, betas, alpha, tau,
                                        backend_name=backend_name)
            oloss, ogp, ogn = softnce_oracle(pos, sims, idx, betas, alpha, tau)
            assert np.allclose(loss, oloss, atol=1e-12)
            assert np.allclose(gp, ogp, atol=1e-12)
            assert np.allclose(gn, ogn, atol=1e-12)

    @pytest.mark.skipif(not backend.HAS_NUMBA, reason="numba not installed")
    def test_backends_agree(self, rng):
        for dtype, tol in ((np.float64, 1e-12), (np.float32, 2e-4)):
            sims = rng.standard_normal((16, 257)).astype(dtype)
            pos = rng.standard_normal(16).astype(dtype)
            betas = pattern_betas("linear_decay", 20, 0.8)
            i1 = topk_rows(sims, 20, backend_name="numpy")
            i2 = topk_rows(sims, 20, backend_name="numba")
            assert np.array_equal(i1, i2)
            r1 = softnce_rows(pos, sims, i1, betas, 0.8, 0.1, backend_name="numpy")
            r2 = softnce_rows(pos, sims, i2, betas, 0.8, 0.1, backend_name="numba")
            for a, b in zip(r1, r2):
                assert a.dtype == b.dtype == dtype
                assert np.max(np.abs(a.astype(np.float64) - b.astype(np.float64))) <= tol

    def test_output_dtype_follows_input(self, backend_name):
        sims = np.random.default_rng(0).standard_normal((4, 30)).astype(np.float32)
        pos = sims[:, 0].copy()
        idx = topk_rows(sims, 5, backend_name=backend_name)
        betas = pattern_betas("average", 5, 0.8)
        loss, gp, gn = softnce_rows(pos, sims, idx, betas, 0.8, 0.1,
                                    backend_name=backend_name)
        assert loss.dtype == gp.dtype == gn.dtype == np.float32

    def test_misaligned_betas_rejected(self, backend_name):
        sims = np.zeros((2, 10))
        idx = topk_rows(sims, 4, backend_name=backend_name)
        with pytest.raises((MisalignedWeights, ShapeMismatch)):
            softnce_rows(np.zeros(2), sims, idx, np.zeros(3), 0.8, 0.1,
                         backend_name=backend_name)


class TestBackendSelection:
    def test_resolve_and_env(self, monkeypatch):
        monkeypatch.setenv(backend.ENV_VAR, "numpy")
        assert backend.resolve(None) == "numpy"
        assert backend.resolve("numpy") == "numpy"
        with pytest.raises(Exception):
            backend.resolve("cuda")

    def test_set_backend_roundtrip(self):
        before = backend.active_backend()
        try:
            backend.set_backend("numpy")
            assert backend.active_backend() == "numpy"
        finally:
            backend.set_backend(before)
