import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from softnce.errors import (
    DimensionMismatch,
    InvalidTemperature,
    NumericFailure,
    ZeroVector,
)
from softnce.tensorcore import (
    Matrix,
    Rng,
    as_array,
    cosine_sim_matrix,
    l2_normalize,
    l2_normalize_rows,
    softmax_temp,
)

finite_rows = hnp.arrays(
    np.float64, hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=8),
    elements=st.floats(-10, 10, allow_nan=False),
)


class TestMatrix:
    def test_coerces_to_float64(self):
        m = Matrix(np.array([[1, 2], [3, 4]], dtype=np.int64))
        assert m.data.dtype == np.float64
        assert m.rows == 2 and m.cols == 2

    def test_keeps_float32(self):
        m = Matrix(np.zeros((3, 4), dtype=np.float32))
        assert m.data.dtype == np.float32
        assert m.precision == "single"

    def test_rejects_1d(self):
        with pytest.raises(Exception):
            Matrix(np.zeros(3))

    def test_rejects_nonfinite_when_checked(self):
        bad = np.array([[1.0, np.nan]])
        with pytest.raises(NumericFailure):
            Matrix(bad)
        Matrix(bad, check=False)  # unchecked path must not raise

    def test_as_array_passthrough(self):
        x = np.zeros((2, 2))
        assert as_array(Matrix(x)) is not None
        assert as_array(x) is x


class TestNormalize:
    @given(hnp.arrays(np.float64, st.integers(1, 16),
                      elements=st.floats(-100, 100, allow_nan=False)))
    def test_unit_norm(self, v):
        if np.linalg.norm(v) <= 1e-12:
            with pytest.raises(ZeroVector):
                l2_normalize(v)
        else:
            out = l2_normalize(v)
            assert math.isclose(float(np.linalg.norm(out)), 1.0, rel_tol=1e-12)

    def test_zero_vector_raises(self):
        with pytest.raises(ZeroVector):
            l2_normalize(np.zeros(4))

    @given(finite_rows)
    def test_rows_unit_norm(self, m):
        norms = np.linalg.norm(m, axis=1)
        if np.any(norms <= 1e-12):
            with pytest.raises(ZeroVector):
                l2_normalize_rows(m)
        else:
            out = l2_normalize_rows(m)
            assert np.allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)

    def test_bad_row_named(self):
        m = np.ones((4, 3))
        m[2] = 0.0
        with pytest.raises(ZeroVector, match="2"):
            l2_normalize_rows(m)


class TestSoftmax:
    def test_matches_sigmoid_identity(self):
        # softmax([1, 0], tau=1)[0] is the logistic function at 1
        out = softmax_temp(np.array([1.0, 0.0]), 1.0)
        assert abs(out[0] - 0.73105857863000487925) < 1e-15
        assert abs(out.sum() - 1.0) < 1e-15

    def test_equal_logits_uniform(self):
        out = softmax_temp(np.full(8, 3.7), 0.5)
        assert np.allclose(out, 1.0 / 8, atol=1e-15)

    def test_stable_for_huge_logits(self):
        out = softmax_temp(np.array([1000.0, 1000.0]), 1.0)
        assert np.allclose(out, 0.5, atol=1e-15)

    @given(hnp.arrays(np.float64, st.integers(2, 12),
                      elements=st.floats(-5, 5, allow_nan=False)),
           st.floats(0.01, 2.0))
    def test_simplex_and_sharpening(self, z, tau):
        p = softmax_temp(z, tau)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p >= 0)
        sharper = softmax_temp(z, tau / 2)
        assert sharper.max() >= p.max() - 1e-12

    @pytest.mark.parametrize("tau", [0.0, -0.1])
    def test_bad_temperature(self, tau):
        with pytest.raises(InvalidTemperature):
            softmax_temp(np.array([1.0, 2.0]), tau)


class TestCosineSim:
    def test_matches_manual(self, rng):
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((3, 7))
        sims = cosine_sim_matrix(l2_normalize_rows(a), l2_normalize_rows(b))
        an = a / np.linalg.norm(a, axis=1, keepdims=True)
        bn = b / np.linalg.norm(b, axis=1, keepdims=True)
        assert np.allclose(sims, an @ bn.T, atol=1e-12)
        assert sims.max() <= 1.0 + 1e-12 and sims.min() >= -1.0 - 1e-12

    def test_dim_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_sim_matrix(np.ones((2, 3)), np.ones((2, 4)))


class TestRng:
    def test_streams_repeatable_and_distinct(self):
        r = Rng(7)
        a = r.stream("x", 1).standard_normal(5)
        b = r.stream("x", 1).standard_normal(5)
        c = r.stream("x", 2).standard_normal(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_stream_isolated_from_draw_order(self):
        # drawing from one stream must not advance a sibling
        r = Rng(3)
        r.stream("a").standard_normal(1000)
        fresh = Rng(3).stream("b").standard_normal(4)
        after = r.stream("b").standard_normal(4)
        assert np.array_equal(fresh, after)

    def test_known_values(self):
        # counter-based generator keyed by (seed, tag hash): these values
        # pin cross-platform determinism of every derived stream
        got = Rng(0).stream("x").standard_normal(3)
        want = np.array([1.4211030559089672, -0.844707357978826,
                         -1.0722574538023297])
        assert np.array_equal(got, want)
        got2 = Rng(0).stream("x", 1).standard_normal(3)
        want2 = np.array([0.5852370201953101, -0.9038101751181198,
                          -0.52143723185275])
        assert np.array_equal(got2, want2)

    def test_seed_changes_streams(self):
        a = Rng(0).stream("x").standard_normal(4)
        b = Rng(1).stream("x").standard_normal(4)
        assert not np.array_equal(a, b)
