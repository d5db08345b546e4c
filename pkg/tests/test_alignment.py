"""Attention maps and pooled scores for single-pair alignment."""
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tempalign.alignment import (
    FusionConfig,
    align,
    fused_score,
    kernel_attention,
    pooled_scores,
    similarity_matrix,
    softmax,
    temporal_attention,
)
from tempalign.errors import DataError, DegenerateInput, DimensionMismatch
from tempalign.framing import FrameTensor, kernel_params, unfold

finite_matrices = arrays(
    np.float64,
    st.tuples(st.integers(1, 16), st.integers(1, 16)),
    elements=st.floats(-50, 50),
)


def make_frames(rng, seq_len=60, dim=6, kernel_secs=9.0, stride_secs=6.0):
    seq = rng.normal(size=(seq_len, dim))
    return unfold(seq, kernel_params(seq_len, kernel_secs, stride_secs))


class TestSoftmax:
    def test_two_point_hand_value(self):
        out = softmax(np.array([1.0, 0.0]), axis=0)
        np.testing.assert_allclose(
            out, [0.7310585786300049, 0.2689414213699951], rtol=0, atol=1e-15
        )

    def test_shift_invariance(self, rng):
        # not bit-exact: x + c rounds before the max subtraction
        x = rng.normal(size=(5, 7))
        np.testing.assert_allclose(softmax(x, axis=1), softmax(x + 3.25, axis=1), rtol=1e-12)

    def test_large_magnitudes_stay_finite(self):
        out = softmax(np.array([1000.0, 0.0, -1000.0]), axis=0)
        assert np.isfinite(out).all()
        assert out.sum() == pytest.approx(1.0)


class TestAttentionNormalization:
    @given(finite_matrices)
    def test_kernel_rows_and_temporal_columns_are_stochastic(self, m):
        np.testing.assert_allclose(kernel_attention(m).sum(axis=1), 1.0, rtol=0, atol=1e-12)
        np.testing.assert_allclose(temporal_attention(m).sum(axis=0), 1.0, rtol=0, atol=1e-12)

    @given(finite_matrices)
    def test_transpose_duality_bit_exact(self, m):
        assert np.array_equal(temporal_attention(m), kernel_attention(m.T).T)

    def test_many_random_matrices(self, rng):
        for _ in range(1000):
            w, h = rng.integers(1, 65, size=2)
            m = rng.normal(size=(w, h)) * 10
            assert np.abs(kernel_attention(m).sum(axis=1) - 1.0).max() < 1e-12
            assert np.abs(temporal_attention(m).sum(axis=0) - 1.0).max() < 1e-12


class TestSimilarityMatrix:
    def test_cosine_against_per_slot_loop(self, rng):
        frames = make_frames(rng)
        text = rng.normal(size=6)
        sim = similarity_matrix(frames, text)
        tn = text / np.linalg.norm(text)
        for v in range(frames.num_frames):
            for h in range(frames.kernel_size):
                u = frames.frames[v, h]
                want = float(u @ tn / np.linalg.norm(u))
                assert sim[v, h] == pytest.approx(want, rel=1e-12)

    def test_unnormalized_is_raw_dot(self, rng):
        frames = make_frames(rng)
        text = rng.normal(size=6)
        sim = similarity_matrix(frames, text, normalize=False)
        want = np.einsum("whd,d->wh", frames.frames, text)
        np.testing.assert_allclose(sim, want, rtol=0, atol=0)

    def test_zero_slot_scores_zero(self):
        p = kernel_params(40, 9.0, 6.0)
        seq = np.ones((40, 3))
        seq[0] = 0.0  # lands in frame 0, slot 0
        sim = similarity_matrix(unfold(seq, p), np.ones(3))
        assert sim[0, 0] == 0.0
        assert sim[1, 1] == pytest.approx(1.0)

    def test_zero_text_rejected(self, rng):
        with pytest.raises(DegenerateInput):
            similarity_matrix(make_frames(rng), np.zeros(6))

    def test_dim_mismatch_rejected(self, rng):
        with pytest.raises(DimensionMismatch):
            similarity_matrix(make_frames(rng, dim=6), np.ones(7))


class TestPooledScores:
    def test_hand_computed_two_by_two(self):
        # sim [[1,0],[1,1]]: kernel rows softmax to (e/(e+1), 1/(e+1)) and
        # (1/2, 1/2); temporal columns to (1/2, 1/2) and (1/(e+1), e/(e+1)).
        m = np.array([[1.0, 0.0], [1.0, 1.0]])
        r_k, r_t = pooled_scores(m, kernel_attention(m), temporal_attention(m), 2, 2)
        assert r_k == pytest.approx(0.86552928931500245, abs=1e-15)
        assert r_t == pytest.approx(0.86552928931500245, abs=1e-15)

    def test_all_aligned_square_case_scores_one(self):
        m = np.ones((4, 4))
        r_k, r_t = pooled_scores(m, kernel_attention(m), temporal_attention(m), 4, 4)
        assert r_k == pytest.approx(1.0, abs=1e-12)
        assert r_t == pytest.approx(1.0, abs=1e-12)

    def test_kernel_pool_scales_with_frame_count(self):
        # constant 1 similarities: r_K = W/H, r_T = H/W by the asymmetric
        # normalisation
        m = np.ones((6, 2))
        r_k, r_t = pooled_scores(m, kernel_attention(m), temporal_attention(m), 2, 6)
        assert r_k == pytest.approx(3.0, rel=1e-12)
        assert r_t == pytest.approx(1.0 / 3.0, rel=1e-12)

    @given(finite_matrices, st.floats(-5, 5))
    def test_constant_shift_covariance(self, m, c):
        w, h = m.shape
        a_k, a_t = kernel_attention(m), temporal_attention(m)
        r_k, r_t = pooled_scores(m, a_k, a_t, h, w)
        r_k2, r_t2 = pooled_scores(m + c, kernel_attention(m + c), temporal_attention(m + c), h, w)
        assert r_k2 == pytest.approx(r_k + c * w / h, rel=1e-9, abs=1e-9)
        assert r_t2 == pytest.approx(r_t + c * h / w, rel=1e-9, abs=1e-9)

    @given(finite_matrices)
    def test_frame_permutation_invariance(self, m):
        perm = np.roll(np.arange(m.shape[0]), 1)
        mp = m[perm]
        r = pooled_scores(m, kernel_attention(m), temporal_attention(m), m.shape[1], m.shape[0])
        rp = pooled_scores(mp, kernel_attention(mp), temporal_attention(mp), m.shape[1], m.shape[0])
        assert rp[0] == pytest.approx(r[0], rel=1e-10, abs=1e-12)
        assert rp[1] == pytest.approx(r[1], rel=1e-10, abs=1e-12)


class TestFusedScore:
    def test_weighted_average_and_temperature(self):
        cfg = FusionConfig(kernel_weight=0.7, temporal_weight=0.3, temperature=2.0)
        assert fused_score(1.0, -1.0, cfg) == pytest.approx((0.7 - 0.3) / 2.0)

    def test_temperature_equivalent_to_scaled_weights(self, rng):
        frames = make_frames(rng)
        text = rng.normal(size=6)
        tau = 2.5
        a = align(frames, text, FusionConfig(0.5, 0.5, True, tau)).fused
        b = align(frames, text, FusionConfig(0.5 / tau, 0.5 / tau, True, 1.0)).fused
        assert a == pytest.approx(b, rel=1e-10)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(DataError):
            FusionConfig(temperature=0.0)

    def test_align_bundles_consistent_intermediates(self, rng):
        frames = make_frames(rng)
        text = rng.normal(size=6)
        cfg = FusionConfig()
        res = align(frames, text, cfg)
        np.testing.assert_array_equal(res.sim, similarity_matrix(frames, text))
        r_k, r_t = pooled_scores(
            res.sim, res.kernel_attn, res.temporal_attn, frames.kernel_size, frames.num_frames
        )
        assert res.kernel_score == r_k and res.temporal_score == r_t
        assert res.fused == fused_score(r_k, r_t, cfg)
