"""CRF refinement and majority filtering."""

import numpy as np
import pytest

from capseg.consensus import ClusterProbabilityField
from capseg.denoise import (
    CrfParams,
    crf_refine,
    denoise,
    denoised_from_dict,
    denoised_to_dict,
    gaussian_taps,
    harden,
    majority_filter,
)
from capseg.errors import ValidationError


def field_from(probs):
    probs = np.asarray(probs, dtype=np.float64)
    h, w, n = probs.shape
    return ClusterProbabilityField(h, w, n, probs).validate()


def one_hot_field(labels, n_labels):
    labels = np.asarray(labels)
    probs = np.eye(n_labels)[labels]
    return field_from(probs)


# Frozen oracle: one mean-field iteration on this 2x2 field with the default
# parameters (weight 6, theta 0.8, unary floor 0.05), computed independently
# with plain Python loops and math.exp.
CRF_2X2_INPUT = [
    [[0.7, 0.3], [0.4, 0.6]],
    [[0.2, 0.8], [0.9, 0.1]],
]
CRF_2X2_AFTER_ONE_ITER = [
    [[0.8047020221291037, 0.19529797787089637], [0.5562328925753438, 0.44376710742465614]],
    [[0.16144719237695598, 0.838552807623044], [0.9748746026081079, 0.025125397391892203]],
]


class TestCrf:
    def test_zero_weight_is_bitexact_identity(self):
        rng = np.random.default_rng(0)
        probs = rng.random((5, 6, 3))
        probs /= probs.sum(axis=2, keepdims=True)
        f = field_from(probs)
        out = crf_refine(f, CrfParams(smoothness_weight=0.0))
        assert np.array_equal(out.probs, f.probs)
        assert out.probs is not f.probs

    def test_single_iteration_matches_hand_oracle(self):
        f = field_from(CRF_2X2_INPUT)
        out = crf_refine(f, CrfParams(n_iters=1))
        np.testing.assert_allclose(
            out.probs, np.asarray(CRF_2X2_AFTER_ONE_ITER), rtol=0, atol=1e-9
        )

    def test_every_iteration_preserves_normalization(self):
        rng = np.random.default_rng(1)
        probs = rng.random((7, 7, 4))
        probs /= probs.sum(axis=2, keepdims=True)
        f = field_from(probs)
        for n in range(1, 6):
            out = crf_refine(f, CrfParams(n_iters=n))
            sums = out.probs.sum(axis=2)
            assert np.abs(sums - 1.0).max() <= 1e-6

    def test_default_params_flip_interior_salt_noise(self):
        # two one-hot regions with isolated wrong-label patches well inside
        clean = np.zeros((12, 12), dtype=int)
        clean[:, 6:] = 1
        noisy = clean.copy()
        for r, c in [(4, 2), (8, 3), (5, 9), (9, 8)]:
            noisy[r, c] = 1 - noisy[r, c]
        f = one_hot_field(noisy, 2)
        out = crf_refine(f, CrfParams())
        assert np.array_equal(harden(out), clean)

    def test_taps_shape_and_symmetry(self):
        taps = gaussian_taps(0.8)
        assert taps.shape == (7, 7)  # radius ceil(2.4) = 3
        assert taps[3, 3] == 1.0
        assert np.array_equal(taps, taps[::-1, :])
        assert np.array_equal(taps, taps[:, ::-1])

    def test_bad_params_rejected(self):
        with pytest.raises(ValidationError):
            CrfParams(smoothness_weight=-1).validate()
        with pytest.raises(ValidationError):
            CrfParams(smoothness_theta=0).validate()
        with pytest.raises(ValidationError):
            CrfParams(n_iters=0).validate()


class TestHarden:
    def test_argmax_with_tie_to_lowest(self):
        f = field_from([[[0.5, 0.5], [0.2, 0.8]]])
        assert harden(f).tolist() == [[0, 1]]


class TestMajorityFilter:
    def test_uniform_field_converges_in_one_pass(self):
        labels = np.full((6, 6), 3, dtype=np.int32)
        out, iters, converged = majority_filter(labels, n_labels=4)
        assert np.array_equal(out, labels)
        assert iters == 1
        assert converged

    def test_salt_patch_removed(self):
        labels = np.zeros((7, 7), dtype=np.int32)
        labels[3, 3] = 1
        out, iters, converged = majority_filter(labels)
        assert np.all(out == 0)
        assert converged

    def test_never_introduces_new_label(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            labels = rng.integers(0, 4, size=(9, 9))
            out, _, _ = majority_filter(labels, n_labels=6)
            assert set(np.unique(out)) <= set(np.unique(labels))

    def test_alternating_stripes_hit_pass_cap(self):
        # width-1 stripes need 11 passes to settle on this grid, so the
        # default cap of 8 stops the filter early
        labels = np.zeros((20, 20), dtype=np.int32)
        labels[1::2, :] = 1
        out, iters, converged = majority_filter(labels)
        assert iters == 8
        assert not converged
        out2, iters2, converged2 = majority_filter(labels, max_iters=16)
        assert converged2
        assert iters2 == 11

    def test_tie_goes_to_lowest_label(self):
        # corner window on a 2x2 field holds all four patches: counts 2 vs 2
        labels = np.array([[1, 0], [0, 1]], dtype=np.int32)
        out, _, _ = majority_filter(labels, max_iters=1)
        assert np.all(out == 0)

    def test_fixed_point_after_convergence(self):
        from capseg.backend import majority_pass

        rng = np.random.default_rng(3)
        for _ in range(10):
            labels = rng.integers(0, 3, size=(8, 8))
            out, _, converged = majority_filter(labels, max_iters=64)
            assert converged
            again, changes = majority_pass(out, 3)
            assert changes == 0
            assert np.array_equal(again, out)

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValidationError):
            majority_filter(np.zeros(4, dtype=np.int32))
        with pytest.raises(ValidationError):
            majority_filter(np.full((2, 2), 9, dtype=np.int32), n_labels=3)
        with pytest.raises(ValidationError):
            majority_filter(np.zeros((2, 2), dtype=np.int32), max_iters=0)


class TestDenoise:
    def test_end_to_end_cleans_consensus_noise(self):
        clean = np.zeros((10, 10), dtype=int)
        clean[:, 5:] = 1
        probs = np.eye(2)[clean] * 0.75 + 0.25 / 2
        # a couple of patches where the ensemble disagreed hard
        probs[4, 2] = [0.25, 0.75]
        probs[7, 8] = [0.75, 0.25]
        g = denoise(field_from(probs))
        assert np.array_equal(g.labels, clean)
        assert g.majority_converged
        assert g.crf.smoothness_weight == 6.0

    def test_serialization_roundtrip(self):
        clean = np.zeros((4, 4), dtype=int)
        clean[2:, :] = 1
        g = denoise(one_hot_field(clean, 2))
        d = denoised_to_dict(g)
        back = denoised_from_dict(d)
        assert np.array_equal(back.labels, g.labels)
        assert back.crf == g.crf
        assert back.majority_iters == g.majority_iters
        assert back.majority_converged == g.majority_converged

    def test_bad_record_rejected(self):
        with pytest.raises(ValidationError):
            denoised_from_dict({"height": 2})
