"""Reference selection, cluster alignment, and probability fusion."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capseg.clustering import ClusterAssignment, RunMeta, kmeans
from capseg.consensus import (
    AlignmentMap,
    ClusterProbabilityField,
    align,
    apply_alignment,
    consensus_field,
    field_from_dict,
    field_to_dict,
    fuse,
    select_reference,
)
from capseg.embedding_grid import PatchEmbeddingGrid
from capseg.errors import ValidationError

from oracles import argmax_lowest, best_injective_total, exact_iou_table


def assignment(labels, tag="t", k=None, seed=0):
    labels = np.asarray(labels, dtype=np.int32)
    k = k if k is not None else int(labels.max()) + 1
    return ClusterAssignment(
        height=labels.shape[0],
        width=labels.shape[1],
        k_effective=k,
        run_meta=RunMeta(tag, k, seed),
        labels=labels,
    ).validate()


def random_partition(rng, h, w, max_k):
    """Random label grid guaranteed to use labels 0..k-1 contiguously."""
    while True:
        k = int(rng.integers(1, max_k + 1))
        labels = rng.integers(0, k, size=(h, w))
        present = np.unique(labels)
        if len(present) == k:
            return labels
        # compact to the present set so the assignment invariant holds
        lut = np.full(k, -1)
        lut[present] = np.arange(len(present))
        return lut[labels]


class TestSelectReference:
    def test_argmax_k_effective(self):
        runs = [
            assignment([[0, 1], [1, 0]]),
            assignment([[0, 1], [2, 3]]),
            assignment([[0, 0], [0, 0]]),
        ]
        assert select_reference(runs) == 1

    def test_tie_goes_to_earliest(self):
        runs = [
            assignment([[0, 1], [1, 0]]),
            assignment([[0, 0], [1, 1]]),
        ]
        assert select_reference(runs) == 0

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            select_reference([])


class TestAlign:
    def test_identity(self):
        a = assignment([[0, 1, 2], [0, 1, 2]])
        amap = align(a, a)
        assert np.array_equal(amap.targets, [0, 1, 2])
        assert amap.one_to_one.all()

    def test_permutation_recovered(self):
        ref_labels = np.array([[0, 0, 1], [2, 2, 1]])
        sigma = np.array([2, 0, 1])  # ref label i is called sigma[i] in the run
        other = assignment(sigma[ref_labels])
        ref = assignment(ref_labels)
        amap = align(ref, other)
        assert amap.one_to_one.all()
        assert np.array_equal(apply_alignment(other, amap), ref_labels)

    def test_zero_iou_match_rerouted_to_argmax(self):
        # ref: 6 patches of class 0, 1 of class 1, 3 of class 2
        ref = assignment([[0, 0, 0, 0, 0, 0, 1, 2, 2, 2]])
        # src: two clusters inside ref 0, one covering ref 1 and ref 2
        src = assignment([[0, 0, 1, 1, 1, 1, 2, 2, 2, 2]])
        # exact IoUs: s0 -> [2/6, 0, 0]; s1 -> [4/6, 0, 0]; s2 -> [0, 1/4, 3/4]
        # unique optimum matches s1->r0 and s2->r2, leaving s0 a zero match,
        # so s0 falls through to its row argmax, r0 (many-to-one)
        amap = align(ref, src)
        assert np.array_equal(amap.targets, [0, 0, 2])
        assert list(amap.one_to_one) == [False, True, True]

    def test_surplus_clusters_use_argmax(self):
        # run has more clusters than the reference
        ref = assignment([[0, 0, 0, 0, 1, 1, 1, 1]])
        src = assignment([[0, 0, 1, 1, 2, 2, 3, 3]])
        amap = align(ref, src)
        assert sorted(amap.targets[amap.one_to_one]) in ([0, 1], [0, 1])
        # every source sits inside one reference cluster, so argmax is exact
        assert np.array_equal(amap.targets, [0, 0, 1, 1])

    def test_targets_within_reference_range(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            ref = assignment(random_partition(rng, 6, 6, 5))
            src = assignment(random_partition(rng, 6, 6, 5))
            amap = align(ref, src)
            assert amap.targets.min() >= 0
            assert amap.targets.max() < ref.k_effective

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            h, w = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            ref = assignment(random_partition(rng, h, w, 6))
            src = assignment(random_partition(rng, h, w, 6))
            amap = align(ref, src)
            table = exact_iou_table(src.labels, src.k_effective, ref.labels, ref.k_effective)
            retained = sum(
                (table[i][int(amap.targets[i])] for i in np.flatnonzero(amap.one_to_one)),
                Fraction(0),
            )
            assert retained == best_injective_total(table)
            for i in np.flatnonzero(~amap.one_to_one):
                assert int(amap.targets[i]) == argmax_lowest(table[i])

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="resample"):
            align(assignment([[0, 1]]), assignment([[0], [1]]))


class TestFuse:
    def test_hand_computed_example(self):
        fields = [
            np.array([[0, 1], [0, 1]]),
            np.array([[0, 1], [1, 1]]),
            np.array([[0, 0], [0, 1]]),
            np.array([[1, 1], [0, 1]]),
        ]
        out = fuse(fields, 2)
        expected = np.array(
            [
                [[0.75, 0.25], [0.25, 0.75]],
                [[0.75, 0.25], [0.0, 1.0]],
            ]
        )
        assert np.array_equal(out.probs, expected)

    def test_exact_rational_values(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            m = int(rng.integers(1, 7))
            n_labels = int(rng.integers(1, 5))
            fields = [rng.integers(0, n_labels, size=(3, 4)) for _ in range(m)]
            out = fuse(fields, n_labels)
            for r in range(3):
                for c in range(4):
                    for lab in range(n_labels):
                        count = sum(int(f[r, c]) == lab for f in fields)
                        assert out.probs[r, c, lab] == count / m

    @settings(max_examples=100, deadline=None, derandomize=True)
    @given(st.permutations(list(range(5))))
    def test_run_order_invariance(self, order):
        rng = np.random.default_rng(3)
        fields = [rng.integers(0, 3, size=(4, 4)) for _ in range(5)]
        base = fuse(fields, 3)
        shuffled = fuse([fields[i] for i in order], 3)
        assert np.array_equal(base.probs, shuffled.probs)

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValidationError):
            fuse([], 2)
        with pytest.raises(ValidationError):
            fuse([np.zeros((2, 2), dtype=int), np.zeros((2, 3), dtype=int)], 2)
        with pytest.raises(ValidationError):
            fuse([np.full((2, 2), 5)], 2)


class TestProbabilityField:
    def test_validation(self):
        good = ClusterProbabilityField(1, 2, 2, np.array([[[0.5, 0.5], [1.0, 0.0]]]))
        good.validate()
        with pytest.raises(ValidationError, match="sum"):
            ClusterProbabilityField(1, 1, 2, np.array([[[0.6, 0.6]]])).validate()
        with pytest.raises(ValidationError, match="non-negative"):
            ClusterProbabilityField(1, 1, 2, np.array([[[1.5, -0.5]]])).validate()
        with pytest.raises(ValidationError, match="shape"):
            ClusterProbabilityField(2, 1, 2, np.array([[[0.5, 0.5]]])).validate()

    def test_serialization_roundtrip(self):
        fields = [np.array([[0, 1], [2, 0]]), np.array([[0, 1], [1, 0]])]
        f = fuse(fields, 3)
        d = field_to_dict(f)
        assert set(d) == {"height", "width", "n_labels", "probs"}
        back = field_from_dict(d)
        assert np.array_equal(back.probs, f.probs)


class TestConsensusField:
    def grids(self):
        """Two resolutions of the same two-region image, mild jitter."""
        out = {}
        rng = np.random.default_rng(4)
        for tag, side in (("default_384", 6), ("large_512", 8)):
            data = np.zeros((side, side, 3))
            data[:, side // 2 :, :] = 5.0
            data += rng.normal(scale=0.05, size=data.shape)
            out[tag] = PatchEmbeddingGrid(side, side, 3, data, tag).validate()
        return out

    def test_fused_field_recovers_structure(self):
        grids = self.grids()
        runs = [
            kmeans(grids["default_384"], 2, seed=0),
            kmeans(grids["large_512"], 2, seed=0),
            kmeans(grids["large_512"], 3, seed=0),
        ]
        field = consensus_field(runs)
        assert (field.height, field.width) == (8, 8)
        assert field.n_labels == runs[2].k_effective
        hard = np.argmax(field.probs, axis=2)
        left = hard[:, :4]
        right = hard[:, 4:]
        # each half should be dominated by a single consensus label
        assert len(np.unique(left)) == 1
        assert len(np.unique(right)) == 1
        assert left[0, 0] != right[0, 0]

    def test_field_dims_follow_finest_grid(self):
        a = assignment(np.zeros((4, 4), dtype=np.int32), tag="a")
        b = assignment(np.zeros((6, 6), dtype=np.int32), tag="b")
        field = consensus_field([a, b])
        assert (field.height, field.width) == (6, 6)
