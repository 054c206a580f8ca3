"""Caption cycles: subset extraction, seeding, ordering, failure semantics."""

import numpy as np
import pytest

from capseg import rng as rng_mod
from capseg.caption_engine import (
    CaptionRecord,
    DecodeParams,
    cluster_subset,
    records_from_dict,
    records_to_dict,
    run_cycles,
)
from capseg.clients import MockDecoder, RequestFailed, ServiceUnavailable
from capseg.denoise import DenoisedGrid
from capseg.embedding_grid import PatchEmbeddingGrid
from capseg.errors import NotFoundError, TransportError, ValidationError


def make_grid(height, width, dim=3, tag="default_384"):
    data = np.arange(height * width * dim, dtype=np.float64).reshape(height, width, dim)
    return PatchEmbeddingGrid(height, width, dim, data, tag).validate()


def make_denoised(labels):
    labels = np.asarray(labels, dtype=np.int32)
    return DenoisedGrid(
        height=labels.shape[0],
        width=labels.shape[1],
        labels=labels,
        crf=None,
        majority_iters=0,
        majority_converged=True,
    ).validate()


class RecordingDecoder:
    def __init__(self):
        self.calls = []

    def caption(self, embeddings, params, seed):
        self.calls.append((embeddings.shape, seed))
        return f"caption for {embeddings.shape[0]} patches seed {seed}"


class TestDecodeParams:
    def test_defaults(self):
        p = DecodeParams().validate()
        assert (p.min_len, p.max_len) == (4, 25)
        assert (p.top_p, p.repetition_penalty) == (1.0, 100.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"min_len": 0},
            {"min_len": 10, "max_len": 4},
            {"top_p": 0.0},
            {"top_p": 1.5},
            {"repetition_penalty": 0.5},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValidationError):
            DecodeParams(**kwargs).validate()


class TestClusterSubset:
    def test_same_resolution_picks_members(self):
        grid = make_grid(2, 3)
        denoised = make_denoised([[0, 1, 1], [0, 0, 1]])
        subset = cluster_subset(grid, denoised, 1)
        assert subset.shape == (3, 3)
        expected = grid.data[np.array([[False, True, True], [False, False, True]])]
        assert np.array_equal(subset, expected)

    def test_label_grid_coarser_than_embeddings(self):
        # 2x2 labels over a 4x4 grid: each label cell covers a 2x2 patch block
        grid = make_grid(4, 4)
        denoised = make_denoised([[0, 1], [0, 0]])
        subset = cluster_subset(grid, denoised, 1)
        assert subset.shape == (4, 3)
        member = np.zeros((4, 4), dtype=bool)
        member[:2, 2:] = True
        assert np.array_equal(subset, grid.data[member])

    def test_missing_cluster_raises(self):
        grid = make_grid(2, 2)
        denoised = make_denoised([[0, 0], [0, 0]])
        with pytest.raises(NotFoundError, match="cluster 3"):
            cluster_subset(grid, denoised, 3)


class TestRunCycles:
    def test_records_sorted_and_seeded(self):
        grid = make_grid(2, 3)
        denoised = make_denoised([[0, 1, 1], [0, 0, 2]])
        decoder = RecordingDecoder()
        records = run_cycles(grid, denoised, decoder, n_cycles=2, base_seed=5)
        assert [(r.cluster_id, r.cycle) for r in records] == [
            (0, 0), (0, 1), (1, 0), (1, 1), (2, 0), (2, 1),
        ]
        for rec in records:
            assert rec.seed == rng_mod.derive_seed("caption", 5, rec.cluster_id, rec.cycle)

    def test_deterministic_across_parallelism(self):
        grid = make_grid(3, 3)
        denoised = make_denoised([[0, 0, 1], [0, 1, 1], [2, 2, 2]])
        decoder = MockDecoder([f"caption {i}" for i in range(20)])
        serial = run_cycles(grid, denoised, decoder, n_cycles=4, base_seed=1, max_in_flight=1)
        threaded = run_cycles(grid, denoised, decoder, n_cycles=4, base_seed=1, max_in_flight=8)
        assert serial == threaded

    def test_request_failures_drop_single_records(self):
        grid = make_grid(2, 2)
        denoised = make_denoised([[0, 0], [1, 1]])

        class Flaky:
            def caption(self, embeddings, params, seed):
                if seed % 2 == 0:
                    raise RequestFailed("bad luck")
                return "ok"

        records = run_cycles(grid, denoised, Flaky(), n_cycles=3, base_seed=0)
        expected = [
            (cid, cyc)
            for cid in (0, 1)
            for cyc in range(3)
            if rng_mod.derive_seed("caption", 0, cid, cyc) % 2 == 1
        ]
        assert [(r.cluster_id, r.cycle) for r in records] == expected
        assert 0 < len(records) < 6

    def test_outage_raises_transport_error_with_partial(self):
        grid = make_grid(2, 2)
        denoised = make_denoised([[0, 0], [1, 1]])

        class DiesOnCluster1:
            def caption(self, embeddings, params, seed):
                if np.array_equal(embeddings, grid.data[np.array([[False, False], [True, True]])]):
                    raise ServiceUnavailable("gone")
                return "ok"

        with pytest.raises(TransportError) as excinfo:
            run_cycles(grid, denoised, DiesOnCluster1(), n_cycles=2, base_seed=0, max_in_flight=1)
        partial = excinfo.value.partial
        assert [(r.cluster_id, r.cycle) for r in partial] == [(0, 0), (0, 1)]

    def test_rejects_bad_cycle_count(self):
        grid = make_grid(1, 1)
        denoised = make_denoised([[0]])
        with pytest.raises(ValidationError, match="n_cycles"):
            run_cycles(grid, denoised, RecordingDecoder(), n_cycles=0)


class TestSerialization:
    def test_round_trip(self):
        records = [
            CaptionRecord(cluster_id=0, cycle=0, text="a cat", seed=11),
            CaptionRecord(cluster_id=1, cycle=2, text="a dog", seed=13),
        ]
        assert records_from_dict(records_to_dict(records)) == records

    def test_bad_record_rejected(self):
        with pytest.raises(ValidationError, match="bad caption record"):
            records_from_dict([{"cluster_id": 0}])
