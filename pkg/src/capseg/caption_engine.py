"""Per-cluster caption generation.

Every surviving cluster is captioned by feeding only its member patch
embeddings to the decoder.  Repeating this over several cycles with different
seeds makes the decoder attend to different parts of the subset, so the cycle
count directly controls vocabulary recall downstream.

Each (cluster, cycle) request gets its own derived seed, which makes runs
reproducible and independent of scheduling: results come back sorted by
(cluster_id, cycle) no matter how many requests were in flight.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from capseg import rng as rng_mod
from capseg.clients import DecoderClient, RequestFailed, ServiceUnavailable
from capseg.denoise import DenoisedGrid
from capseg.embedding_grid import PatchEmbeddingGrid, nearest_index_map
from capseg.errors import NotFoundError, TransportError, ValidationError


@dataclass(frozen=True)
class DecodeParams:
    """Decoder sampling settings.

    The high repetition penalty is deliberate: cluster subsets are small and
    homogeneous, and without it the decoder loops on the dominant token.
    """

    min_len: int = 4
    max_len: int = 25
    top_p: float = 1.0
    repetition_penalty: float = 100.0

    def validate(self) -> "DecodeParams":
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ValidationError(
                f"need 1 <= min_len <= max_len, got {self.min_len}..{self.max_len}"
            )
        if not 0.0 < self.top_p <= 1.0:
            raise ValidationError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.repetition_penalty < 1.0:
            raise ValidationError(
                f"repetition_penalty must be >= 1, got {self.repetition_penalty}"
            )
        return self


@dataclass(frozen=True)
class CaptionRecord:
    cluster_id: int
    cycle: int
    text: str
    seed: int


def cluster_subset(
    grid: PatchEmbeddingGrid, denoised: DenoisedGrid, cluster_id: int
) -> np.ndarray:
    """Embeddings of the patches labelled ``cluster_id``, as an (n, dim) array.

    The label grid may be at a different resolution than the embedding grid;
    labels are looked up through the same nearest-index mapping used when
    resampling, so patch membership matches what the consensus stage saw.
    """
    rows = nearest_index_map(denoised.height, grid.height)
    cols = nearest_index_map(denoised.width, grid.width)
    labels = denoised.labels[np.ix_(rows, cols)]
    member = labels == cluster_id
    if not member.any():
        raise NotFoundError(f"cluster {cluster_id} has no patches")
    return grid.data[member]


def run_cycles(
    grid: PatchEmbeddingGrid,
    denoised: DenoisedGrid,
    decoder: DecoderClient,
    params: DecodeParams | None = None,
    n_cycles: int = 10,
    base_seed: int = 0,
    max_in_flight: int = 4,
) -> list[CaptionRecord]:
    """Caption every present cluster ``n_cycles`` times.

    A request the service rejects (``RequestFailed``) only loses that record;
    an unreachable service aborts with ``TransportError`` carrying whatever
    completed, so callers can checkpoint.
    """
    if params is None:
        params = DecodeParams()
    params.validate()
    if n_cycles < 1:
        raise ValidationError(f"n_cycles must be >= 1, got {n_cycles}")

    jobs = [
        (cid, cycle, rng_mod.derive_seed("caption", base_seed, cid, cycle))
        for cid in denoised.present_labels()
        for cycle in range(n_cycles)
    ]
    subsets = {cid: cluster_subset(grid, denoised, cid) for cid in denoised.present_labels()}

    def one(job: tuple[int, int, int]) -> CaptionRecord | None:
        cid, cycle, seed = job
        try:
            text = decoder.caption(subsets[cid], params, seed)
        except RequestFailed:
            return None
        return CaptionRecord(cluster_id=cid, cycle=cycle, text=text, seed=seed)

    records: list[CaptionRecord] = []
    outage: ServiceUnavailable | None = None
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        futures = [pool.submit(one, job) for job in jobs]
        for future in futures:
            try:
                rec = future.result()
            except ServiceUnavailable as exc:
                outage = exc
                continue
            if rec is not None:
                records.append(rec)
    records.sort(key=lambda r: (r.cluster_id, r.cycle))
    if outage is not None:
        raise TransportError(str(outage), partial=records) from outage
    return records


def records_to_dict(records: list[CaptionRecord]) -> list[dict]:
    return [
        {"cluster_id": r.cluster_id, "cycle": r.cycle, "text": r.text, "seed": r.seed}
        for r in records
    ]


def records_from_dict(payload: list[dict]) -> list[CaptionRecord]:
    try:
        return [
            CaptionRecord(
                cluster_id=int(r["cluster_id"]),
                cycle=int(r["cycle"]),
                text=str(r["text"]),
                seed=int(r["seed"]),
            )
            for r in payload
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad caption record: {exc}") from exc
