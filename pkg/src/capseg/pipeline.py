"""End-to-end orchestration: stage wiring, artifact persistence, dataset runs.

Every stage writes its result to disk before the next stage starts, and
every artifact records the semantic config hash that produced it.  A rerun
with the same config loads whatever artifacts already match the hash and
recomputes the rest, so a run can resume from any persisted stage; a rerun
with a changed config matches nothing and recomputes everything.  Corrupt
or foreign artifacts are treated as absent, never trusted.

Errors inside a stage surface as StageError tagged with the stage name;
whatever the stage managed to persist stays on disk.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from capseg.caption_engine import (
    CaptionRecord,
    records_from_dict,
    records_to_dict,
    run_cycles,
)
from capseg.clients import (
    DecoderClient,
    HttpDecoderClient,
    HttpLlmClient,
    HttpSegmentorClient,
    LlmClient,
    MockDecoder,
    MockLlm,
    MockSegmentor,
    SegmentorClient,
)
from capseg.clustering import assignment_to_dict, run_all
from capseg.config import MODE_CLUSTER_ONLY, MODE_PLAIN_CAPTION, PipelineConfig
from capseg.consensus import consensus_field
from capseg.denoise import DenoisedGrid, denoise, denoised_from_dict, denoised_to_dict
from capseg.embedding_grid import PatchEmbeddingGrid, PositionalEncoding, augment, load_peg
from capseg.errors import (
    CapsegError,
    ConfigError,
    NotFoundError,
    TransportError,
    ValidationError,
)
from capseg.guidance import cluster_mask_to_label_mask, clusters_to_mask, segment_with_guidance
from capseg.masks import LabelMask, load_mask, save_mask
from capseg.metrics import (
    CmIouReport,
    IouReport,
    cmiou,
    cmiou_csv_rows,
    cmiou_report_to_dict,
    dataset_cmiou,
    dataset_miou,
    iou_csv_rows,
    iou_report_to_dict,
    miou,
)
from capseg.noun_filter import NounDictionary, NounSet, extract_nouns
from capseg.vocab_map import (
    BACKGROUND,
    MappingDict,
    PromptTemplate,
    build_mapping,
    load_vocabulary,
    remap_mask,
)

STAGES = ("cluster", "caption", "nouns", "guide", "evaluate")
# Pseudo-stage for full runs: everything the mode has, evaluation only
# when ground truth exists (the "evaluate" verb instead demands it).
RUN_ALL = "run"

# Used only when a custom dataset-name template contains a <dataset> slot.
DATASET_DISPLAY = {"voc": "PASCAL VOC", "ade20k": "ADE20K", "cityscapes": "CityScapes"}


class StageError(CapsegError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str):
    try:
        yield
    except StageError:
        raise
    except (CapsegError, OSError) as exc:
        raise StageError(name, exc) from exc


# ------------------------------------------------------------ manifest


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_path: str
    embeddings: dict[str, str]
    gt_mask: str | None


def load_manifest(path) -> list[ManifestEntry]:
    """Image list for a dataset run; relative paths resolve against the
    manifest's own directory."""
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        images = doc["images"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"malformed manifest {path}: {exc}") from exc

    base = path.parent
    entries = []
    seen = set()
    for item in images:
        try:
            image_id = str(item["id"])
            embeddings = {
                str(tag): str(base / p) for tag, p in dict(item["embeddings"]).items()
            }
            image_path = str(base / item["image_path"]) if "image_path" in item else ""
            gt = str(base / item["gt_mask"]) if item.get("gt_mask") else None
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValidationError(f"malformed manifest entry {item!r}: {exc}") from exc
        if not image_id or "/" in image_id or image_id in seen:
            raise ValidationError(f"bad or duplicate image id {image_id!r}")
        seen.add(image_id)
        entries.append(ManifestEntry(image_id, image_path, embeddings, gt))
    return entries


# ------------------------------------------------------------ clients


@dataclass
class StageClients:
    """Whichever service clients the configuration provides; stages that
    need a missing one fail with a configuration error."""

    decoder: DecoderClient | None = None
    segmentor: SegmentorClient | None = None
    llm: LlmClient | None = None


def build_clients(cfg: PipelineConfig) -> StageClients:
    if cfg.mock:
        if not cfg.fixture_dir:
            raise ConfigError("mock mode requires fixture_dir")
        root = Path(cfg.fixture_dir)
        if not root.is_dir():
            raise ConfigError(f"fixture_dir not found: {root}")
        captions = root / "captions.json"
        segments = root / "segments.json"
        rules = root / "llm_rules.json"
        return StageClients(
            decoder=MockDecoder.from_file(captions) if captions.is_file() else None,
            segmentor=MockSegmentor.from_file(segments) if segments.is_file() else None,
            llm=MockLlm.from_file(rules) if rules.is_file() else None,
        )
    return StageClients(
        decoder=HttpDecoderClient(cfg.decoder_url, timeout=cfg.timeout) if cfg.decoder_url else None,
        segmentor=HttpSegmentorClient(cfg.segmentor_url, timeout=cfg.timeout) if cfg.segmentor_url else None,
        llm=HttpLlmClient(cfg.llm_url, timeout=cfg.timeout) if cfg.llm_url else None,
    )


def _need(client, stage: str, hint: str):
    if client is None:
        raise ConfigError(f"{stage} stage needs {hint} (configure its URL or mock fixtures)")
    return client


# ------------------------------------------------------------ artifacts


def _write_stage_json(path: Path, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
    path.write_text(text, encoding="utf-8")


def _load_stage_json(path: Path, config_hash: str) -> dict | None:
    """A persisted stage result, or None when absent, stale, or unreadable."""
    if not path.is_file():
        return None
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    if not isinstance(doc, dict) or doc.get("config_hash") != config_hash:
        return None
    return doc


def _pgm_config_hash(path: Path) -> str | None:
    """The ``# cfg:`` comment of a PGM header, if present."""
    try:
        head = path.open("rb").read(4096)
    except OSError:
        return None
    for line in head.split(b"\n", 8)[:8]:
        if line.startswith(b"# cfg:"):
            return line[len(b"# cfg:") :].decode("ascii", "replace").strip()
        if line.isdigit():  # maxval reached, no comment coming
            break
    return None


def _load_stage_mask(path: Path, config_hash: str) -> LabelMask | None:
    if _pgm_config_hash(path) != config_hash:
        return None
    try:
        return load_mask(path)
    except CapsegError:
        return None


def _restore(doc: dict | None, key: str, rebuild):
    """Reconstruct a stage value from a persisted document; anything broken
    counts as absent so the stage recomputes instead of trusting it."""
    if doc is None:
        return None
    try:
        return rebuild(doc[key])
    except (KeyError, TypeError, CapsegError):
        return None


# ------------------------------------------------------------ stages


def _load_grid(entry: ManifestEntry, tag: str) -> PatchEmbeddingGrid:
    source = entry.embeddings.get(tag)
    if source is None:
        raise NotFoundError(f"{entry.image_id}: no embedding file for resolution {tag}")
    grid = load_peg(source)
    if grid.resolution_tag != tag:
        raise ValidationError(
            f"{source}: resolution tag {grid.resolution_tag!r} does not match manifest key {tag!r}"
        )
    return grid


def _cluster_stage(
    cfg: PipelineConfig, entry: ManifestEntry, img_dir: Path, h: str, size: tuple[int, int]
) -> tuple[DenoisedGrid, LabelMask]:
    doc = _load_stage_json(img_dir / "denoised.json", h)
    denoised = _restore(doc, "denoised", denoised_from_dict)
    mask = _load_stage_mask(img_dir / "cluster_mask.pgm", h)
    if denoised is not None and mask is not None:
        return denoised, mask

    if cfg.mode == MODE_PLAIN_CAPTION:
        # One whole-image region; captions then describe the full frame.
        finest = _load_grid(entry, cfg.finest_tag())
        denoised = DenoisedGrid(
            height=finest.height,
            width=finest.width,
            labels=np.zeros((finest.height, finest.width), dtype=np.int64),
            crf=cfg.crf_params(),
            majority_iters=0,
            majority_converged=True,
        ).validate()
    else:
        enc = PositionalEncoding(cfg.enc_dim)
        grids = {tag: augment(_load_grid(entry, tag), enc) for tag in cfg.resolution_tags()}
        assignments = run_all(grids, cfg.cluster_config())
        _write_stage_json(
            img_dir / "assignments.json",
            {"config_hash": h, "assignments": [assignment_to_dict(a) for a in assignments]},
        )
        denoised = denoise(consensus_field(assignments), cfg.crf_params(), cfg.majority_max_passes)

    _write_stage_json(
        img_dir / "denoised.json", {"config_hash": h, "denoised": denoised_to_dict(denoised)}
    )
    mask = cluster_mask_to_label_mask(clusters_to_mask(denoised, size[0], size[1]))
    save_mask(mask, img_dir / "cluster_mask.pgm", config_hash=h)
    return denoised, mask


def _caption_stage(
    cfg: PipelineConfig,
    entry: ManifestEntry,
    img_dir: Path,
    h: str,
    denoised: DenoisedGrid,
    decoder: DecoderClient | None,
) -> list[CaptionRecord]:
    doc = _load_stage_json(img_dir / "captions.json", h)
    records = _restore(doc, "records", records_from_dict)
    if records is not None:
        return records

    decoder = _need(decoder, "caption", "a decoder")
    grid = _load_grid(entry, cfg.finest_tag())  # raw embeddings, no position code
    try:
        records = run_cycles(
            grid,
            denoised,
            decoder,
            cfg.decode_params(),
            n_cycles=cfg.cycles,
            base_seed=cfg.seed,
            max_in_flight=cfg.max_in_flight,
        )
    except TransportError as exc:
        partial = records_to_dict(list(exc.partial or []))
        _write_stage_json(
            img_dir / "captions.partial.json", {"config_hash": h, "records": partial}
        )
        raise
    _write_stage_json(
        img_dir / "captions.json", {"config_hash": h, "records": records_to_dict(records)}
    )
    return records


def _nouns_stage(
    cfg: PipelineConfig, img_dir: Path, h: str, records: list[CaptionRecord]
) -> NounSet:
    dictionary = NounDictionary.load(cfg.wordnet_dir or None)
    doc = _load_stage_json(img_dir / "nouns.json", h)
    nouns = _restore(
        doc,
        "nouns",
        lambda names: NounSet(list(names), dict(doc["source_counts"])).validate(dictionary),
    )
    if nouns is not None:
        return nouns

    nouns = extract_nouns(records, dictionary)
    _write_stage_json(
        img_dir / "nouns.json",
        {"config_hash": h, "nouns": nouns.nouns, "source_counts": nouns.source_counts},
    )
    return nouns


def _guide_stage(
    cfg: PipelineConfig,
    entry: ManifestEntry,
    img_dir: Path,
    h: str,
    nouns: NounSet,
    segmentor: SegmentorClient | None,
) -> LabelMask:
    mask = _load_stage_mask(img_dir / "guided_mask.pgm", h)
    if mask is not None:
        return mask

    segmentor = _need(segmentor, "guide", "a segmentor")
    mask = segment_with_guidance(entry.image_path, nouns, segmentor)
    save_mask(mask, img_dir / "guided_mask.pgm", config_hash=h)
    return mask


def _mapping_step(
    cfg: PipelineConfig, img_dir: Path, h: str, nouns: NounSet, vocab: list[str], llm
) -> MappingDict:
    doc = _load_stage_json(img_dir / "mapping.json", h)
    mapping = _restore(
        doc,
        "map",
        lambda m: MappingDict(dict(m), frozenset(doc["skipped_resolved"])).validate(
            nouns.nouns, vocab
        ),
    )
    if mapping is not None:
        return mapping

    llm = _need(llm, "evaluate", "an LLM")
    template = PromptTemplate.load(cfg.resolved_prompt_mode(), cfg.template_path or None)
    mapping = build_mapping(
        nouns,
        vocab,
        template,
        llm,
        batch_size=cfg.llm_batch_size,
        dataset_name=DATASET_DISPLAY.get(cfg.dataset, cfg.dataset),
    )
    _write_stage_json(
        img_dir / "mapping.json",
        {"config_hash": h, "map": mapping.map, "skipped_resolved": sorted(mapping.skipped_resolved)},
    )
    return mapping


def _evaluate_stage(
    cfg: PipelineConfig,
    entry: ManifestEntry,
    img_dir: Path,
    h: str,
    gt: LabelMask,
    cluster_mask: LabelMask,
    guided: LabelMask | None,
    nouns: NounSet | None,
    llm: LlmClient | None,
) -> tuple[IouReport | None, CmIouReport, dict]:
    pred = cluster_mask if cfg.mode == MODE_CLUSTER_ONLY else guided
    cm = cmiou(gt, pred, connectivity=cfg.connectivity)

    iou = None
    if cfg.mode != MODE_CLUSTER_ONLY:
        vocab = load_vocabulary(cfg.vocabulary_source())
        mapping = _mapping_step(cfg, img_dir, h, nouns, vocab, llm)
        target_vocab = {0: BACKGROUND} | {i + 1: name for i, name in enumerate(vocab)}
        # The guided mask carries "background" as class 0, which is not a noun
        # and so never appears in the stored mapping; it passes through as-is.
        full = MappingDict(
            map={**mapping.map, BACKGROUND: BACKGROUND},
            skipped_resolved=mapping.skipped_resolved,
        )
        mapped = remap_mask(guided, full, target_vocab)
        save_mask(mapped, img_dir / "mapped_mask.pgm", config_hash=h)
        iou = miou(gt, mapped, target_vocab)

    report = {
        "config_hash": h,
        "image_id": entry.image_id,
        "miou": None if iou is None else iou.miou,
        "cmiou": cm.cmiou,
        "miou_detail": None if iou is None else iou_report_to_dict(iou),
        "cmiou_detail": cmiou_report_to_dict(cm),
    }
    _write_stage_json(img_dir / "report.json", report)
    return iou, cm, report


# ------------------------------------------------------------ entry points


@dataclass
class ImageResult:
    image_id: str
    cluster_mask: LabelMask
    records: list[CaptionRecord] | None = None
    nouns: NounSet | None = None
    guided: LabelMask | None = None
    iou: IouReport | None = None
    cm: CmIouReport | None = None
    report: dict | None = None


def run_image(
    cfg: PipelineConfig,
    entry: ManifestEntry,
    clients: StageClients | None = None,
    out_root=None,
    last_stage: str = RUN_ALL,
) -> ImageResult:
    """All stages for one image, honoring mode and persisted artifacts.

    ``last_stage`` stops the run early ("cluster" ... "evaluate"), which is
    how the single-stage CLI verbs execute: each runs the pipeline up to its
    stage, reusing whatever earlier artifacts already exist.  The default
    runs everything the mode has, evaluating only when ground truth exists;
    "evaluate" instead fails on images without one.
    """
    cfg.validate()
    if last_stage not in STAGES + (RUN_ALL,):
        raise ConfigError(f"unknown stage {last_stage!r}")
    if cfg.mode == MODE_CLUSTER_ONLY and last_stage in ("caption", "nouns", "guide"):
        raise ConfigError(f"mode {cfg.mode!r} has no {last_stage} stage")
    if clients is None:
        clients = build_clients(cfg)
    stop = len(STAGES) if last_stage == RUN_ALL else STAGES.index(last_stage)

    out_root = Path(cfg.out_dir if out_root is None else out_root)
    img_dir = out_root / "images" / entry.image_id
    img_dir.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()

    with _stage("cluster"):
        gt = load_mask(entry.gt_mask) if entry.gt_mask else None
        size = (gt.height, gt.width) if gt is not None else (max(cfg.resolutions),) * 2
        denoised, cluster_mask = _cluster_stage(cfg, entry, img_dir, h, size)
    result = ImageResult(entry.image_id, cluster_mask)
    if stop < 1:
        return result

    if cfg.mode != MODE_CLUSTER_ONLY:
        with _stage("caption"):
            result.records = _caption_stage(cfg, entry, img_dir, h, denoised, clients.decoder)
        if stop < 2:
            return result
        with _stage("nouns"):
            result.nouns = _nouns_stage(cfg, img_dir, h, result.records)
        if stop < 3:
            return result
        with _stage("guide"):
            result.guided = _guide_stage(cfg, entry, img_dir, h, result.nouns, clients.segmentor)
        if stop < 4:
            return result

    if gt is None:
        if last_stage == "evaluate":
            with _stage("evaluate"):
                raise NotFoundError(f"{entry.image_id}: manifest lists no ground-truth mask")
        return result
    with _stage("evaluate"):
        result.iou, result.cm, result.report = _evaluate_stage(
            cfg, entry, img_dir, h, gt, cluster_mask, result.guided, result.nouns, clients.llm
        )
    return result


@dataclass
class DatasetResult:
    results: list[ImageResult]
    failures: list[dict]
    miou: IouReport | None
    cmiou_pooled: float
    n_gt_segments: int
    summary: dict


def run_dataset(cfg: PipelineConfig, manifest_path, out_root=None) -> DatasetResult:
    """Every manifest image through run_image, then order-independent
    aggregation; per-image failures are recorded and excluded, never fatal."""
    cfg.validate()
    entries = load_manifest(manifest_path)
    clients = build_clients(cfg)
    out_root = Path(cfg.out_dir if out_root is None else out_root)
    out_root.mkdir(parents=True, exist_ok=True)
    h = cfg.config_hash()

    _write_stage_json(
        out_root / "provenance.json",
        {"config_hash": h, "semantic_config": cfg.semantic_summary()},
    )

    def one(entry: ManifestEntry):
        return run_image(cfg, entry, clients, out_root)

    results: list[ImageResult] = []
    failures: list[dict] = []
    with ThreadPoolExecutor(max_workers=max(1, cfg.jobs)) as pool:
        futures = [(entry.image_id, pool.submit(one, entry)) for entry in entries]
        for image_id, future in futures:
            try:
                results.append(future.result())
            except StageError as exc:
                failures.append(
                    {"image_id": image_id, "stage": exc.stage, "error": str(exc.cause)}
                )

    iou_reports = {r.image_id: r.iou for r in results if r.iou is not None}
    cm_reports = {r.image_id: r.cm for r in results if r.cm is not None}
    agg_iou = dataset_miou(iou_reports) if iou_reports else None
    agg_cm = dataset_cmiou(cm_reports)

    summary = {
        "config_hash": h,
        "n_images": len(entries),
        "n_processed": len(results),
        "n_failed": len(failures),
        "failures": failures,
        "miou": None if agg_iou is None else agg_iou.miou,
        "cmiou": agg_cm.cmiou,
        "n_gt_segments": agg_cm.n_gt_segments,
        "per_image": {
            r.image_id: {
                "miou": None if r.iou is None else r.iou.miou,
                "cmiou": None if r.cm is None else r.cm.cmiou,
            }
            for r in results
        },
        "miou_detail": None if agg_iou is None else iou_report_to_dict(agg_iou),
    }
    _write_stage_json(out_root / "summary.json", summary)
    _write_csvs(cfg, out_root, results)

    return DatasetResult(
        results=results,
        failures=failures,
        miou=agg_iou,
        cmiou_pooled=agg_cm.cmiou,
        n_gt_segments=agg_cm.n_gt_segments,
        summary=summary,
    )


def _write_csvs(cfg: PipelineConfig, out_root: Path, results: list[ImageResult]) -> None:
    if any(r.iou is not None for r in results):
        class_set = eval_class_set(cfg)
        with open(out_root / "miou.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("image_id", "class", "iou"))
            for r in results:
                if r.iou is not None:
                    writer.writerows(iou_csv_rows(r.image_id, r.iou, class_set))
    if any(r.cm is not None for r in results):
        with open(out_root / "cmiou.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("image_id", "segment", "iou"))
            for r in results:
                if r.cm is not None:
                    writer.writerows(cmiou_csv_rows(r.image_id, r.cm))


def eval_class_set(cfg: PipelineConfig) -> dict[int, str]:
    """Index -> name table scoring is done against: background plus the
    dataset classes at position + 1."""
    vocab = load_vocabulary(cfg.vocabulary_source())
    return {0: BACKGROUND} | {i + 1: name for i, name in enumerate(vocab)}
