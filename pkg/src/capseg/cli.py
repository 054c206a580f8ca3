"""Command-line front end for the segmentation pipeline.

One verb per pipeline stage plus two composite runs:

    capseg cluster     MANIFEST IMAGE_ID   # clustering + denoising only
    capseg caption     MANIFEST IMAGE_ID   # ... + caption cycles
    capseg nouns       MANIFEST IMAGE_ID   # ... + noun extraction
    capseg guide       MANIFEST IMAGE_ID   # ... + guided segmentation
    capseg evaluate    MANIFEST IMAGE_ID   # everything, requires ground truth
    capseg run         MANIFEST IMAGE_ID   # everything the mode has
    capseg run-dataset MANIFEST            # all images, summary table

Stages resume from artifacts left by earlier invocations with the same
configuration, so running ``nouns`` after ``caption`` reuses the stored
captions.  Every configuration key doubles as a flag; ``--config FILE``
loads the same keys from an INI file, with explicit flags winning.

Quickstart against the packaged mock services:

    python3 -m capseg.mockdata demo/
    capseg run-dataset demo/manifest.json --mock --fixture-dir demo/fixtures

Exit codes: 0 success, 2 bad input or configuration, 3 transport failure,
4 dataset run with some failed images.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from capseg.config import SECTIONS, PipelineConfig, _field_types, load_ini, override
from capseg.errors import (
    CapsegError,
    NotFoundError,
    PartialFailureError,
    TransportError,
)
from capseg.pipeline import (
    RUN_ALL,
    DatasetResult,
    ImageResult,
    StageError,
    load_manifest,
    run_dataset,
    run_image,
)

_VERBS = (
    ("cluster", "cluster", "cluster and denoise the embedding grids"),
    ("caption", "caption", "caption every cluster"),
    ("nouns", "nouns", "extract dictionary nouns from the captions"),
    ("guide", "guide", "segment the image guided by the extracted nouns"),
    ("evaluate", "evaluate", "score against ground truth (must exist)"),
    ("run", RUN_ALL, "run every stage the mode has"),
)

_FLAG_HELP = {
    "resolutions": "patch grid resolutions to cluster",
    "enc_dim": "positional encoding channels, 0 disables",
    "k_values": "k-means cluster counts",
    "seed": "base random seed",
    "kmeans_max_iters": "k-means iteration cap",
    "kmeans_tol": "k-means convergence tolerance",
    "crf_weight": "smoothness weight, 0 disables the CRF",
    "crf_theta": "spatial kernel width",
    "crf_iters": "mean-field iterations",
    "majority_max_passes": "majority filter pass cap",
    "cycles": "caption cycles per cluster",
    "min_len": "minimum caption length in tokens",
    "max_len": "maximum caption length in tokens",
    "top_p": "nucleus sampling mass",
    "repetition_penalty": "decoder repetition penalty",
    "max_in_flight": "concurrent caption requests",
    "wordnet_dir": "noun dictionary directory instead of the packaged one",
    "dataset": "voc, ade20k, cityscapes or custom",
    "vocab_path": "class list file, required for --dataset custom",
    "connectivity": "segment connectivity for class-agnostic IoU, 4 or 8",
    "llm_batch_size": "nouns per mapping request",
    "prompt_mode": "dataset-name or explicit-vocabulary",
    "template_path": "custom mapping prompt template",
    "mode": "full, cluster-only or plain-caption",
    "out_dir": "artifact output directory",
    "jobs": "parallel image workers",
    "mock": "use the packaged mock clients instead of live services",
    "fixture_dir": "mock client fixture directory",
    "decoder_url": "captioning service base URL",
    "segmentor_url": "segmentation service base URL",
    "llm_url": "language model service base URL",
    "timeout": "HTTP timeout in seconds",
}

_METAVARS = {
    "wordnet_dir": "DIR",
    "out_dir": "DIR",
    "fixture_dir": "DIR",
    "vocab_path": "FILE",
    "template_path": "FILE",
    "decoder_url": "URL",
    "segmentor_url": "URL",
    "llm_url": "URL",
    tuple: "N[,N...]",
    int: "N",
    float: "X",
    str: "NAME",
}


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value) if value != "" else "none"


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    defaults = PipelineConfig()
    types = _field_types()
    for section, keys in SECTIONS.items():
        group = parser.add_argument_group(f"{section} options")
        for name in keys:
            flag = "--" + name.replace("_", "-")
            help_text = f"{_FLAG_HELP[name]} (default: {_fmt(getattr(defaults, name))})"
            if types[name] is bool:
                group.add_argument(
                    flag,
                    action=argparse.BooleanOptionalAction,
                    default=None,
                    help=help_text,
                )
            else:
                group.add_argument(
                    flag,
                    default=None,
                    metavar=_METAVARS.get(name, _METAVARS[types[name]]),
                    help=help_text,
                )


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", metavar="FILE", help="INI config file; explicit flags win"
    )
    _add_config_flags(common)

    parser = argparse.ArgumentParser(
        prog="capseg",
        description="caption-guided open-vocabulary segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")
    for verb, stage, blurb in _VERBS:
        p = sub.add_parser(verb, parents=[common], help=blurb, description=blurb)
        p.add_argument("manifest", help="dataset manifest JSON")
        p.add_argument("image_id", help="image id from the manifest")
        p.set_defaults(handler=_run_single, stage=stage)
    p = sub.add_parser(
        "run-dataset",
        parents=[common],
        help="run every image in the manifest",
        description="run every image in the manifest and print a summary table",
    )
    p.add_argument("manifest", help="dataset manifest JSON")
    p.set_defaults(handler=_run_whole_dataset, stage=RUN_ALL)
    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_ini(args.config) if args.config else PipelineConfig()
    given = {
        name: value
        for name in _field_types()
        if (value := getattr(args, name)) is not None
    }
    return override(cfg, **given)


def _n_classes(labels: np.ndarray, ignore: int) -> int:
    return int(np.unique(labels[labels != ignore]).size)


def _print_image(result: ImageResult) -> None:
    iid = result.image_id
    mask = result.cluster_mask
    print(f"{iid}: {_n_classes(mask.labels, mask.ignore_index)} clusters")
    if result.records is not None:
        print(f"{iid}: {len(result.records)} caption records")
    if result.nouns is not None:
        print(f"{iid}: nouns: {', '.join(result.nouns.nouns) or '(none)'}")
    if result.guided is not None:
        names = [result.guided.vocabulary[i] for i in sorted(result.guided.vocabulary)]
        print(f"{iid}: guided classes: {', '.join(names)}")
    if result.cm is not None:
        iou = "-" if result.iou is None else f"{result.iou.miou:.4f}"
        print(f"{iid}: miou {iou}  cmiou {result.cm.cmiou:.4f}")


def _print_dataset(res: DatasetResult) -> None:
    width = max((len(r.image_id) for r in res.results), default=0)
    width = max(width, len("dataset"))
    print(f"{'image':<{width}}  {'miou':>7}  {'cmiou':>7}")
    for r in res.results:
        iou = "-" if r.iou is None else f"{r.iou.miou:.4f}"
        cm = "-" if r.cm is None else f"{r.cm.cmiou:.4f}"
        print(f"{r.image_id:<{width}}  {iou:>7}  {cm:>7}")
    iou = "-" if res.miou is None else f"{res.miou.miou:.4f}"
    print(
        f"{'dataset':<{width}}  {iou:>7}  {res.cmiou_pooled:>7.4f}"
        f"  ({res.n_gt_segments} gt segments)"
    )
    for failure in res.failures:
        print(
            f"failed {failure['image_id']} at {failure['stage']}: {failure['error']}",
            file=sys.stderr,
        )


def _run_single(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    entries = load_manifest(args.manifest)
    entry = next((e for e in entries if e.image_id == args.image_id), None)
    if entry is None:
        raise NotFoundError(f"image id {args.image_id!r} not in manifest")
    _print_image(run_image(cfg, entry, last_stage=args.stage))
    return 0


def _run_whole_dataset(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    res = run_dataset(cfg, args.manifest)
    _print_dataset(res)
    return 4 if res.failures else 0


def _exit_code(exc: CapsegError) -> int:
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, TransportError):
        return 3
    if isinstance(cause, PartialFailureError):
        return 4
    return 2


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        return args.handler(cfg, args)
    except CapsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    raise SystemExit(main())
