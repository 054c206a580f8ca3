"""Builds a small self-contained demo dataset for mock pipeline runs.

Three synthetic scenes, each a couple of rectangular objects over a
background.  Every artifact a run needs is generated: patch-embedding
grids per resolution, ground-truth masks with a class vocabulary, and
the fixture files driving the mock decoder, segmentor and LLM.  All of
it is derived from seeded generators, so two builds of the same tree
are byte-identical.

Run directly to materialize a tree:

    python3 -m capseg.mockdata demo/
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from capseg import rng as rng_mod
from capseg.embedding_grid import PatchEmbeddingGrid, save_peg
from capseg.masks import IGNORE_INDEX, LabelMask, save_mask

PATCH_SIZE = 16
EMB_DIM = 16
MASK_SIZE = 64
MEAN_SCALE = 3.0
NOISE_SCALE = 0.3


@dataclass(frozen=True)
class Region:
    """A rectangle of one class; box is (y0, x0, y1, x1) in unit fractions."""

    name: str
    class_id: int
    box: tuple[float, float, float, float]


# Class ids follow the packaged voc vocabulary (position + 1).
SCENES: list[tuple[str, list[Region]]] = [
    (
        "img0",
        [
            Region("cat", 8, (0.10, 0.10, 0.55, 0.50)),
            Region("dog", 12, (0.55, 0.50, 0.95, 0.95)),
        ],
    ),
    (
        "img1",
        [
            Region("car", 7, (0.55, 0.05, 0.95, 0.95)),
            Region("person", 15, (0.10, 0.40, 0.55, 0.65)),
        ],
    ),
    (
        "img2",
        [
            Region("horse", 13, (0.20, 0.10, 0.70, 0.60)),
            Region("sheep", 17, (0.60, 0.65, 0.90, 0.95)),
        ],
    ),
]

# Rows for the mock decoder's caption table. Nouns the demo cares about
# (the region classes plus a few scenery words) all exist in the packaged
# dictionary; words outside it are simply never extracted.
CAPTION_TABLE = [
    "a cat sitting on the floor",
    "a small cat beside a window",
    "a dog running through the grass",
    "a brown dog with a ball",
    "a puppy next to a dog",
    "a car parked on the road",
    "a red car on the street",
    "a person walking along the road",
    "a person holding a bag",
    "a horse standing in a field",
    "a horse near a wooden fence",
    "a sheep on a green hill",
    "a white sheep eating grass",
    "a tree beside the house",
    "clouds drifting across the sky",
    "grass growing by the wall",
]

# The identity override makes the LLM irrelevant for nouns that already
# are dataset classes; these rules shape the fate of the leftovers.
LLM_RULES = {
    "default": "'background'",
    "rules": [
        {"contains": "puppy exclusively", "response": "'dog'"},
        {"contains": "street exclusively", "response": "'road'"},
    ],
}


def region_field(height: int, width: int, regions: list[Region]) -> np.ndarray:
    """0 = background, i + 1 = regions[i]; later regions draw on top."""
    field = np.zeros((height, width), dtype=np.int64)
    for i, region in enumerate(regions):
        y0, x0, y1, x1 = region.box
        rows = slice(int(round(y0 * height)), int(round(y1 * height)))
        cols = slice(int(round(x0 * width)), int(round(x1 * width)))
        field[rows, cols] = i + 1
    return field


def _region_mean(name: str) -> np.ndarray:
    gen = rng_mod.generator("demo", "mean", name)
    return gen.normal(size=EMB_DIM) * MEAN_SCALE


def build_grid(image_id: str, regions: list[Region], resolution: int) -> PatchEmbeddingGrid:
    side = resolution // PATCH_SIZE
    field = region_field(side, side, regions)
    means = np.stack([_region_mean("background")] + [_region_mean(r.name) for r in regions])
    gen = rng_mod.generator("demo", "noise", image_id, resolution)
    data = means[field] + gen.normal(size=(side, side, EMB_DIM)) * NOISE_SCALE
    return PatchEmbeddingGrid(
        height=side,
        width=side,
        dim=EMB_DIM,
        data=data.astype(np.float32),
        resolution_tag=f"r{resolution}",
    ).validate()


def build_gt_mask(regions: list[Region]) -> LabelMask:
    field = region_field(MASK_SIZE, MASK_SIZE, regions)
    ids = np.array([0] + [r.class_id for r in regions], dtype=np.uint8)
    labels = ids[field]
    labels[0, :] = IGNORE_INDEX  # a strip of unlabeled pixels, as real data has
    vocab = {0: "background"} | {r.class_id: r.name for r in regions}
    return LabelMask(MASK_SIZE, MASK_SIZE, labels, vocab).validate()


def build_segment_fixture(regions: list[Region]) -> dict:
    field = region_field(MASK_SIZE, MASK_SIZE, regions)
    names = {"0": "background"} | {str(i + 1): r.name for i, r in enumerate(regions)}
    return {"regions": field.tolist(), "region_names": names}


def build_demo_tree(root, resolutions: tuple[int, ...] = (384, 512)) -> Path:
    """Write the full demo tree under ``root``; returns the manifest path."""
    root = Path(root)
    for sub in ("embeddings", "gt", "fixtures"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    entries = []
    segment_fixtures = {}
    for image_id, regions in SCENES:
        embeddings = {}
        for resolution in resolutions:
            peg_path = root / "embeddings" / f"{image_id}_r{resolution}.peg"
            save_peg(build_grid(image_id, regions, resolution), peg_path)
            embeddings[f"r{resolution}"] = f"embeddings/{peg_path.name}"
        save_mask(build_gt_mask(regions), root / "gt" / f"{image_id}.pgm")
        segment_fixtures[image_id] = build_segment_fixture(regions)
        entries.append(
            {
                "id": image_id,
                "image_path": f"images/{image_id}.png",
                "embeddings": embeddings,
                "gt_mask": f"gt/{image_id}.pgm",
            }
        )

    fixtures = root / "fixtures"
    _dump_json(fixtures / "captions.json", CAPTION_TABLE)
    _dump_json(fixtures / "segments.json", segment_fixtures)
    _dump_json(fixtures / "llm_rules.json", LLM_RULES)

    manifest_path = root / "manifest.json"
    _dump_json(manifest_path, {"images": entries})
    return manifest_path


def _dump_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python3 -m capseg.mockdata OUT_DIR", file=sys.stderr)
        return 2
    manifest = build_demo_tree(argv[0])
    print(manifest)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
