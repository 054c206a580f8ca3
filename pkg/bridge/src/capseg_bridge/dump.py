"""Patch-embedding dumps: one ``.peg`` container per requested resolution.

The encoder sees the image square-resized to each resolution and emits one
embedding per 16-pixel patch, so 384 gives a 24x24 grid and 512 a 32x32
grid, tagged ``r384`` and ``r512``.  Output files are written through a
temporary name and renamed into place, and nothing at all is written until
every resolution has encoded, so a bad image never leaves partial dumps.
"""

import os
from pathlib import Path

from PIL import Image, UnidentifiedImageError

from capseg_bridge import formats, models
from capseg_bridge.errors import ConfigError, ImageError

DEFAULT_RESOLUTIONS = (384, 512)


def dump_embeddings(
    image_path,
    out_dir,
    resolutions: tuple[int, ...] = DEFAULT_RESOLUTIONS,
    encoder_model: str = "stub:0",
    device: str = "cpu",
) -> list[Path]:
    """Encode one image at every resolution; returns the files written."""
    if not resolutions:
        raise ConfigError("resolutions must be non-empty")
    if len(set(resolutions)) != len(resolutions):
        raise ConfigError(f"duplicate resolutions: {list(resolutions)}")
    encoder = models.load("encoder", encoder_model, device)

    image_path = Path(image_path)
    try:
        with Image.open(image_path) as img:
            img.load()
            image = img.convert("RGB")
    except FileNotFoundError:
        raise ImageError(f"image not found: {image_path}") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"cannot read image {image_path}: {exc}") from exc

    blobs = {}
    for resolution in resolutions:
        tag = f"r{resolution}"
        grid = encoder.encode(image, resolution)
        blobs[tag] = formats.peg_bytes(grid, tag)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for tag, blob in blobs.items():
        path = out_dir / f"{image_path.stem}.{tag}.peg"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, path)
        written.append(path)
    return written
