"""Detection-dataset construction from segmented renderings.

Segmented renderings put plant pixels on a uniformly black background, so
annotation is mechanical: patch the image, find non-black components per
patch, and box them. Labels use the one-class detector-training text
format: one `0 cx cy w h` line per box, center/size normalized by patch
size with six decimals.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import raster, tiling
from .raster import BoundingBox

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class AnnotationRecord:
    patch_id: str
    boxes: tuple[BoundingBox, ...]
    patch_size: int


@dataclass(frozen=True)
class SplitManifest:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int

    def split_of(self, patch_id: str) -> str:
        for name in SPLIT_NAMES:
            if patch_id in getattr(self, name):
                return name
        raise KeyError(patch_id)

    def to_json(self) -> str:
        return json.dumps({"train": list(self.train), "val": list(self.val),
                           "test": list(self.test), "seed": self.seed}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SplitManifest":
        data = json.loads(text)
        return cls(train=tuple(data["train"]), val=tuple(data["val"]),
                   test=tuple(data["test"]), seed=data["seed"])


def split_ids(patch_ids, ratios=(0.75, 0.20, 0.05), seed: int = 0) -> SplitManifest:
    """Seeded shuffle then largest-remainder partition, so each split's
    size differs from the exact proportion by less than one."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three positive numbers summing to 1")
    ids = sorted(patch_ids)
    if len(ids) < len(SPLIT_NAMES):
        raise ValueError("fewer patches than splits")
    rng = random.Random(seed)
    rng.shuffle(ids)
    n = len(ids)
    exact = [r * n for r in ratios]
    counts = [int(e) for e in exact]
    order = sorted(range(3), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in range(n - sum(counts)):
        counts[order[i]] += 1
    train = ids[:counts[0]]
    val = ids[counts[0]:counts[0] + counts[1]]
    test = ids[counts[0] + counts[1]:]
    return SplitManifest(train=tuple(train), val=tuple(val), test=tuple(test), seed=seed)


def annotation_lines(record: AnnotationRecord) -> list[str]:
    lines = []
    s = record.patch_size
    for b in record.boxes:
        cx = (b.x_min + b.x_max + 1) / 2 / s
        cy = (b.y_min + b.y_max + 1) / 2 / s
        lines.append(f"0 {cx:.6f} {cy:.6f} {b.width / s:.6f} {b.height / s:.6f}")
    return lines


@dataclass
class DatasetConfig:
    nonblack_threshold: int = 0
    min_component_pixels: int = 16
    connectivity: int = 8
    keep_negatives: bool = True
    patch_size: int | None = None  # None selects by image width
    ratios: tuple[float, float, float] = (0.75, 0.20, 0.05)
    seed: int = 0


def annotate_image(image: np.ndarray, image_id: str, config: DatasetConfig):
    """Patch one segmented rendering and box its non-black components.

    Returns (patch, record) pairs in grid row-major order; components
    crossing patch borders yield one clipped box per patch.
    """
    size = config.patch_size or tiling.select_patch_size(image.shape[1])
    plan = tiling.make_plan(image.shape[1], image.shape[0], size)
    out = []
    for patch in tiling.split(image, plan):
        mask = raster.mask_from_nonblack(patch.pixels, config.nonblack_threshold)
        comps = raster.connected_components(mask, config.connectivity)
        boxes = tuple(c.bbox for c in comps
                      if c.pixel_count >= config.min_component_pixels)
        pid = tiling.patch_name(image_id, patch.grid_row, patch.grid_col)
        out.append((patch, AnnotationRecord(patch_id=pid, boxes=boxes, patch_size=size)))
    return out


def build_detection_dataset(images, out_root, config: DatasetConfig | None = None):
    """Build the on-disk detection dataset.

    ``images`` is an iterable of (image_id, source) where source is a
    path or a uint8 array. Output layout under ``out_root``:
    images/{split}/{patch_id}.png, labels/{split}/{patch_id}.txt, and
    splits.json. Processing order is sorted by image id so rebuilding
    from the same inputs is byte-identical.
    """
    config = config or DatasetConfig()
    out_root = Path(out_root)

    annotated = []
    for image_id, source in sorted(images, key=lambda item: item[0]):
        try:
            image = raster.load_image(source) if not isinstance(source, np.ndarray) else source
            raster.ensure_image(image)
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", image_id, exc)
            continue
        for patch, record in annotate_image(image, image_id, config):
            if record.boxes or config.keep_negatives:
                annotated.append((patch, record))

    manifest = split_ids([rec.patch_id for _, rec in annotated],
                         ratios=config.ratios, seed=config.seed)
    assignment = {pid: name for name in SPLIT_NAMES
                  for pid in getattr(manifest, name)}

    for name in SPLIT_NAMES:
        (out_root / "images" / name).mkdir(parents=True, exist_ok=True)
        (out_root / "labels" / name).mkdir(parents=True, exist_ok=True)
    for patch, record in annotated:
        split = assignment[record.patch_id]
        raster.save_image(out_root / "images" / split / f"{record.patch_id}.png",
                          patch.pixels)
        label_path = out_root / "labels" / split / f"{record.patch_id}.txt"
        label_path.write_text("".join(line + "\n" for line in annotation_lines(record)))
    (out_root / "splits.json").write_text(manifest.to_json())
    return manifest, [record for _, record in annotated]
