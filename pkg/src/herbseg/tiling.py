"""Patch-grid construction for large sheets and its exact inverse.

The grid never overlaps: tiles are laid out from the top-left corner and
the right/bottom edges are zero-padded up to a whole number of patches.
Stitching discards the padding, so split -> stitch is bit-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import raster

PATCH_SIZES = (1024, 512, 256)


def select_patch_size(width: int) -> int:
    """Width-driven patch size: 1024 when width/1024 > 3, then 512 when
    width/512 > 3, else 256. Comparisons are strict and real-valued."""
    if width < 1:
        raise ValueError("width must be >= 1")
    if width / 1024 > 3:
        return 1024
    if width / 512 > 3:
        return 512
    return 256


@dataclass(frozen=True)
class PatchPlan:
    patch_size: int
    cols: int
    rows: int
    pad_right: int
    pad_bottom: int
    source_width: int
    source_height: int

    def __post_init__(self):
        if self.cols * self.patch_size != self.source_width + self.pad_right:
            raise ValueError("cols * patch_size must equal source_width + pad_right")
        if self.rows * self.patch_size != self.source_height + self.pad_bottom:
            raise ValueError("rows * patch_size must equal source_height + pad_bottom")
        if not 0 <= self.pad_right < self.patch_size:
            raise ValueError("pad_right out of range")
        if not 0 <= self.pad_bottom < self.patch_size:
            raise ValueError("pad_bottom out of range")

    @property
    def patch_count(self) -> int:
        return self.cols * self.rows

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PatchPlan":
        return cls(**json.loads(text))


@dataclass(frozen=True)
class Patch:
    grid_col: int
    grid_row: int
    pixels: np.ndarray


def make_plan(width: int, height: int, patch_size: int) -> PatchPlan:
    if width < 1 or height < 1 or patch_size < 1:
        raise ValueError("width, height and patch_size must be >= 1")
    cols = math.ceil(width / patch_size)
    rows = math.ceil(height / patch_size)
    return PatchPlan(
        patch_size=patch_size,
        cols=cols,
        rows=rows,
        pad_right=cols * patch_size - width,
        pad_bottom=rows * patch_size - height,
        source_width=width,
        source_height=height,
    )


def split(image: np.ndarray, plan: PatchPlan) -> list[Patch]:
    """Cut the image into row-major patch_size squares, zero-padded at the
    right/bottom edges."""
    h, w = image.shape[:2]
    if w != plan.source_width or h != plan.source_height:
        raise ValueError(
            f"image is {w}x{h} but plan was built for "
            f"{plan.source_width}x{plan.source_height}")
    s = plan.patch_size
    padded_shape = (plan.rows * s, plan.cols * s) + image.shape[2:]
    padded = np.zeros(padded_shape, dtype=image.dtype)
    padded[:h, :w] = image
    patches = []
    for r in range(plan.rows):
        for c in range(plan.cols):
            tile = padded[r * s:(r + 1) * s, c * s:(c + 1) * s].copy()
            patches.append(Patch(grid_col=c, grid_row=r, pixels=tile))
    return patches


def stitch(masks: list[np.ndarray], plan: PatchPlan) -> np.ndarray:
    """Reassemble row-major per-patch arrays and crop away the padding."""
    if len(masks) != plan.patch_count:
        raise ValueError(f"expected {plan.patch_count} patches, got {len(masks)}")
    s = plan.patch_size
    for i, m in enumerate(masks):
        if m.shape[:2] != (s, s):
            raise ValueError(f"patch {i} is {m.shape[1]}x{m.shape[0]}, expected {s}x{s}")
    full_shape = (plan.rows * s, plan.cols * s) + masks[0].shape[2:]
    full = np.zeros(full_shape, dtype=masks[0].dtype)
    for i, m in enumerate(masks):
        r, c = divmod(i, plan.cols)
        full[r * s:(r + 1) * s, c * s:(c + 1) * s] = m
    return full[:plan.source_height, :plan.source_width].copy()


def patch_name(image_id: str, grid_row: int, grid_col: int) -> str:
    return f"{image_id}_r{grid_row}_c{grid_col}"


def dump_patches(patches: list[Patch], plan: PatchPlan, directory, image_id: str) -> list[Path]:
    """Write each patch as `{image_id}_r{row}_c{col}.png` plus a
    `{image_id}.plan.json` sidecar; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for p in patches:
        path = directory / (patch_name(image_id, p.grid_row, p.grid_col) + ".png")
        if p.pixels.dtype == np.bool_:
            raster.save_mask(path, p.pixels)
        else:
            raster.save_image(path, p.pixels)
        written.append(path)
    sidecar = directory / f"{image_id}.plan.json"
    sidecar.write_text(plan.to_json())
    written.append(sidecar)
    return written


def load_plan(path) -> PatchPlan:
    return PatchPlan.from_json(Path(path).read_text())
