"""Mask analytics: taxon heatmaps, coverage statistics, and
segmentation-driven cropping of sheets to their plant content."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import BoundingBox, ensure_image, ensure_mask, save_image


@dataclass
class HeatMap:
    values: np.ndarray  # float64 in [0, 1], row-major
    sample_count: int

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def _scale_nearest(mask: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = mask.shape
    rows = (np.arange(new_h) * h) // new_h
    cols = (np.arange(new_w) * w) // new_w
    return mask[np.ix_(rows, cols)]


def _place(mask: np.ndarray, canvas_h: int, canvas_w: int, alignment: str) -> np.ndarray:
    h, w = mask.shape
    if h > canvas_h or w > canvas_w:
        factor = min(canvas_h / h, canvas_w / w)
        mask = _scale_nearest(mask, max(1, int(h * factor)), max(1, int(w * factor)))
        h, w = mask.shape
    out = np.zeros((canvas_h, canvas_w), dtype=bool)
    if alignment == "center":
        top, left = (canvas_h - h) // 2, (canvas_w - w) // 2
    elif alignment == "none":
        top, left = 0, 0
    else:
        raise ValueError(f"unknown alignment {alignment!r}")
    out[top:top + h, left:left + w] = mask
    return out


def heatmap(masks: list[np.ndarray], canvas: tuple[int, int] | None = None,
            alignment: str = "center") -> HeatMap:
    """Per-pixel foreground frequency across aligned masks.

    The canvas defaults to the dimensions of the mask holding the largest
    specimen (most foreground pixels); smaller masks are center-padded
    onto it, larger ones scaled down to fit first.
    """
    if not masks:
        raise ValueError("heatmap needs at least one mask")
    for m in masks:
        ensure_mask(m)
    if canvas is None:
        biggest = max(masks, key=lambda m: int(m.sum()))
        cw, ch = biggest.shape[1], biggest.shape[0]
    else:
        cw, ch = canvas
    acc = np.zeros((ch, cw), dtype=np.float64)
    for m in masks:
        acc += _place(m, ch, cw, alignment)
    return HeatMap(values=acc / len(masks), sample_count=len(masks))


# Monochrome-to-color ramp, anchored (value -> RGB) at:
#   0.00 black, 0.25 violet, 0.50 red, 0.75 yellow, 1.00 white,
# linearly interpolated to 256 entries. A fixed integer table keeps
# rendered heatmaps bit-stable across platforms.
_RAMP_ANCHORS = ((0.00, (0, 0, 0)), (0.25, (128, 0, 128)), (0.50, (255, 0, 0)),
                 (0.75, (255, 255, 0)), (1.00, (255, 255, 255)))


def heat_lut() -> np.ndarray:
    lut = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        v = i / 255.0
        for (v0, c0), (v1, c1) in zip(_RAMP_ANCHORS, _RAMP_ANCHORS[1:]):
            if v0 <= v <= v1:
                t = 0.0 if v1 == v0 else (v - v0) / (v1 - v0)
                lut[i] = [int(round(a + t * (b - a))) for a, b in zip(c0, c1)]
                break
    return lut


_LUT = heat_lut()


def heatmap_to_rgb(hm: HeatMap) -> np.ndarray:
    idx = np.clip(np.round(hm.values * 255.0), 0, 255).astype(np.uint8)
    return _LUT[idx]


def write_heatmap(hm: HeatMap, png_path, f32_path=None) -> None:
    """Write the color rendering plus a raw float32 sidecar for exact use."""
    save_image(png_path, heatmap_to_rgb(hm))
    if f32_path is None:
        f32_path = Path(png_path).with_suffix(".f32")
    Path(f32_path).write_bytes(hm.values.astype("<f4").tobytes())


def read_heatmap_values(f32_path, width: int, height: int) -> np.ndarray:
    raw = np.frombuffer(Path(f32_path).read_bytes(), dtype="<f4")
    return raw.reshape(height, width).astype(np.float64)


@dataclass(frozen=True)
class CoverageStat:
    taxon: str
    plant_pct: float
    background_pct: float
    image_count: int


def coverage(groups: dict[str, list[np.ndarray]]) -> list[CoverageStat]:
    """Mean plant/background percentages per taxon, sorted by descending
    plant coverage."""
    stats = []
    for taxon, masks in groups.items():
        if not masks:
            raise ValueError(f"taxon {taxon!r} has no masks")
        fractions = [float(m.sum()) / m.size for m in map(ensure_mask, masks)]
        plant = float(np.mean(fractions)) * 100.0
        stats.append(CoverageStat(taxon=taxon, plant_pct=plant,
                                  background_pct=100.0 - plant,
                                  image_count=len(masks)))
    return sorted(stats, key=lambda s: (-s.plant_pct, s.taxon))


def crop_to_content(image: np.ndarray, mask: np.ndarray, margin: int = 0,
                    zero_background: bool = True):
    """Crop image and mask to the mask's tight box grown by ``margin``.

    Background pixels of the returned image are zeroed by default, which
    matches the segmented rendering fed to downstream classifiers; pass
    zero_background=False to keep them.
    """
    ensure_image(image)
    ensure_mask(mask)
    if image.shape[:2] != mask.shape:
        raise ValueError("image and mask dimensions differ")
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValueError("cannot crop an empty mask")
    h, w = mask.shape
    box = BoundingBox(
        max(int(xs.min()) - margin, 0),
        max(int(ys.min()) - margin, 0),
        min(int(xs.max()) + margin, w - 1),
        min(int(ys.max()) + margin, h - 1),
    )
    cropped_mask = mask[box.slices].copy()
    cropped_image = image[box.slices].copy()
    if zero_background:
        cropped_image[~cropped_mask] = 0
    return cropped_image, cropped_mask, box
