"""Promptable segmentation backends and the whole-image pipeline.

The pipeline runs: morphological opening of the sheet, width-driven patch
split, per-patch detection, prompt strategy, per-patch segmentation, and a
deterministic stitch back to full resolution.
"""

from __future__ import annotations

import json
import os
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import raster, tiling
from .errors import BackendError, PatchError
from .prompting import (
    DetectorConfig,
    Detector,
    PromptSet,
    multi_region_prompt,
    single_box_prompt,
)
from .raster import BoundingBox, StructuringElement, luminance

STRATEGIES = ("multi_region", "single_box")


@dataclass(frozen=True)
class SegmenterCapabilities:
    accepts_boxes: bool = True
    accepts_points: bool = True
    native_mask_resolution: int | None = None  # None = full patch resolution

    def __post_init__(self):
        if not (self.accepts_boxes or self.accepts_points):
            raise ValueError("a segmenter must accept at least one prompt kind")


@dataclass
class SegmentationResult:
    mask: np.ndarray
    score: float


class Segmenter(ABC):
    reentrant: bool = True
    capabilities = SegmenterCapabilities()

    @abstractmethod
    def segment(self, patch: np.ndarray, prompts: PromptSet) -> SegmentationResult:
        ...

    def _check_prompts(self, patch, prompts: PromptSet):
        h, w = patch.shape[:2]
        caps = self.capabilities
        if prompts.boxes and not caps.accepts_boxes:
            raise BackendError("backend does not accept box prompts")
        if (prompts.positive_points or prompts.negative_points) and not caps.accepts_points:
            raise BackendError("backend does not accept point prompts")
        for x, y in list(prompts.positive_points) + list(prompts.negative_points):
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"point ({x}, {y}) outside {w}x{h} patch")


@dataclass(frozen=True)
class RegionGrowConfig:
    """Knobs of the deterministic reference backend.

    Fixed defaults, tuned only on synthetic fixtures: growth tolerance of
    32 luminance levels, seeds at or below the 10th luminance percentile
    of the box, and a 24-level spread gate below which a box is treated as
    plant-free.
    """

    intensity_tolerance: float = 32.0
    seed_percentile: float = 10.0
    min_contrast: float = 24.0
    connectivity: int = 8


class RegionGrowingSegmenter(Segmenter):
    """Deterministic region-growing stand-in for a learned promptable model.

    Within each box the darkest pixels seed a region that spreads across
    connected pixels whose luminance stays within the configured tolerance
    of the seed cut; per-box masks are unioned. Positive points seed
    growth directly (patch-wide when outside every box); each negative
    point deletes the mask component under it. Identical inputs always
    produce identical masks.
    """

    def __init__(self, config: RegionGrowConfig | None = None):
        self.config = config or RegionGrowConfig()

    def _grow(self, lum, domain_slices, seed_cut, seed_yx):
        cfg = self.config
        region = lum[domain_slices]
        reachable = region <= seed_cut + cfg.intensity_tolerance
        labels, count = ndimage.label(reachable, structure=raster._structure(cfg.connectivity))
        if count == 0:
            return np.zeros(region.shape, dtype=bool)
        if seed_yx is not None:
            seed_labels = {int(labels[y, x]) for y, x in seed_yx} - {0}
        else:
            seed_labels = set(np.unique(labels[region <= seed_cut]).tolist()) - {0}
        if not seed_labels:
            return np.zeros(region.shape, dtype=bool)
        return np.isin(labels, sorted(seed_labels))

    def segment(self, patch, prompts):
        raster.ensure_image(patch)
        self._check_prompts(patch, prompts)
        cfg = self.config
        lum = luminance(patch)
        h, w = lum.shape
        out = np.zeros((h, w), dtype=bool)

        clamped = [b for b in (box.clamped(w, h) for box in prompts.boxes) if b is not None]
        for box in clamped:
            region = lum[box.slices]
            pts = [(y - box.y_min, x - box.x_min)
                   for x, y in prompts.positive_points if box.contains_point(x, y)]
            if pts:
                seed_cut = max(region[p] for p in pts)
            else:
                lo = float(np.percentile(region, cfg.seed_percentile))
                hi = float(np.percentile(region, 100 - cfg.seed_percentile))
                if hi - lo < cfg.min_contrast:
                    continue
                seed_cut = lo
            out[box.slices] |= self._grow(lum, box.slices, seed_cut, pts or None)

        for x, y in prompts.positive_points:
            if any(b.contains_point(x, y) for b in clamped):
                continue
            full = (slice(0, h), slice(0, w))
            out |= self._grow(lum, full, lum[y, x], [(y, x)])

        for x, y in prompts.negative_points:
            if out[y, x]:
                labels, _ = ndimage.label(out, structure=raster._structure(cfg.connectivity))
                out &= labels != labels[y, x]

        return SegmentationResult(mask=out, score=1.0 if out.any() else 0.0)


def upscale_nearest(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor upscale of a square mask; preserves binarity."""
    native = mask.shape[0]
    if native == size:
        return mask
    idx = (np.arange(size) * native) // size
    return mask[np.ix_(idx, idx)]


class OnnxPromptSegmenter(Segmenter):
    """Adapter around an exported promptable-segmentation model (ONNX).

    The adapter config JSON records the export's input sizes and the
    zero-mean/unit-variance normalization constants, e.g.:

        {"input_size": 1024, "mean": [123.675, 116.28, 103.53],
         "std": [58.395, 57.12, 57.375], "mask_threshold": 0.0,
         "mask_resolution": 256}

    Masks coming back at a fixed native resolution are upscaled to patch
    size by nearest neighbor; results are clipped to the prompt boxes
    unless the pipeline disables clipping.
    """

    reentrant = False
    capabilities = SegmenterCapabilities(accepts_boxes=True, accepts_points=True,
                                         native_mask_resolution=256)

    def __init__(self, model_path, adapter_config=None):
        self.adapter = self._load_adapter_config(adapter_config)
        if self.adapter.get("mask_resolution"):
            self.capabilities = SegmenterCapabilities(
                accepts_boxes=True, accepts_points=True,
                native_mask_resolution=int(self.adapter["mask_resolution"]))
        try:
            import onnxruntime  # noqa: deferred heavy dependency
        except ImportError as exc:
            raise BackendError(
                "onnxruntime is required for model-backed segmentation "
                "(install the 'onnx' extra)") from exc
        try:
            self.session = onnxruntime.InferenceSession(
                str(model_path), providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise BackendError(f"failed to load segmentation model {model_path}: {exc}") from exc

    @staticmethod
    def _load_adapter_config(source) -> dict:
        defaults = {"input_size": 1024, "mean": [123.675, 116.28, 103.53],
                    "std": [58.395, 57.12, 57.375], "mask_threshold": 0.0,
                    "mask_resolution": 256}
        if source is None:
            return defaults
        if isinstance(source, dict):
            return {**defaults, **source}
        return {**defaults, **json.loads(Path(source).read_text())}

    def segment(self, patch, prompts):
        raster.ensure_image(patch)
        self._check_prompts(patch, prompts)
        h, w = patch.shape[:2]
        size = self.adapter["input_size"]
        scale = size / max(h, w)
        img = patch if patch.ndim == 3 else np.stack([patch] * 3, axis=2)
        from PIL import Image

        resized = np.asarray(Image.fromarray(img).resize(
            (max(1, round(w * scale)), max(1, round(h * scale))), Image.BILINEAR))
        canvas = np.zeros((size, size, 3), dtype=np.float32)
        canvas[:resized.shape[0], :resized.shape[1]] = resized
        mean = np.asarray(self.adapter["mean"], dtype=np.float32)
        std = np.asarray(self.adapter["std"], dtype=np.float32)
        tensor = ((canvas - mean) / std).transpose(2, 0, 1)[None]

        box_arr = np.asarray(
            [[b.x_min * scale, b.y_min * scale, (b.x_max + 1) * scale, (b.y_max + 1) * scale]
             for b in prompts.boxes], dtype=np.float32)
        pts = list(prompts.positive_points) + list(prompts.negative_points)
        pt_arr = np.asarray([[x * scale, y * scale] for x, y in pts], dtype=np.float32)
        labels = np.asarray([1] * len(prompts.positive_points)
                            + [0] * len(prompts.negative_points), dtype=np.float32)

        feeds = {"image": tensor}
        if len(box_arr):
            feeds["boxes"] = box_arr[None]
        if len(pt_arr):
            feeds["point_coords"] = pt_arr[None]
            feeds["point_labels"] = labels[None]
        try:
            outputs = self.session.run(None, feeds)
        except Exception as exc:
            raise BackendError(f"segmentation inference failed: {exc}") from exc

        logits = np.asarray(outputs[0])
        scores = np.asarray(outputs[1]).reshape(-1) if len(outputs) > 1 else np.ones(1)
        mask = logits.reshape(logits.shape[-2], logits.shape[-1]) > self.adapter["mask_threshold"]
        if mask.shape[0] != max(h, w):
            mask = upscale_nearest(mask, max(h, w))
        mask = mask[:h, :w]
        return SegmentationResult(mask=mask, score=float(scores[0]))


@dataclass
class PipelineConfig:
    strategy: str = "multi_region"
    patch_size: int | None = None  # None selects by image width
    morph_radius: int = 1
    morph_passes: int = 1
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    clip_to_boxes: bool = True
    workers: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")


@dataclass
class PipelineResult:
    mask: np.ndarray
    plan: tiling.PatchPlan
    patch_boxes: dict[tuple[int, int], list[BoundingBox]]


def _boxes_to_mask(boxes, shape) -> np.ndarray:
    m = np.zeros(shape, dtype=bool)
    for b in boxes:
        m[b.slices] = True
    return m


def _segment_patch(patch, detector, segmenter, config, origin):
    boxes = detector.detect(patch.pixels, origin)
    size = patch.pixels.shape[0]
    boxes = [b for box in boxes if box.confidence >= config.detector.confidence_threshold
             for b in [box.clamped(size, size)] if b is not None]
    if not boxes:
        return np.zeros(patch.pixels.shape[:2], dtype=bool), boxes
    if config.strategy == "single_box":
        prompts = single_box_prompt(boxes)
    else:
        prompts = multi_region_prompt(boxes, config.detector)
    mask = segmenter.segment(patch.pixels, prompts).mask
    if config.clip_to_boxes:
        mask = mask & _boxes_to_mask(prompts.boxes, mask.shape)
    return mask, boxes


def segment_image(image: np.ndarray, detector: Detector, segmenter: Segmenter,
                  config: PipelineConfig | None = None, *,
                  return_details: bool = False):
    """Full pipeline for one sheet; returns the stitched full-size mask
    (or a PipelineResult with the plan and per-patch boxes)."""
    config = config or PipelineConfig()
    raster.ensure_image(image)
    h, w = image.shape[:2]

    pre = image
    if config.morph_passes > 0 and config.morph_radius > 0:
        pre = raster.opening(pre, StructuringElement(config.morph_radius),
                             passes=config.morph_passes)

    size = config.patch_size or tiling.select_patch_size(w)
    plan = tiling.make_plan(w, h, size)
    patches = tiling.split(pre, plan)

    def work(patch):
        origin = (patch.grid_col * size, patch.grid_row * size)
        try:
            return _segment_patch(patch, detector, segmenter, config, origin)
        except Exception as exc:
            raise PatchError(patch.grid_row, patch.grid_col, exc) from exc

    parallel = detector.reentrant and segmenter.reentrant
    workers = config.workers or os.cpu_count() or 1
    if parallel and workers > 1 and len(patches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, patches))
    else:
        results = [work(p) for p in patches]

    masks = [m for m, _ in results]
    full = tiling.stitch(masks, plan)
    if not return_details:
        return full
    patch_boxes = {(p.grid_row, p.grid_col): boxes
                   for p, (_, boxes) in zip(patches, results)}
    return PipelineResult(mask=full, plan=plan, patch_boxes=patch_boxes)
