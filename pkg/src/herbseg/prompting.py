"""Plant-region detection backends and box-prompt strategies.

Two prompt strategies condition the segmenter:

* single box: one hull box around everything the detector found;
* multi region: one tight box per detected region, which keeps background
  out of the prompts at the cost of more prompts per patch.
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BackendError
from .raster import (
    BoundingBox,
    connected_components,
    ensure_image,
    ensure_mask,
    mask_from_nonblack,
    opening,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorConfig:
    confidence_threshold: float = 0.25
    min_component_pixels: int = 16

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must be in [0, 1]")
        if self.min_component_pixels < 0:
            raise ValueError("min_component_pixels must be >= 0")


@dataclass
class PromptSet:
    """Prompts conditioning one segmentation call. Points are (x, y)."""

    boxes: list[BoundingBox] = field(default_factory=list)
    positive_points: list[tuple[int, int]] = field(default_factory=list)
    negative_points: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not (self.boxes or self.positive_points or self.negative_points):
            raise ValueError("a prompt set needs at least one box or point")


class Detector(ABC):
    """Produces plant-region boxes for one patch.

    ``origin`` is the patch's top-left corner in source-image coordinates;
    detectors that look at pixels ignore it, the mask oracle uses it to
    crop its ground truth. Returned boxes are in patch coordinates.
    """

    reentrant: bool = True

    def __init__(self, config: DetectorConfig | None = None):
        self.config = config or DetectorConfig()

    @abstractmethod
    def detect(self, patch: np.ndarray, origin: tuple[int, int] = (0, 0)) -> list[BoundingBox]:
        ...


class MaskOracleDetector(Detector):
    """Boxes from connected components of a known ground-truth mask.

    Used for dataset generation and tests, where the true stencil exists.
    """

    def __init__(self, mask: np.ndarray, config: DetectorConfig | None = None,
                 connectivity: int = 8):
        super().__init__(config)
        if mask is None:
            raise BackendError("mask oracle requires a ground-truth mask")
        ensure_mask(mask)
        self.mask = mask
        self.connectivity = connectivity

    def detect(self, patch, origin=(0, 0)):
        h, w = patch.shape[:2]
        x0, y0 = origin
        crop = np.zeros((h, w), dtype=bool)
        src = self.mask[y0:y0 + h, x0:x0 + w]
        crop[:src.shape[0], :src.shape[1]] = src
        comps = connected_components(crop, self.connectivity)
        return [c.bbox for c in comps
                if c.pixel_count >= self.config.min_component_pixels]


class HeuristicDetector(Detector):
    """Model-free detection: threshold the per-channel difference from a
    flat background estimate (the patch median), clean it up with an
    opening pass, and box the remaining components."""

    def __init__(self, config: DetectorConfig | None = None,
                 diff_threshold: int = 40, opening_passes: int = 1,
                 connectivity: int = 8):
        super().__init__(config)
        self.diff_threshold = diff_threshold
        self.opening_passes = opening_passes
        self.connectivity = connectivity

    def detect(self, patch, origin=(0, 0)):
        ensure_image(patch)
        flat = patch.reshape(-1, patch.shape[2]) if patch.ndim == 3 else patch.reshape(-1, 1)
        background = np.median(flat, axis=0)
        diff = np.abs(patch.astype(np.int16) - background.astype(np.int16))
        if patch.ndim == 3:
            diff = diff.max(axis=2)
        candidates = diff > self.diff_threshold
        if self.opening_passes:
            candidates = opening(candidates, passes=self.opening_passes)
        comps = connected_components(candidates, self.connectivity)
        return [c.bbox for c in comps
                if c.pixel_count >= self.config.min_component_pixels]


class ModelDetector(Detector):
    """Adapter around an exported detection model in ONNX format.

    The adapter config JSON documents the export's contract:

        {"input_size": 640, "mean": [0, 0, 0], "std": [255, 255, 255],
         "boxes_output": 0, "scores_output": 1, "box_format": "xyxy"}

    The model takes one 3 x S x S float input and returns boxes plus
    scores; boxes are rescaled back to patch coordinates, clamped, and
    filtered by the configured confidence threshold.
    """

    reentrant = False

    def __init__(self, model_path, adapter_config=None, config: DetectorConfig | None = None):
        super().__init__(config)
        self.adapter = self._load_adapter_config(adapter_config)
        try:
            import onnxruntime  # noqa: deferred heavy dependency
        except ImportError as exc:
            raise BackendError(
                "onnxruntime is required for model-backed detection "
                "(install the 'onnx' extra)") from exc
        try:
            self.session = onnxruntime.InferenceSession(
                str(model_path), providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise BackendError(f"failed to load detection model {model_path}: {exc}") from exc

    @staticmethod
    def _load_adapter_config(source) -> dict:
        defaults = {"input_size": 640, "mean": [0.0, 0.0, 0.0],
                    "std": [255.0, 255.0, 255.0],
                    "boxes_output": 0, "scores_output": 1, "box_format": "xyxy"}
        if source is None:
            return defaults
        if isinstance(source, dict):
            return {**defaults, **source}
        return {**defaults, **json.loads(Path(source).read_text())}

    def _preprocess(self, patch):
        from PIL import Image

        size = self.adapter["input_size"]
        if patch.ndim == 2:
            patch = np.stack([patch] * 3, axis=2)
        resized = np.asarray(Image.fromarray(patch).resize((size, size), Image.BILINEAR))
        mean = np.asarray(self.adapter["mean"], dtype=np.float32)
        std = np.asarray(self.adapter["std"], dtype=np.float32)
        tensor = (resized.astype(np.float32) - mean) / std
        return tensor.transpose(2, 0, 1)[None]

    def detect(self, patch, origin=(0, 0)):
        ensure_image(patch)
        h, w = patch.shape[:2]
        size = self.adapter["input_size"]
        try:
            input_name = self.session.get_inputs()[0].name
            outputs = self.session.run(None, {input_name: self._preprocess(patch)})
        except Exception as exc:
            raise BackendError(f"detection inference failed: {exc}") from exc
        raw_boxes = np.asarray(outputs[self.adapter["boxes_output"]]).reshape(-1, 4)
        scores = np.asarray(outputs[self.adapter["scores_output"]]).reshape(-1)
        boxes = []
        for (x0, y0, x1, y1), score in zip(raw_boxes, scores):
            if score < self.config.confidence_threshold:
                continue
            if self.adapter["box_format"] == "cxcywh":
                cx, cy, bw, bh = x0, y0, x1, y1
                x0, y0 = cx - bw / 2, cy - bh / 2
                x1, y1 = cx + bw / 2, cy + bh / 2
            box = BoundingBox(
                int(round(x0 * w / size)), int(round(y0 * h / size)),
                max(int(round(x1 * w / size)) - 1, int(round(x0 * w / size))),
                max(int(round(y1 * h / size)) - 1, int(round(y0 * h / size))),
                confidence=float(min(max(score, 0.0), 1.0)),
            ).clamped(w, h)
            if box is not None:
                boxes.append(box)
        return boxes


def _boxes_from(source, config: DetectorConfig | None, connectivity: int = 8) -> list[BoundingBox]:
    if isinstance(source, np.ndarray):
        ensure_mask(source)
        comps = connected_components(source, connectivity)
        min_px = config.min_component_pixels if config else 0
        return [c.bbox for c in comps if c.pixel_count >= min_px]
    return list(source)


def single_box_prompt(mask_or_boxes) -> PromptSet:
    """One hull box enclosing all plant pixels (or all detector boxes)."""
    if isinstance(mask_or_boxes, np.ndarray):
        ensure_mask(mask_or_boxes)
        ys, xs = np.nonzero(mask_or_boxes)
        if ys.size == 0:
            raise ValueError("cannot build a box prompt from an empty mask")
        hull = BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
    else:
        boxes = list(mask_or_boxes)
        if not boxes:
            raise ValueError("cannot build a box prompt from zero boxes")
        hull = boxes[0]
        for b in boxes[1:]:
            hull = hull.union(b)
    return PromptSet(boxes=[hull])


def multi_region_prompt(mask_or_boxes, config: DetectorConfig | None = None) -> PromptSet:
    """One tight box per connected component (or per detector box)."""
    boxes = _boxes_from(mask_or_boxes, config or DetectorConfig())
    if not boxes:
        raise ValueError("no regions left to prompt with")
    return PromptSet(boxes=boxes)


def plant_to_box_ratio(mask: np.ndarray, boxes: list[BoundingBox]) -> float:
    """Mean, over boxes, of the plant-pixel fraction inside each box."""
    ensure_mask(mask)
    if not boxes:
        raise ValueError("ratio needs at least one box")
    h, w = mask.shape
    ratios = []
    for box in boxes:
        clipped = box.clamped(w, h)
        if clipped is None:
            raise ValueError(f"box {box} lies outside the {w}x{h} mask")
        inside = int(mask[clipped.slices].sum())
        ratios.append(inside / box.area)
    return float(np.mean(ratios))
