"""Raster primitives shared by every stage: images, binary masks,
square-element morphology, connected components, and PNG/JPEG IO.

Conventions used throughout the package:

* an image is a ``uint8`` array of shape ``(H, W)`` or ``(H, W, 3)``;
* a mask is a ``bool`` array of shape ``(H, W)`` (foreground = plant);
* mask files are single-channel 8-bit PNG with 0 = background and
  255 = foreground; any nonzero value is normalized to foreground on read;
* pixels outside the image count as background for both erosion and
  dilation, so erosion shrinks at borders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage


def ensure_mask(mask: np.ndarray) -> np.ndarray:
    if not (isinstance(mask, np.ndarray) and mask.ndim == 2 and mask.dtype == np.bool_):
        raise ValueError("expected a 2-D boolean mask")
    return mask


def ensure_image(image: np.ndarray) -> np.ndarray:
    ok = (
        isinstance(image, np.ndarray)
        and image.dtype == np.uint8
        and (image.ndim == 2 or (image.ndim == 3 and image.shape[2] == 3))
        and image.shape[0] >= 1
        and image.shape[1] >= 1
    )
    if not ok:
        raise ValueError("expected a uint8 image of shape (H, W) or (H, W, 3)")
    return image


def luminance(image: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma as float64; grayscale images pass through."""
    ensure_image(image)
    if image.ndim == 2:
        return image.astype(np.float64)
    r, g, b = image[..., 0], image[..., 1], image[..., 2]
    return 0.299 * r + 0.587 * g + 0.114 * b


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in inclusive pixel coordinates.

    Inclusive coordinates keep tight-box arithmetic integer-exact:
    area = (x_max - x_min + 1) * (y_max - y_min + 1).
    """

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    confidence: float = 1.0

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence out of range: {self.confidence}")

    @property
    def width(self) -> int:
        return self.x_max - self.x_min + 1

    @property
    def height(self) -> int:
        return self.y_max - self.y_min + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y_min, self.y_max + 1), slice(self.x_min, self.x_max + 1)

    def contains_point(self, x: int, y: int) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
            confidence=max(self.confidence, other.confidence),
        )

    def translated(self, dx: int, dy: int) -> "BoundingBox":
        return BoundingBox(self.x_min + dx, self.y_min + dy,
                           self.x_max + dx, self.y_max + dy, self.confidence)

    def clamped(self, width: int, height: int) -> "BoundingBox | None":
        """Clip to a width x height grid; None if nothing remains."""
        x0, y0 = max(self.x_min, 0), max(self.y_min, 0)
        x1, y1 = min(self.x_max, width - 1), min(self.y_max, height - 1)
        if x0 > x1 or y0 > y1:
            return None
        return BoundingBox(x0, y0, x1, y1, self.confidence)


@dataclass(frozen=True)
class StructuringElement:
    """Square structuring element; radius 1 is the 3x3 box."""

    radius: int = 1

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")

    @property
    def footprint(self) -> np.ndarray:
        n = 2 * self.radius + 1
        return np.ones((n, n), dtype=bool)


@dataclass(frozen=True)
class ConnectedComponent:
    label: int
    pixel_count: int
    bbox: BoundingBox


_DEFAULT_SE = StructuringElement(1)


def erode(arr: np.ndarray, se: StructuringElement = _DEFAULT_SE) -> np.ndarray:
    """Morphological erosion (min filter); outside pixels are background."""
    if arr.dtype == np.bool_:
        ensure_mask(arr)
        return ndimage.binary_erosion(arr, structure=se.footprint, border_value=0)
    ensure_image(arr)
    if arr.ndim == 2:
        return ndimage.grey_erosion(arr, footprint=se.footprint, mode="constant", cval=0)
    out = np.empty_like(arr)
    for c in range(arr.shape[2]):
        out[..., c] = ndimage.grey_erosion(arr[..., c], footprint=se.footprint,
                                           mode="constant", cval=0)
    return out


def dilate(arr: np.ndarray, se: StructuringElement = _DEFAULT_SE) -> np.ndarray:
    """Morphological dilation (max filter); outside pixels are background."""
    if arr.dtype == np.bool_:
        ensure_mask(arr)
        return ndimage.binary_dilation(arr, structure=se.footprint, border_value=0)
    ensure_image(arr)
    if arr.ndim == 2:
        return ndimage.grey_dilation(arr, footprint=se.footprint, mode="constant", cval=0)
    out = np.empty_like(arr)
    for c in range(arr.shape[2]):
        out[..., c] = ndimage.grey_dilation(arr[..., c], footprint=se.footprint,
                                            mode="constant", cval=0)
    return out


def opening(arr: np.ndarray, se: StructuringElement = _DEFAULT_SE, passes: int = 1) -> np.ndarray:
    """Erosion passes followed by the same number of dilation passes."""
    if passes < 0:
        raise ValueError("passes must be >= 0")
    out = arr
    for _ in range(passes):
        out = erode(out, se)
    for _ in range(passes):
        out = dilate(out, se)
    return out


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def connected_components(mask: np.ndarray, connectivity: int = 8) -> list[ConnectedComponent]:
    """Foreground components labelled 1..K in row-major first-encounter
    order, each with its pixel count and tight bounding box."""
    ensure_mask(mask)
    labels, count = ndimage.label(mask, structure=_structure(connectivity))
    if count == 0:
        return []
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    comps = []
    for label, (ys, xs) in enumerate(ndimage.find_objects(labels), start=1):
        comps.append(ConnectedComponent(
            label=label,
            pixel_count=int(sizes[label]),
            bbox=BoundingBox(xs.start, ys.start, xs.stop - 1, ys.stop - 1),
        ))
    return comps


def mask_from_nonblack(image: np.ndarray, threshold: int = 0) -> np.ndarray:
    """Foreground wherever any channel exceeds the threshold."""
    ensure_image(image)
    if not 0 <= threshold <= 255:
        raise ValueError("threshold must be in [0, 255]")
    channel_max = image if image.ndim == 2 else image.max(axis=2)
    return channel_max > threshold


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path, image: np.ndarray) -> None:
    ensure_image(image)
    Image.fromarray(image).save(path)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 0


def save_mask(path, mask: np.ndarray) -> None:
    ensure_mask(mask)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode="L").save(path)
