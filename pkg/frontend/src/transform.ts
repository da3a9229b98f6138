/** Affine view transform between canvas space and image pixel space.
 *
 * Rendering draws the image scaled by `zoom` and shifted by `(panX, panY)`,
 * so canvas = image * zoom + pan, and the click mapping is its exact
 * inverse: image = (canvas - pan) / zoom.
 */

export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export const IDENTITY: ViewTransform = { zoom: 1, panX: 0, panY: 0 };

export function canvasToImage(
  t: ViewTransform,
  canvasX: number,
  canvasY: number,
): { x: number; y: number } {
  return { x: (canvasX - t.panX) / t.zoom, y: (canvasY - t.panY) / t.zoom };
}

export function imageToCanvas(
  t: ViewTransform,
  imageX: number,
  imageY: number,
): { x: number; y: number } {
  return { x: imageX * t.zoom + t.panX, y: imageY * t.zoom + t.panY };
}

/** Map a click to integer pixel coordinates; null when outside the image. */
export function canvasToPixel(
  t: ViewTransform,
  canvasX: number,
  canvasY: number,
  imageWidth: number,
  imageHeight: number,
): { x: number; y: number } | null {
  const pos = canvasToImage(t, canvasX, canvasY);
  const x = Math.floor(pos.x);
  const y = Math.floor(pos.y);
  if (x < 0 || y < 0 || x >= imageWidth || y >= imageHeight) return null;
  return { x, y };
}

/** Zoom about a fixed canvas point, keeping that point stationary. */
export function zoomAround(
  t: ViewTransform,
  canvasX: number,
  canvasY: number,
  factor: number,
  minZoom = 0.25,
  maxZoom = 4,
): ViewTransform {
  const zoom = Math.min(maxZoom, Math.max(minZoom, t.zoom * factor));
  const anchor = canvasToImage(t, canvasX, canvasY);
  return {
    zoom,
    panX: canvasX - anchor.x * zoom,
    panY: canvasY - anchor.y * zoom,
  };
}

export function panBy(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { zoom: t.zoom, panX: t.panX + dx, panY: t.panY + dy };
}
