/** Mask overlay colorization. The mask arrives as server-rendered
 * grayscale pixels; this module only recolors them into an RGBA layer
 * and never changes which pixels are foreground. */

export type Rgb = readonly [number, number, number];

export const POSITIVE_MARKER: Rgb = [220, 40, 40]; // red
export const NEGATIVE_MARKER: Rgb = [40, 80, 220]; // blue
export const DEFAULT_TINT: Rgb = [60, 200, 90];
export const DEFAULT_OPACITY = 0.5;

/** Turn grayscale mask pixels (0 = background, nonzero = foreground)
 * into a premultiplied-free RGBA overlay with the given tint/opacity. */
export function colorizeMask(
  gray: Uint8Array | Uint8ClampedArray,
  width: number,
  height: number,
  tint: Rgb = DEFAULT_TINT,
  opacity: number = DEFAULT_OPACITY,
): Uint8ClampedArray {
  if (gray.length !== width * height) {
    throw new Error(`mask has ${gray.length} pixels, expected ${width * height}`);
  }
  const alpha = Math.round(Math.min(1, Math.max(0, opacity)) * 255);
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < gray.length; i++) {
    if (gray[i] !== 0) {
      rgba[i * 4] = tint[0];
      rgba[i * 4 + 1] = tint[1];
      rgba[i * 4 + 2] = tint[2];
      rgba[i * 4 + 3] = alpha;
    }
  }
  return rgba;
}

/** Extract the foreground flags from RGBA image data decoded off a mask
 * PNG (any nonzero channel means foreground). */
export function foregroundFromRgba(rgba: Uint8ClampedArray, width: number, height: number): Uint8Array {
  const gray = new Uint8Array(width * height);
  for (let i = 0; i < gray.length; i++) {
    gray[i] = rgba[i * 4] || rgba[i * 4 + 1] || rgba[i * 4 + 2] ? 255 : 0;
  }
  return gray;
}
