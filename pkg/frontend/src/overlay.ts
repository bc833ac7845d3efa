/**
 * Overlay compositing on raw RGBA buffers.
 *
 * Pure byte-level helpers so rendering is testable without a canvas;
 * the app copies results into an ImageData for display.
 */
import { DecodedMask } from './msk1.js';
import { valueToRgb, Rgb } from './colormap.js';
import { Rect } from './types.js';

/** Colorize a decoded mask through the ramp into an opaque RGBA buffer. */
export function maskToRgba(mask: DecodedMask): Uint8ClampedArray {
  const out = new Uint8ClampedArray(mask.height * mask.width * 4);
  for (let i = 0; i < mask.data.length; i++) {
    const [r, g, b] = valueToRgb(mask.data[i]);
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = 255;
  }
  return out;
}

/**
 * Alpha-blend `top` over `base`: out = (1 - alpha) * base + alpha * top
 * per channel, output fully opaque. Buffers must be the same length.
 */
export function blend(base: Uint8ClampedArray, top: Uint8ClampedArray, alpha: number): Uint8ClampedArray {
  if (base.length !== top.length) {
    throw new Error(`buffer size mismatch: ${base.length} vs ${top.length}`);
  }
  const a = Math.min(Math.max(alpha, 0), 1);
  const out = new Uint8ClampedArray(base.length);
  for (let i = 0; i < base.length; i += 4) {
    out[i] = (1 - a) * base[i] + a * top[i];
    out[i + 1] = (1 - a) * base[i + 1] + a * top[i + 1];
    out[i + 2] = (1 - a) * base[i + 2] + a * top[i + 2];
    out[i + 3] = 255;
  }
  return out;
}

/**
 * Draw a 1px rectangle outline in place. The border hugs the inside of
 * the half-open rectangle: rows r0 and r1-1, columns c0 and c1-1.
 */
export function drawRectOutline(
  rgba: Uint8ClampedArray,
  width: number,
  height: number,
  rect: Rect,
  color: Rgb = [255, 255, 0],
): void {
  const r0 = Math.max(rect.r0, 0);
  const c0 = Math.max(rect.c0, 0);
  const r1 = Math.min(rect.r1, height);
  const c1 = Math.min(rect.c1, width);
  if (r1 <= r0 || c1 <= c0) return;
  const put = (r: number, c: number) => {
    const i = 4 * (r * width + c);
    rgba[i] = color[0];
    rgba[i + 1] = color[1];
    rgba[i + 2] = color[2];
    rgba[i + 3] = 255;
  };
  for (let c = c0; c < c1; c++) {
    put(r0, c);
    put(r1 - 1, c);
  }
  for (let r = r0; r < r1; r++) {
    put(r, c0);
    put(r, c1 - 1);
  }
}

/** Expand a single-channel grayscale byte image to opaque RGBA. */
export function grayToRgba(gray: Uint8Array | Uint8ClampedArray): Uint8ClampedArray {
  const out = new Uint8ClampedArray(gray.length * 4);
  for (let i = 0; i < gray.length; i++) {
    out[4 * i] = gray[i];
    out[4 * i + 1] = gray[i];
    out[4 * i + 2] = gray[i];
    out[4 * i + 3] = 255;
  }
  return out;
}
