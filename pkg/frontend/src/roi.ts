/**
 * Rectangle selection on the image canvas.
 */
import { Rect } from './types.js';

export interface Point {
  x: number;
  y: number;
}

/**
 * Convert a pointer drag to a half-open pixel rectangle.
 *
 * Canvas coordinates are (x, y); the rectangle is (row, col), so y maps
 * to rows and x to columns. Points clamp to the image bounds and the
 * drag direction does not matter. A selection with no interior after
 * clamping yields null.
 */
export function dragToRect(start: Point, end: Point, width: number, height: number): Rect | null {
  const col = (v: number) => Math.min(Math.max(Math.round(v), 0), width);
  const row = (v: number) => Math.min(Math.max(Math.round(v), 0), height);
  const c0 = Math.min(col(start.x), col(end.x));
  const c1 = Math.max(col(start.x), col(end.x));
  const r0 = Math.min(row(start.y), row(end.y));
  const r1 = Math.max(row(start.y), row(end.y));
  if (r1 <= r0 || c1 <= c0) return null;
  return { r0, c0, r1, c1 };
}

/** Scale a rectangle drawn on a displayed canvas back to image pixels. */
export function unscaleRect(rect: Rect, scaleX: number, scaleY: number): Rect {
  return {
    r0: Math.round(rect.r0 / scaleY),
    c0: Math.round(rect.c0 / scaleX),
    r1: Math.round(rect.r1 / scaleY),
    c1: Math.round(rect.c1 / scaleX),
  };
}
