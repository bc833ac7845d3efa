/**
 * Fixed 256-entry blue-to-red ramp for mask overlays.
 *
 * Entry i is rgb(i, 0, 255 - i): index 0 is pure blue, index 255 pure
 * red. Mask values map linearly, value 0.0 -> entry 0 and 1.0 -> entry
 * 255, so screenshots of the same data stay comparable across sessions.
 */

export const RAMP_SIZE = 256;

export type Rgb = [number, number, number];

export function rampEntry(i: number): Rgb {
  const j = Math.min(Math.max(Math.trunc(i), 0), RAMP_SIZE - 1);
  return [j, 0, RAMP_SIZE - 1 - j];
}

export function valueToIndex(v: number): number {
  if (!Number.isFinite(v)) return 0;
  const clamped = Math.min(Math.max(v, 0), 1);
  return Math.round(clamped * (RAMP_SIZE - 1));
}

export function valueToRgb(v: number): Rgb {
  return rampEntry(valueToIndex(v));
}
