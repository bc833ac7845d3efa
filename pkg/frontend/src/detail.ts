/**
 * Session detail model: per-mask (lower, upper) bound segments plotted
 * against the decision threshold.
 *
 * Dragging the threshold line recolors segments locally with the same
 * decision rule the engine applies, so exploring "what if the cutoff
 * moved" costs no requests. Aligned queries collapse every segment to
 * a point, which is the visual signature of a zero-load run.
 */
import { DetailResponse, Segment } from './types.js';

export type Decision = 'pass' | 'fail' | 'straddle';

/** Counts are a partition: accepted + pruned + verified = candidates. */
export function countsConsistent(d: DetailResponse): boolean {
  return d.accepted + d.pruned + d.verified === d.total_candidates;
}

/**
 * Decide a segment against `CP cmp t`. 'pass' and 'fail' are certain
 * from the bounds alone; 'straddle' is the case the engine verifies by
 * loading the mask.
 */
export function classify(lower: number, upper: number, cmp: string, t: number): Decision {
  if (cmp === '>') {
    return lower > t ? 'pass' : upper <= t ? 'fail' : 'straddle';
  }
  if (cmp === '>=') {
    return lower >= t ? 'pass' : upper < t ? 'fail' : 'straddle';
  }
  if (cmp === '<') {
    return upper < t ? 'pass' : lower >= t ? 'fail' : 'straddle';
  }
  if (cmp === '<=') {
    return upper <= t ? 'pass' : lower > t ? 'fail' : 'straddle';
  }
  throw new Error(`unknown comparator ${cmp}`);
}

export interface PlotSegment {
  key: number;
  lower: number;
  upper: number;
  /** Horizontal extent normalized to [0, 1] of the histogram range. */
  x0: number;
  x1: number;
  degenerate: boolean;
  decision: Decision | null;
}

/**
 * Normalize segments for drawing. `threshold`/`cmp` default to the
 * response's own predicate when present; pass an override while the
 * user drags the threshold line.
 */
export function plotSegments(d: DetailResponse, threshold?: number, cmp?: string): PlotSegment[] {
  const t = threshold ?? d.threshold;
  const c = cmp ?? d.cmp;
  const [lo, hi] = d.bound_histogram.range;
  const span = Math.max(hi - lo, 1e-9);
  return d.segments.map((s) => ({
    key: s.key,
    lower: s.lower,
    upper: s.upper,
    x0: (s.lower - lo) / span,
    x1: (s.upper - lo) / span,
    degenerate: s.lower === s.upper,
    decision: t !== undefined && c !== undefined ? classify(s.lower, s.upper, c, t) : null,
  }));
}

export function allCollapsed(segments: Segment[]): boolean {
  return segments.every((s) => s.lower === s.upper);
}

/** Normalized x position of the threshold line on the segment plot. */
export function thresholdX(d: DetailResponse, threshold: number): number {
  const [lo, hi] = d.bound_histogram.range;
  const span = Math.max(hi - lo, 1e-9);
  return Math.min(Math.max((threshold - lo) / span, 0), 1);
}
