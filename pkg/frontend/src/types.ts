/**
 * Shared shapes: service payloads and the geometry the view layer passes
 * around. Field names mirror the JSON the service emits, so responses can
 * be used as-is without mapping layers.
 */

/** Half-open pixel rectangle: rows [r0, r1), columns [c0, c1). */
export interface Rect {
  r0: number;
  c0: number;
  r1: number;
  c1: number;
}

export type RoiMode = 'constant' | 'object' | 'full';

export interface DatasetSummary {
  id: string;
  masks: number;
  images: number;
  models: number[];
  mask_types: number[];
  indexed: boolean;
}

export interface DatasetListResponse {
  datasets: DatasetSummary[];
}

export interface RegisterResponse {
  id: string;
  masks: number;
  images: number;
  indexed: boolean;
}

export interface ConfusionCell {
  true_label: number;
  pred_label: number;
  image_ids: number[];
}

export interface ConfusionResponse {
  cells: ConfusionCell[];
  accuracy: number;
  images: number;
}

export interface ParseResponse {
  sql: string;
  kind: string;
}

export interface ResultRow {
  key: number;
  value: number | null;
  image_id: number | null;
  masks: number[];
  mask_urls: string[];
  image_url: string | null;
}

export interface QueryStats {
  total_candidates: number;
  masks_loaded: number;
  fml: number;
  accepted: number;
  pruned: number;
  verified: number;
  groups_excluded: number;
  wall_time: number;
  bound_histogram: BoundHistogram;
  bounds_sample: [number, number, number][];
}

export interface BoundHistogram {
  range: [number, number];
  lower: number[];
  upper: number[];
}

export interface QueryResponse {
  session_id: string;
  sql: string;
  kind: string;
  rows: ResultRow[];
  stats: QueryStats;
}

export interface Segment {
  key: number;
  lower: number;
  upper: number;
}

export interface DetailResponse {
  session_id: string;
  dataset_id: string;
  sql: string;
  kind: string;
  total_candidates: number;
  accepted: number;
  pruned: number;
  verified: number;
  masks_loaded: number;
  groups_excluded: number;
  fml: number;
  wall_time: number;
  bound_histogram: BoundHistogram;
  segments: Segment[];
  threshold?: number;
  cmp?: string;
}

export interface AugmentOutput {
  image_id: number;
  path: string;
  url: string;
}

export interface AugmentResponse {
  seed: number;
  outputs: AugmentOutput[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
}
