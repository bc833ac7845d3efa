/**
 * Query form model and its rendering to SQL text.
 *
 * The builder emits the service's canonical form byte for byte (keyword
 * case, spacing, number formatting, clause order), so a form-generated
 * statement comes back unchanged from the parse echo endpoint and the
 * text shown in the query window never flickers after a round trip.
 */
import { Rect, RoiMode } from './types.js';

export type QueryKind = 'filter' | 'topk' | 'aggregation';
export type Comparator = '<' | '<=' | '>' | '>=';
export type MaskAggOp = 'intersect' | 'union';
export type Direction = 'ASC' | 'DESC';

export interface QueryForm {
  kind: QueryKind;
  roiMode: RoiMode;
  /** Pixel rectangle for constant/object ROI modes; ignored for full. */
  rect: Rect | null;
  lv: number;
  uv: number;
  /** Filter predicate: CP(...) cmp threshold. */
  cmp: Comparator;
  threshold: number | null;
  /** Top-k size; optional row cap for aggregations. */
  limit: number | null;
  direction: Direction;
  /** Empty list means no mask_type constraint. */
  maskTypes: number[];
  modelId: number | null;
  /** Grouped mask combine for aggregations. */
  agg: MaskAggOp | null;
  aggThreshold: number;
  /** Ratio preset: intersect(...) / union(...) with an alias column. */
  ratio: boolean;
  alias: string;
}

export function defaultForm(): QueryForm {
  return {
    kind: 'filter',
    roiMode: 'constant',
    rect: null,
    lv: 0.5,
    uv: 1.0,
    cmp: '>',
    threshold: null,
    limit: 25,
    direction: 'DESC',
    maskTypes: [],
    modelId: null,
    agg: 'union',
    aggThreshold: 0.5,
    ratio: false,
    alias: 'iou',
  };
}

/**
 * Range endpoints and mask thresholds keep a decimal point: 1.0, 0.8.
 * Matches the service's shortest-repr output for the fraction-sized
 * magnitudes these fields hold.
 */
export function fmtFloat(x: number): string {
  return Number.isInteger(x) ? x.toFixed(1) : String(x);
}

/** Free-standing numbers drop the decimal point when integral: 5000. */
export function fmtScalar(x: number): string {
  return Number.isInteger(x) ? BigInt(x).toString() : String(x);
}

export function fmtRect(rect: Rect): string {
  return `((${rect.r0}, ${rect.c0}), (${rect.r1}, ${rect.c1}))`;
}

function roiText(form: QueryForm): string {
  if (form.roiMode === 'full') return 'full_img';
  if (form.rect === null) throw new Error('constant ROI needs a rectangle');
  return fmtRect(form.rect);
}

function cpText(form: QueryForm, op: MaskAggOp | null): string {
  const target = op === null ? 'mask' : `${op}(mask > ${fmtFloat(form.aggThreshold)})`;
  const range = `(${fmtFloat(form.lv)}, ${fmtFloat(form.uv)})`;
  return `CP(${target}, ${roiText(form)}, ${range})`;
}

/** WHERE conjuncts in canonical order: predicate, model_id, mask_type. */
function whereText(form: QueryForm, predicate: string | null): string | null {
  const conjuncts: string[] = [];
  if (predicate !== null) conjuncts.push(predicate);
  if (form.modelId !== null) conjuncts.push(`model_id = ${form.modelId}`);
  if (form.maskTypes.length > 0) {
    conjuncts.push(`mask_type IN (${form.maskTypes.join(', ')})`);
  }
  return conjuncts.length > 0 ? `WHERE ${conjuncts.join(' AND ')}` : null;
}

/**
 * Render the form to SQL. Throws when the form is not renderable; call
 * formProblems first to surface issues in the UI instead.
 */
export function buildSql(form: QueryForm): string {
  const parts: string[] = [];
  if (form.kind === 'aggregation') {
    if (form.ratio) {
      const ratio = `${cpText(form, 'intersect')} / ${cpText(form, 'union')}`;
      parts.push(`SELECT image_id, ${ratio} AS ${form.alias}`);
    } else {
      parts.push('SELECT image_id');
    }
  } else {
    parts.push('SELECT mask_id');
  }
  parts.push('FROM MasksDatabaseView');

  let predicate: string | null = null;
  if (form.kind === 'filter') {
    if (form.threshold === null) throw new Error('filter needs a count threshold');
    predicate = `${cpText(form, null)} ${form.cmp} ${fmtScalar(form.threshold)}`;
  }
  const where = whereText(form, predicate);
  if (where !== null) parts.push(where);

  if (form.kind === 'aggregation') {
    parts.push('GROUP BY image_id');
    const body = form.ratio ? form.alias : cpText(form, form.agg);
    parts.push(`ORDER BY ${body} ${form.direction}`);
    if (form.limit !== null) parts.push(`LIMIT ${form.limit}`);
  } else if (form.kind === 'topk') {
    if (form.limit === null) throw new Error('top-k needs a limit');
    parts.push(`ORDER BY ${cpText(form, null)} ${form.direction}`);
    parts.push(`LIMIT ${form.limit}`);
  }
  return parts.join(' ');
}

/** Client-side checks run before any request leaves the page. */
export function formProblems(form: QueryForm): string[] {
  const problems: string[] = [];
  if (!(form.lv < form.uv)) {
    problems.push('lower value bound must be below the upper bound');
  }
  if (form.lv < 0 || form.uv > 1) {
    problems.push('value bounds must stay within [0, 1]');
  }
  if (form.roiMode !== 'full') {
    if (form.rect === null) {
      problems.push('draw or enter a region of interest');
    } else if (form.rect.r1 <= form.rect.r0 || form.rect.c1 <= form.rect.c0) {
      problems.push('region of interest has no area');
    }
  }
  if (form.kind === 'filter' && form.threshold === null) {
    problems.push('filter needs a count threshold');
  }
  if (form.kind === 'topk' && (form.limit === null || form.limit < 1)) {
    problems.push('top-k needs a positive limit');
  }
  if (form.kind === 'aggregation' && !form.ratio && form.agg === null) {
    problems.push('grouped query needs a mask combine (intersect or union)');
  }
  if (form.ratio && form.kind !== 'aggregation') {
    problems.push('ratio columns only apply to grouped queries');
  }
  if (form.ratio && !/^[A-Za-z_][A-Za-z0-9_]*$/.test(form.alias)) {
    problems.push('alias must be a bare identifier');
  }
  return problems;
}
