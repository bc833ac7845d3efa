/**
 * Browser shell: wires the pure modules to the page.
 *
 * Everything displayed comes out of a service response; this file only
 * moves bytes between fetches, state, and the canvas. All decisions
 * (SQL text, clickability, segment colors, paging) live in the
 * importable modules so they stay testable without a DOM.
 */
import { ApiError, Client } from './api.js';
import { buildGrid, ConfusionGrid, GridCell } from './confusion.js';
import { classify, plotSegments, thresholdX } from './detail.js';
import { clampPage, pageCount, PAGE_SIZE, pageSlice } from './gallery.js';
import { blend, drawRectOutline, maskToRgba } from './overlay.js';
import { decodeImage, imageToRgba } from './pnm.js';
import { dragToRect, Point } from './roi.js';
import { buildSql, formProblems, QueryForm } from './sqlgen.js';
import {
  currentSql,
  editSql,
  initialState,
  inRawMode,
  patchForm,
  recordSession,
  selectCell,
  selectDataset,
  ViewState,
} from './state.js';
import { DetailResponse, QueryResponse } from './types.js';

const client = new Client('');

let state: ViewState = initialState();
let grid: ConfusionGrid | null = null;
let lastQuery: QueryResponse | null = null;
let lastDetail: DetailResponse | null = null;
let detailCancel: (() => void) | null = null;
let galleryIds: number[] = [];
let dragStart: Point | null = null;
let imageDims: { width: number; height: number } | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

function toast(message: string): void {
  const box = el<HTMLDivElement>('toast');
  box.textContent = message;
  box.classList.add('show');
  setTimeout(() => box.classList.remove('show'), 4000);
}

function reportError(err: unknown): void {
  if (err instanceof ApiError) {
    toast(`${err.code}: ${err.message}`);
  } else {
    toast(String(err));
  }
}

// --- datasets ---

async function refreshDatasets(): Promise<void> {
  const resp = await client.listDatasets();
  const select = el<HTMLSelectElement>('dataset-select');
  select.innerHTML = '';
  for (const ds of resp.datasets) {
    const opt = document.createElement('option');
    opt.value = ds.id;
    opt.textContent = `${ds.id} (${ds.masks} masks, ${ds.images} images${ds.indexed ? ', indexed' : ''})`;
    select.appendChild(opt);
  }
  if (resp.datasets.length > 0) {
    const first = resp.datasets[0];
    state = selectDataset(state, first.id);
    select.value = first.id;
    populateModels(first.models);
    await refreshConfusion();
  }
}

function populateModels(models: number[]): void {
  const select = el<HTMLSelectElement>('model-select');
  select.innerHTML = '';
  for (const m of models) {
    const opt = document.createElement('option');
    opt.value = String(m);
    opt.textContent = `model ${m}`;
    select.appendChild(opt);
  }
}

// --- confusion matrix ---

async function refreshConfusion(): Promise<void> {
  if (state.datasetId === null) return;
  const modelValue = el<HTMLSelectElement>('model-select').value;
  const modelId = modelValue === '' ? undefined : Number(modelValue);
  const resp = await client.confusion(state.datasetId, modelId);
  grid = buildGrid(resp);
  el<HTMLSpanElement>('accuracy').textContent =
    `accuracy ${resp.accuracy.toFixed(3)} over ${resp.images} images`;
  renderConfusion();
}

function renderConfusion(): void {
  const table = el<HTMLTableElement>('confusion');
  table.innerHTML = '';
  if (grid === null) return;
  const head = table.insertRow();
  head.insertCell().textContent = 'true \\ pred';
  for (const label of grid.labels) {
    const cell = head.insertCell();
    cell.textContent = String(label);
    cell.className = 'axis';
  }
  for (const row of grid.rows) {
    const tr = table.insertRow();
    const axis = tr.insertCell();
    axis.textContent = String(row[0].trueLabel);
    axis.className = 'axis';
    for (const cell of row) {
      const td = tr.insertCell();
      td.textContent = String(cell.count);
      td.className = cell.diagonal ? 'cell diagonal' : 'cell';
      if (cell.clickable) {
        td.classList.add('clickable');
        td.onclick = () => void openCell(cell);
      } else {
        td.classList.add('disabled');
      }
    }
  }
}

async function openCell(cell: GridCell): Promise<void> {
  if (state.datasetId === null) return;
  state = selectCell(state, { trueLabel: cell.trueLabel, predLabel: cell.predLabel });
  galleryIds = cell.imageIds;
  el<HTMLSpanElement>('gallery-title').textContent =
    `true ${cell.trueLabel} / pred ${cell.predLabel}: ${cell.count} images`;
  await renderGallery();
}

// --- gallery ---

async function renderGallery(): Promise<void> {
  const datasetId = state.datasetId;
  if (datasetId === null) return;
  const pages = pageCount(galleryIds.length);
  state = { ...state, galleryPage: clampPage(state.galleryPage, galleryIds.length) };
  el<HTMLSpanElement>('gallery-page').textContent = `page ${state.galleryPage + 1} / ${pages}`;
  const box = el<HTMLDivElement>('gallery');
  box.innerHTML = '';
  try {
    const items = await client.loadGalleryPage(datasetId, galleryIds, state.galleryPage);
    for (const item of items) {
      box.appendChild(thumbnail(item.bytes, `image ${item.id}`, () => void showImage(item.id)));
    }
  } catch (err) {
    reportError(err);
  }
}

function thumbnail(bytes: ArrayBuffer, title: string, onClick: () => void): HTMLElement {
  const wrap = document.createElement('figure');
  wrap.className = 'thumb';
  const canvas = document.createElement('canvas');
  paintImage(canvas, bytes);
  canvas.onclick = onClick;
  const caption = document.createElement('figcaption');
  caption.textContent = title;
  wrap.appendChild(canvas);
  wrap.appendChild(caption);
  return wrap;
}

function toImageData(rgba: Uint8ClampedArray, width: number, height: number): ImageData {
  // copy onto a plain ArrayBuffer so the DOM constructor accepts it
  const copy = new Uint8ClampedArray(rgba.length);
  copy.set(rgba);
  return new ImageData(copy, width, height);
}

function paintImage(canvas: HTMLCanvasElement, bytes: ArrayBuffer): void {
  const img = decodeImage(bytes);
  canvas.width = img.width;
  canvas.height = img.height;
  const ctx = canvas.getContext('2d');
  if (ctx === null) return;
  ctx.putImageData(toImageData(imageToRgba(img), img.width, img.height), 0, 0);
}

// --- viewer with ROI drag and mask overlay ---

async function showImage(imageId: number, maskId?: number): Promise<void> {
  if (state.datasetId === null) return;
  try {
    const bytes = await client.fetchImageBytes(state.datasetId, imageId);
    const img = decodeImage(bytes);
    imageDims = { width: img.width, height: img.height };
    let rgba = imageToRgba(img);
    if (maskId !== undefined) {
      const mask = await client.fetchMask(state.datasetId, maskId);
      rgba = blend(rgba, maskToRgba(mask), 0.5);
    }
    if (state.form.rect !== null && state.form.roiMode !== 'full') {
      drawRectOutline(rgba, img.width, img.height, state.form.rect);
    }
    const canvas = el<HTMLCanvasElement>('viewer');
    canvas.width = img.width;
    canvas.height = img.height;
    const ctx = canvas.getContext('2d');
    ctx?.putImageData(toImageData(rgba, img.width, img.height), 0, 0);
    el<HTMLSpanElement>('viewer-title').textContent =
      maskId === undefined ? `image ${imageId}` : `image ${imageId} + mask ${maskId}`;
  } catch (err) {
    reportError(err);
  }
}

function canvasPoint(canvas: HTMLCanvasElement, ev: MouseEvent): Point {
  const box = canvas.getBoundingClientRect();
  const scaleX = canvas.width / box.width;
  const scaleY = canvas.height / box.height;
  return { x: (ev.clientX - box.left) * scaleX, y: (ev.clientY - box.top) * scaleY };
}

function wireViewer(): void {
  const canvas = el<HTMLCanvasElement>('viewer');
  canvas.onmousedown = (ev) => {
    dragStart = canvasPoint(canvas, ev);
  };
  canvas.onmouseup = (ev) => {
    if (dragStart === null || imageDims === null) return;
    const rect = dragToRect(dragStart, canvasPoint(canvas, ev), imageDims.width, imageDims.height);
    dragStart = null;
    if (rect === null) {
      toast('selection has no area; region unchanged');
      return;
    }
    state = patchForm(state, { rect, roiMode: 'constant' });
    syncForm();
    syncSql();
  };
}

// --- query form ---

function formPatchers(): void {
  const kind = el<HTMLSelectElement>('kind');
  kind.onchange = () => {
    state = patchForm(state, { kind: kind.value as QueryForm['kind'] });
    syncForm();
    syncSql();
  };
  const bind = (id: string, apply: (value: string) => Partial<QueryForm>) => {
    const input = el<HTMLInputElement | HTMLSelectElement>(id);
    input.onchange = () => {
      state = patchForm(state, apply(input.value));
      syncForm();
      syncSql();
    };
  };
  bind('roi-mode', (v) => ({ roiMode: v as QueryForm['roiMode'] }));
  bind('lv', (v) => ({ lv: Number(v) }));
  bind('uv', (v) => ({ uv: Number(v) }));
  bind('cmp', (v) => ({ cmp: v as QueryForm['cmp'] }));
  bind('threshold', (v) => ({ threshold: v === '' ? null : Number(v) }));
  bind('limit', (v) => ({ limit: v === '' ? null : Number(v) }));
  bind('direction', (v) => ({ direction: v as QueryForm['direction'] }));
  bind('mask-types', (v) => ({
    maskTypes: v.trim() === '' ? [] : v.split(',').map((s) => Number(s.trim())),
  }));
  bind('model-id', (v) => ({ modelId: v === '' ? null : Number(v) }));
  bind('agg', (v) => ({ agg: v === 'none' ? null : (v as 'intersect' | 'union') }));
  bind('agg-threshold', (v) => ({ aggThreshold: Number(v) }));
  const ratio = el<HTMLInputElement>('ratio');
  ratio.onchange = () => {
    state = patchForm(state, { ratio: ratio.checked });
    syncForm();
    syncSql();
  };
}

function syncForm(): void {
  const f = state.form;
  el<HTMLSelectElement>('kind').value = f.kind;
  el<HTMLSelectElement>('roi-mode').value = f.roiMode;
  el<HTMLInputElement>('lv').value = String(f.lv);
  el<HTMLInputElement>('uv').value = String(f.uv);
  el<HTMLSelectElement>('cmp').value = f.cmp;
  el<HTMLInputElement>('threshold').value = f.threshold === null ? '' : String(f.threshold);
  el<HTMLInputElement>('limit').value = f.limit === null ? '' : String(f.limit);
  el<HTMLSelectElement>('direction').value = f.direction;
  el<HTMLInputElement>('mask-types').value = f.maskTypes.join(', ');
  el<HTMLInputElement>('model-id').value = f.modelId === null ? '' : String(f.modelId);
  el<HTMLSelectElement>('agg').value = f.agg ?? 'none';
  el<HTMLInputElement>('agg-threshold').value = String(f.aggThreshold);
  el<HTMLInputElement>('ratio').checked = f.ratio;
  el<HTMLSpanElement>('rect-text').textContent =
    f.rect === null ? 'none' : `((${f.rect.r0}, ${f.rect.c0}), (${f.rect.r1}, ${f.rect.c1}))`;
}

function syncSql(): void {
  const box = el<HTMLTextAreaElement>('sql');
  const problems = inRawMode(state) ? [] : formProblems(state.form);
  el<HTMLDivElement>('problems').textContent = problems.join('; ');
  if (!inRawMode(state)) {
    box.value = problems.length === 0 ? buildSql(state.form) : '';
  }
  el<HTMLSpanElement>('sql-mode').textContent = inRawMode(state) ? 'raw' : 'from form';
}

function wireSqlWindow(): void {
  const box = el<HTMLTextAreaElement>('sql');
  box.oninput = () => {
    state = editSql(state, box.value);
    el<HTMLSpanElement>('sql-mode').textContent = 'raw';
  };
}

// --- running queries ---

async function runQuery(): Promise<void> {
  if (state.datasetId === null) return;
  if (!inRawMode(state)) {
    const problems = formProblems(state.form);
    if (problems.length > 0) {
      toast(problems[0]);
      return;
    }
  }
  const sql = currentSql(state);
  try {
    const echo = await client.parseSql(state.datasetId, sql);
    const resp = await client.runQuery(state.datasetId, { sql: echo.sql });
    lastQuery = resp;
    state = recordSession(state, resp.session_id);
    renderRows(resp);
    renderStats(resp);
    await refreshDetail();
  } catch (err) {
    reportError(err);
  }
}

function renderRows(resp: QueryResponse): void {
  const table = el<HTMLTableElement>('rows');
  table.innerHTML = '';
  const head = table.insertRow();
  for (const name of ['key', 'value', 'image', 'masks']) {
    const cell = head.insertCell();
    cell.textContent = name;
    cell.className = 'axis';
  }
  for (const row of resp.rows.slice(0, 200)) {
    const tr = table.insertRow();
    tr.insertCell().textContent = String(row.key);
    tr.insertCell().textContent = row.value === null ? '(bounds only)' : String(row.value);
    tr.insertCell().textContent = row.image_id === null ? '' : String(row.image_id);
    tr.insertCell().textContent = row.masks.join(', ');
    if (row.image_id !== null) {
      tr.classList.add('clickable');
      const imageId = row.image_id;
      const maskId = row.masks.length > 0 ? row.masks[0] : undefined;
      tr.onclick = () => void showImage(imageId, maskId);
    }
  }
}

function renderStats(resp: QueryResponse): void {
  const s = resp.stats;
  el<HTMLDivElement>('stats').textContent =
    `${resp.rows.length} rows | candidates ${s.total_candidates}, accepted ${s.accepted}, ` +
    `pruned ${s.pruned}, verified ${s.verified}, loaded ${s.masks_loaded} ` +
    `(fraction ${s.fml.toFixed(3)}) in ${s.wall_time.toFixed(3)}s`;
}

// --- detail view ---

async function refreshDetail(): Promise<void> {
  if (state.sessionId === null) return;
  if (detailCancel !== null) detailCancel();
  const { promise, cancel } = client.fetchDetail(state.sessionId);
  detailCancel = cancel;
  try {
    lastDetail = await promise;
    const slider = el<HTMLInputElement>('threshold-slider');
    const [lo, hi] = lastDetail.bound_histogram.range;
    slider.min = String(lo);
    slider.max = String(hi);
    slider.step = 'any';
    slider.value = String(lastDetail.threshold ?? (lo + hi) / 2);
    renderDetail();
  } catch (err) {
    if (!(err instanceof DOMException && err.name === 'AbortError')) {
      reportError(err);
    }
  } finally {
    detailCancel = null;
  }
}

function renderDetail(): void {
  const svg = el<HTMLElement>('segments');
  svg.innerHTML = '';
  if (lastDetail === null) return;
  const t = Number(el<HTMLInputElement>('threshold-slider').value);
  const cmp = lastDetail.cmp ?? '>';
  const hasPredicate = lastDetail.threshold !== undefined;
  const segments = plotSegments(lastDetail, t, cmp);
  const rowHeight = 6;
  const width = 640;
  svg.setAttribute('viewBox', `0 0 ${width} ${Math.max(segments.length, 1) * rowHeight + 10}`);
  const ns = 'http://www.w3.org/2000/svg';
  segments.forEach((seg, i) => {
    const y = 5 + i * rowHeight;
    const line = document.createElementNS(ns, 'line');
    line.setAttribute('x1', String(seg.x0 * width));
    line.setAttribute('x2', String(Math.max(seg.x1 * width, seg.x0 * width + 1)));
    line.setAttribute('y1', String(y));
    line.setAttribute('y2', String(y));
    const decision = hasPredicate ? classify(seg.lower, seg.upper, cmp, t) : null;
    line.setAttribute('class', decision === null ? 'seg' : `seg ${decision}`);
    svg.appendChild(line);
  });
  if (hasPredicate) {
    const x = thresholdX(lastDetail, t) * width;
    const line = document.createElementNS(ns, 'line');
    line.setAttribute('x1', String(x));
    line.setAttribute('x2', String(x));
    line.setAttribute('y1', '0');
    line.setAttribute('y2', String(Math.max(segments.length, 1) * rowHeight + 10));
    line.setAttribute('class', 'threshold');
    svg.appendChild(line);
  }
  const d = lastDetail;
  el<HTMLDivElement>('detail-counts').textContent =
    `candidates ${d.total_candidates} = accepted ${d.accepted} + pruned ${d.pruned} ` +
    `+ verified ${d.verified}; excluded groups ${d.groups_excluded}; sampled ${d.segments.length}`;
}

// --- augmentation ---

async function runAugment(): Promise<void> {
  if (state.datasetId === null) return;
  const seed = Number(el<HTMLInputElement>('aug-seed').value);
  const source = el<HTMLSelectElement>('aug-source').value as 'object' | 'constant';
  const ids = pageSlice(galleryIds, state.galleryPage).slice(0, 4);
  if (ids.length === 0) {
    toast('pick a confusion cell first: augmentation works on its images');
    return;
  }
  const rect = state.form.rect;
  const body = {
    image_ids: ids,
    roi_source: source,
    roi: source === 'constant' && rect !== null
      ? ([[rect.r0, rect.c0], [rect.r1, rect.c1]] as [[number, number], [number, number]])
      : null,
    seed,
  };
  try {
    const resp = await client.augment(state.datasetId, body);
    const box = el<HTMLDivElement>('aug-pairs');
    box.innerHTML = '';
    for (const out of resp.outputs) {
      const before = await client.fetchImageBytes(state.datasetId, out.image_id);
      const after = await client.fetchAugmentedBytes(state.datasetId, out.image_id, resp.seed);
      const pair = document.createElement('div');
      pair.className = 'pair';
      pair.appendChild(thumbnail(before, `image ${out.image_id}`, () => undefined));
      pair.appendChild(thumbnail(after, `seed ${resp.seed}`, () => undefined));
      box.appendChild(pair);
    }
  } catch (err) {
    reportError(err);
  }
}

// --- boot ---

function wire(): void {
  el<HTMLSelectElement>('dataset-select').onchange = async (ev) => {
    const id = (ev.target as HTMLSelectElement).value;
    state = selectDataset(state, id);
    const resp = await client.listDatasets();
    const ds = resp.datasets.find((d) => d.id === id);
    if (ds !== undefined) populateModels(ds.models);
    await refreshConfusion();
  };
  el<HTMLSelectElement>('model-select').onchange = () => void refreshConfusion();
  el<HTMLButtonElement>('run').onclick = () => void runQuery();
  el<HTMLButtonElement>('detail-refresh').onclick = () => void refreshDetail();
  el<HTMLInputElement>('threshold-slider').oninput = () => renderDetail();
  el<HTMLButtonElement>('augment').onclick = () => void runAugment();
  el<HTMLButtonElement>('gallery-prev').onclick = () => {
    state = { ...state, galleryPage: state.galleryPage - 1 };
    void renderGallery();
  };
  el<HTMLButtonElement>('gallery-next').onclick = () => {
    state = { ...state, galleryPage: state.galleryPage + 1 };
    void renderGallery();
  };
  formPatchers();
  wireSqlWindow();
  wireViewer();
  syncForm();
  syncSql();
}

declare global {
  interface Window {
    maskqueryUi: { pageSize: number };
  }
}

if (typeof document !== 'undefined') {
  window.maskqueryUi = { pageSize: PAGE_SIZE };
  wire();
  refreshDatasets().catch(reportError);
}
