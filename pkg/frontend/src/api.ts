/**
 * Typed client for the mask query service.
 *
 * Every call goes through an injectable fetch, so tests can replay the
 * whole UI against a recorded transport. The client holds no state
 * beyond in-flight bookkeeping: one query at a time per dataset, and a
 * detail fetch that can be cancelled when the user moves on.
 */
import {
  AugmentResponse,
  ConfusionResponse,
  DatasetListResponse,
  DetailResponse,
  ParseResponse,
  QueryResponse,
  RegisterResponse,
} from './types.js';
import { DecodedMask, decodeMask } from './msk1.js';
import { pageSlice } from './gallery.js';

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  code: string;
  status: number;

  constructor(code: string, message: string, status: number) {
    super(message);
    this.name = 'ApiError';
    this.code = code;
    this.status = status;
  }
}

export interface QueryRequest {
  sql: string;
  params?: Record<string, unknown>;
  mode?: 'auto' | 'index' | 'scan';
  threads?: number;
}

export interface RegisterRequest {
  id: string;
  catalog: string;
  index?: string | null;
  build_index?: boolean;
  buckets?: number;
  cell_h?: number;
  cell_w?: number;
}

export interface AugmentRequest {
  image_ids: number[];
  roi_source: 'object' | 'constant';
  roi?: [[number, number], [number, number]] | null;
  seed: number;
}

export interface GalleryItem {
  id: number;
  url: string;
  bytes: ArrayBuffer;
}

const JSON_HEADERS = { 'Content-Type': 'application/json' };

export class Client {
  private base: string;
  private fetchImpl: FetchLike;
  private running = new Set<string>();

  constructor(base = '', fetchImpl: FetchLike = (...args) => fetch(...args)) {
    this.base = base.replace(/\/$/, '');
    this.fetchImpl = fetchImpl;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      throw await this.shapeError(resp);
    }
    return resp.json() as Promise<T>;
  }

  private async shapeError(resp: Response): Promise<ApiError> {
    let code = 'http_error';
    let message = `HTTP ${resp.status}`;
    try {
      const body = await resp.json();
      if (typeof body.code === 'string') code = body.code;
      if (typeof body.message === 'string') message = body.message;
    } catch {
      // non-JSON error body; keep the status line
    }
    return new ApiError(code, message, resp.status);
  }

  listDatasets(): Promise<DatasetListResponse> {
    return this.request('/datasets');
  }

  registerDataset(body: RegisterRequest): Promise<RegisterResponse> {
    return this.request('/datasets', {
      method: 'POST',
      headers: JSON_HEADERS,
      body: JSON.stringify(body),
    });
  }

  confusion(datasetId: string, modelId?: number): Promise<ConfusionResponse> {
    const query = modelId === undefined ? '' : `?model_id=${modelId}`;
    return this.request(`/datasets/${datasetId}/confusion${query}`);
  }

  parseSql(datasetId: string, sql: string, params?: Record<string, unknown>): Promise<ParseResponse> {
    return this.request(`/datasets/${datasetId}/parse`, {
      method: 'POST',
      headers: JSON_HEADERS,
      body: JSON.stringify({ sql, params: params ?? {} }),
    });
  }

  /** One query at a time per dataset; a second submit is refused locally. */
  async runQuery(datasetId: string, body: QueryRequest): Promise<QueryResponse> {
    if (this.running.has(datasetId)) {
      throw new ApiError('busy', `a query is already running for ${datasetId}`, 0);
    }
    this.running.add(datasetId);
    try {
      return await this.request<QueryResponse>(`/datasets/${datasetId}/query`, {
        method: 'POST',
        headers: JSON_HEADERS,
        body: JSON.stringify(body),
      });
    } finally {
      this.running.delete(datasetId);
    }
  }

  queryRunning(datasetId: string): boolean {
    return this.running.has(datasetId);
  }

  detail(sessionId: string, signal?: AbortSignal): Promise<DetailResponse> {
    return this.request(`/query/${sessionId}/detail`, { signal });
  }

  /** Detail fetch with a cancel handle for when the user moves on. */
  fetchDetail(sessionId: string): { promise: Promise<DetailResponse>; cancel: () => void } {
    const controller = new AbortController();
    return {
      promise: this.detail(sessionId, controller.signal),
      cancel: () => controller.abort(),
    };
  }

  augment(datasetId: string, body: AugmentRequest): Promise<AugmentResponse> {
    return this.request(`/datasets/${datasetId}/augment`, {
      method: 'POST',
      headers: JSON_HEADERS,
      body: JSON.stringify(body),
    });
  }

  maskUrl(datasetId: string, maskId: number): string {
    return `${this.base}/datasets/${datasetId}/masks/${maskId}`;
  }

  imageUrl(datasetId: string, imageId: number): string {
    return `${this.base}/datasets/${datasetId}/images/${imageId}`;
  }

  augmentedUrl(datasetId: string, imageId: number, seed: number): string {
    return `${this.base}/datasets/${datasetId}/augmented/${imageId}?seed=${seed}`;
  }

  private async bytes(url: string): Promise<ArrayBuffer> {
    const resp = await this.fetchImpl(url);
    if (!resp.ok) {
      throw await this.shapeError(resp);
    }
    return resp.arrayBuffer();
  }

  async fetchMask(datasetId: string, maskId: number): Promise<DecodedMask> {
    return decodeMask(await this.bytes(this.maskUrl(datasetId, maskId)));
  }

  async fetchImageBytes(datasetId: string, imageId: number): Promise<ArrayBuffer> {
    return this.bytes(this.imageUrl(datasetId, imageId));
  }

  async fetchAugmentedBytes(datasetId: string, imageId: number, seed: number): Promise<ArrayBuffer> {
    return this.bytes(this.augmentedUrl(datasetId, imageId, seed));
  }

  /** Fetch one gallery page of image bytes, in id order. */
  async loadGalleryPage(datasetId: string, imageIds: number[], page: number): Promise<GalleryItem[]> {
    const ids = pageSlice(imageIds, page);
    const items: GalleryItem[] = [];
    for (const id of ids) {
      const url = this.imageUrl(datasetId, id);
      items.push({ id, url, bytes: await this.bytes(url) });
    }
    return items;
  }
}
