/**
 * Recorded-transport helpers: tests drive the client against an
 * in-memory fetch and assert on the exact requests it issued.
 */
import { FetchLike } from '../src/api.js';

export interface RecordedCall {
  url: string;
  init?: RequestInit;
}

export type Route = (url: string, init?: RequestInit) => Response | Promise<Response>;

export function mockTransport(route: Route): { fetchImpl: FetchLike; calls: RecordedCall[] } {
  const calls: RecordedCall[] = [];
  const fetchImpl: FetchLike = async (url, init) => {
    calls.push({ url, init });
    return route(url, init);
  };
  return { fetchImpl, calls };
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

export function bytesResponse(bytes: Uint8Array, status = 200): Response {
  return new Response(bytes, { status });
}

/** A response that never arrives but honors the abort signal. */
export function hangUntilAborted(url: string, init?: RequestInit): Promise<Response> {
  return new Promise((_, reject) => {
    const signal = init?.signal;
    const abort = () => reject(new DOMException('request aborted', 'AbortError'));
    if (signal == null) return;
    if (signal.aborted) {
      abort();
    } else {
      signal.addEventListener('abort', abort);
    }
  });
}

export function requestBody(call: RecordedCall): unknown {
  return JSON.parse(String(call.init?.body));
}

/** Build an MSK1 payload: magic, u32 LE dims, float32 LE row-major values. */
export function encodeMsk1(height: number, width: number, values: number[]): ArrayBuffer {
  if (values.length !== height * width) {
    throw new Error('value count does not match dims');
  }
  const buf = new ArrayBuffer(12 + 4 * values.length);
  const view = new DataView(buf);
  for (let i = 0; i < 4; i++) view.setUint8(i, 'MSK1'.charCodeAt(i));
  view.setUint32(4, height, true);
  view.setUint32(8, width, true);
  values.forEach((v, i) => view.setFloat32(12 + 4 * i, v, true));
  return buf;
}

/** Build a binary PGM (P5) image with the given maxval. */
export function encodePgm(width: number, height: number, pixels: number[], maxval = 255): Uint8Array {
  const header = `P5\n${width} ${height}\n${maxval}\n`;
  const out = new Uint8Array(header.length + pixels.length);
  for (let i = 0; i < header.length; i++) out[i] = header.charCodeAt(i);
  out.set(pixels, header.length);
  return out;
}

/** Build a binary PPM (P6) image, pixels as packed RGB triples. */
export function encodePpm(width: number, height: number, rgb: number[], maxval = 255): Uint8Array {
  const header = `P6\n${width} ${height}\n${maxval}\n`;
  const out = new Uint8Array(header.length + rgb.length);
  for (let i = 0; i < header.length; i++) out[i] = header.charCodeAt(i);
  out.set(rgb, header.length);
  return out;
}
