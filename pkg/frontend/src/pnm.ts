/**
 * Decoder for the binary PNM images the byte routes serve.
 *
 * P5 is single-channel gray, P6 packed RGB. Headers are ASCII tokens
 * (magic, width, height, maxval) separated by whitespace, with
 * #-comments allowed; one whitespace byte separates the header from
 * raw samples. Only maxval <= 255 (one byte per sample) is supported,
 * which is all the service emits.
 */

export interface DecodedImage {
  width: number;
  height: number;
  channels: 1 | 3;
  /** Row-major, channel-minor samples in [0, 255]. */
  data: Uint8Array;
}

function readHeader(bytes: Uint8Array): { magic: string; width: number; height: number; maxval: number; offset: number } {
  let pos = 0;
  const isSpace = (b: number) => b === 0x20 || b === 0x09 || b === 0x0a || b === 0x0d;
  const token = (): string => {
    while (pos < bytes.length) {
      if (isSpace(bytes[pos])) {
        pos++;
      } else if (bytes[pos] === 0x23) {
        // comment runs to end of line
        while (pos < bytes.length && bytes[pos] !== 0x0a) pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos])) pos++;
    if (start === pos) throw new Error('truncated image header');
    return String.fromCharCode(...bytes.subarray(start, pos));
  };
  const magic = token();
  const width = Number(token());
  const height = Number(token());
  const maxval = Number(token());
  pos++; // single whitespace byte before the raster
  return { magic, width, height, maxval, offset: pos };
}

export function decodeImage(buf: ArrayBuffer): DecodedImage {
  const bytes = new Uint8Array(buf);
  const { magic, width, height, maxval, offset } = readHeader(bytes);
  if (magic !== 'P5' && magic !== 'P6') {
    throw new Error(`unsupported image magic ${magic}`);
  }
  if (!Number.isInteger(width) || !Number.isInteger(height) || width <= 0 || height <= 0) {
    throw new Error('bad image dimensions');
  }
  if (!Number.isInteger(maxval) || maxval < 1 || maxval > 255) {
    throw new Error(`unsupported maxval ${maxval}`);
  }
  const channels = magic === 'P5' ? 1 : 3;
  const n = width * height * channels;
  if (bytes.length - offset < n) {
    throw new Error(`image raster too short: have ${bytes.length - offset}, want ${n}`);
  }
  let data = bytes.slice(offset, offset + n);
  if (maxval !== 255) {
    const scaled = new Uint8Array(n);
    for (let i = 0; i < n; i++) scaled[i] = Math.round((data[i] * 255) / maxval);
    data = scaled;
  }
  return { width, height, channels: channels as 1 | 3, data };
}

/** Expand a decoded image to opaque RGBA for an ImageData buffer. */
export function imageToRgba(img: DecodedImage): Uint8ClampedArray {
  const out = new Uint8ClampedArray(img.width * img.height * 4);
  const n = img.width * img.height;
  for (let i = 0; i < n; i++) {
    const r = img.channels === 1 ? img.data[i] : img.data[3 * i];
    const g = img.channels === 1 ? img.data[i] : img.data[3 * i + 1];
    const b = img.channels === 1 ? img.data[i] : img.data[3 * i + 2];
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = 255;
  }
  return out;
}
