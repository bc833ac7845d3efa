/**
 * Decoder for the service's binary mask payload.
 *
 * Layout: 4-byte magic "MSK1", u32 little-endian height at offset 4,
 * u32 little-endian width at offset 8, then height*width float32
 * little-endian values in row-major order starting at offset 12.
 */

export const MASK_MAGIC = 'MSK1';
export const HEADER_BYTES = 12;

export interface DecodedMask {
  height: number;
  width: number;
  /** Row-major values, length height*width. */
  data: Float32Array;
}

const HOST_IS_LE = new Uint8Array(new Uint32Array([1]).buffer)[0] === 1;

export function decodeMask(buf: ArrayBuffer): DecodedMask {
  if (buf.byteLength < HEADER_BYTES) {
    throw new Error(`mask payload too short: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  for (let i = 0; i < MASK_MAGIC.length; i++) {
    if (view.getUint8(i) !== MASK_MAGIC.charCodeAt(i)) {
      throw new Error('bad mask magic');
    }
  }
  const height = view.getUint32(4, true);
  const width = view.getUint32(8, true);
  const expected = HEADER_BYTES + height * width * 4;
  if (buf.byteLength !== expected) {
    throw new Error(`mask payload size mismatch: have ${buf.byteLength}, want ${expected}`);
  }
  if (HOST_IS_LE) {
    return { height, width, data: new Float32Array(buf.slice(HEADER_BYTES)) };
  }
  const data = new Float32Array(height * width);
  for (let i = 0; i < data.length; i++) {
    data[i] = view.getFloat32(HEADER_BYTES + 4 * i, true);
  }
  return { height, width, data };
}

export function maskValueAt(mask: DecodedMask, row: number, col: number): number {
  if (row < 0 || row >= mask.height || col < 0 || col >= mask.width) {
    throw new Error(`pixel (${row}, ${col}) outside ${mask.height}x${mask.width} mask`);
  }
  return mask.data[row * mask.width + col];
}
