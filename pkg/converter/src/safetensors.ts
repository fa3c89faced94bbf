/**
 * Minimal safetensors reader: u64-LE header length, JSON header mapping
 * tensor names to {dtype, shape, data_offsets}, then the raw payload.
 * Only F32/F16 tensors are accepted (F16 is widened to F32).
 */

import { endianness } from "node:os";
import { ConvertError, Tensor, TensorMap, numel } from "./types.js";

const LITTLE_ENDIAN = endianness() === "LE";

export function f32FromBufferLE(bytes: Buffer, count: number): Float32Array {
  if (LITTLE_ENDIAN) {
    // copy into a fresh (offset-0, aligned) buffer before viewing as f32
    const aligned = new Uint8Array(count * 4);
    aligned.set(bytes.subarray(0, count * 4));
    return new Float32Array(aligned.buffer, 0, count);
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) data[i] = bytes.readFloatLE(i * 4);
  return data;
}

interface HeaderEntry {
  dtype: string;
  shape: number[];
  data_offsets: [number, number];
}

function f16ToF32(bits: number): number {
  const sign = (bits & 0x8000) ? -1 : 1;
  const exp = (bits >> 10) & 0x1f;
  const frac = bits & 0x3ff;
  if (exp === 0) return sign * frac * 2 ** -24;
  if (exp === 31) return frac ? NaN : sign * Infinity;
  return sign * (1 + frac / 1024) * 2 ** (exp - 15);
}

export function parseSafetensors(buf: Buffer): TensorMap {
  if (buf.length < 8) {
    throw new ConvertError("safetensors file too short for a header");
  }
  const headerLen = Number(buf.readBigUInt64LE(0));
  if (8 + headerLen > buf.length) {
    throw new ConvertError("safetensors header extends past end of file");
  }
  let header: Record<string, HeaderEntry>;
  try {
    header = JSON.parse(buf.subarray(8, 8 + headerLen).toString("utf-8"));
  } catch (err) {
    throw new ConvertError(`malformed safetensors header: ${(err as Error).message}`);
  }
  const payload = buf.subarray(8 + headerLen);
  const tensors: TensorMap = new Map();
  for (const [name, entry] of Object.entries(header)) {
    if (name === "__metadata__") continue;
    const [start, end] = entry.data_offsets;
    if (start < 0 || end > payload.length || end < start) {
      throw new ConvertError(`tensor '${name}' has offsets outside the payload`);
    }
    const bytes = payload.subarray(start, end);
    const count = numel(entry.shape);
    let data: Float32Array;
    if (entry.dtype === "F32") {
      if (bytes.length !== count * 4) {
        throw new ConvertError(`tensor '${name}': ${bytes.length} bytes for ${count} f32 values`);
      }
      data = f32FromBufferLE(bytes, count);
    } else if (entry.dtype === "F16") {
      if (bytes.length !== count * 2) {
        throw new ConvertError(`tensor '${name}': ${bytes.length} bytes for ${count} f16 values`);
      }
      data = new Float32Array(count);
      for (let i = 0; i < count; i++) data[i] = f16ToF32(bytes.readUInt16LE(i * 2));
    } else {
      throw new ConvertError(`tensor '${name}': unsupported dtype ${entry.dtype}`);
    }
    tensors.set(name, { shape: entry.shape, data });
  }
  return tensors;
}
