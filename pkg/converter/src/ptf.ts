/**
 * PTF writer, byte-compatible with the vitgrade engine's container:
 * "PTF1" magic, u64-LE header length, canonical JSON header
 * (sorted keys, no whitespace), then row-major little-endian f32 payloads
 * laid out in lexicographic name order. Identical inputs produce identical
 * bytes.
 */

import { endianness } from "node:os";
import { Tensor } from "./types.js";

const LITTLE_ENDIAN = endianness() === "LE";

export function f32ToBufferLE(data: Float32Array): Buffer {
  if (LITTLE_ENDIAN) {
    return Buffer.from(data.buffer, data.byteOffset, data.byteLength);
  }
  const blob = Buffer.alloc(data.length * 4);
  for (let i = 0; i < data.length; i++) blob.writeFloatLE(data[i], i * 4);
  return blob;
}

type Json = null | boolean | number | string | Json[] | { [k: string]: Json };

/** JSON.stringify with recursively sorted object keys (canonical form). */
export function canonicalJson(value: Json): string {
  if (Array.isArray(value)) {
    return `[${value.map(canonicalJson).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const keys = Object.keys(value).sort();
    const body = keys.map((k) => `${JSON.stringify(k)}:${canonicalJson(value[k])}`);
    return `{${body.join(",")}}`;
  }
  return JSON.stringify(value);
}

export function encodePtf(tensors: Map<string, Tensor>, meta: Json): Buffer {
  const names = [...tensors.keys()].sort();
  const headerTensors: { [k: string]: Json } = {};
  const blobs: Buffer[] = [];
  let offset = 0;
  for (const name of names) {
    const t = tensors.get(name)!;
    const blob = f32ToBufferLE(t.data);
    headerTensors[name] = { dtype: "f32", shape: t.shape, offset };
    blobs.push(blob);
    offset += blob.length;
  }
  const header = Buffer.from(
    canonicalJson({ tensors: headerTensors, meta }), "utf-8");
  const lenField = Buffer.alloc(8);
  lenField.writeBigUInt64LE(BigInt(header.length));
  return Buffer.concat([Buffer.from("PTF1", "ascii"), lenField, header, ...blobs]);
}
