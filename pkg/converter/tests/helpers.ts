/** Test helpers: safetensors writing and upstream state-dict synthesis. */

import { canonicalSchema, getVariant } from "../src/variants.js";
import { numel } from "../src/types.js";

export interface NamedTensor {
  name: string;
  shape: number[];
  data: Float32Array;
}

export function writeSafetensors(tensors: NamedTensor[]): Buffer {
  const header: Record<string, unknown> = {};
  let offset = 0;
  const blobs: Buffer[] = [];
  for (const t of tensors) {
    const blob = Buffer.alloc(t.data.length * 4);
    for (let i = 0; i < t.data.length; i++) blob.writeFloatLE(t.data[i], i * 4);
    header[t.name] = {
      dtype: "F32",
      shape: t.shape,
      data_offsets: [offset, offset + blob.length],
    };
    blobs.push(blob);
    offset += blob.length;
  }
  const headerBuf = Buffer.from(JSON.stringify(header), "utf-8");
  const lenField = Buffer.alloc(8);
  lenField.writeBigUInt64LE(BigInt(headerBuf.length));
  return Buffer.concat([lenField, headerBuf, ...blobs]);
}

/** Deterministic pseudo-random filler so value fidelity is checkable. */
export function fill(count: number, seed: number): Float32Array {
  const out = new Float32Array(count);
  let state = (seed >>> 0) || 1;
  for (let i = 0; i < count; i++) {
    state = (state * 1664525 + 1013904223) >>> 0;
    out[i] = (state / 0xffffffff - 0.5) * 0.04;
  }
  return out;
}

/** Full upstream-named state dict for a variant (patch embed under proj.*). */
export function upstreamStateDict(variantName: string, seed = 7): NamedTensor[] {
  const schema = canonicalSchema(getVariant(variantName));
  const tensors: NamedTensor[] = [];
  let i = 0;
  for (const [canonical, shape] of schema) {
    const upstream = canonical
      .replace("patch_embed.weight", "patch_embed.proj.weight")
      .replace("patch_embed.bias", "patch_embed.proj.bias");
    tensors.push({ name: upstream, shape, data: fill(numel(shape), seed + i++) });
  }
  return tensors;
}
