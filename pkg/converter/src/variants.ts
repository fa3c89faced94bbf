/**
 * Supported model variants and their canonical parameter schemas.
 *
 * The canonical names are the vitgrade engine's stable contract: linear
 * weights [out, in], the packed qkv axis ordered (3, heads, head_dim), the
 * classification head absent (the engine initializes it).
 */

import { ConvertError } from "./types.js";

export interface Variant {
  name: string;
  embedDim: number;
  depth: number;
  numHeads: number;
  patchSize: number;
  /** Pretraining resolution and its patch grid (224/16 = 14). */
  imgSize: number;
  grid: number;
  mlpRatio: number;
  inChannels: number;
}

export const VARIANTS: Record<string, Variant> = {
  vit_s16: {
    name: "vit_s16", embedDim: 384, depth: 12, numHeads: 6,
    patchSize: 16, imgSize: 224, grid: 14, mlpRatio: 4, inChannels: 3,
  },
  vit_b16: {
    name: "vit_b16", embedDim: 768, depth: 12, numHeads: 12,
    patchSize: 16, imgSize: 224, grid: 14, mlpRatio: 4, inChannels: 3,
  },
};

export function getVariant(name: string): Variant {
  const v = VARIANTS[name];
  if (!v) {
    throw new ConvertError(
      `unknown variant '${name}' (expected one of: ${Object.keys(VARIANTS).join(", ")})`);
  }
  return v;
}

/**
 * Canonical name -> shape for a variant, head excluded.
 * Must enumerate exactly what the engine's schema does for these dims.
 */
export function canonicalSchema(v: Variant): Map<string, number[]> {
  const d = v.embedDim;
  const hidden = d * v.mlpRatio;
  const schema = new Map<string, number[]>();
  schema.set("cls_token", [1, 1, d]);
  schema.set("pos_embed", [1, 1 + v.grid * v.grid, d]);
  schema.set("patch_embed.weight", [d, v.inChannels, v.patchSize, v.patchSize]);
  schema.set("patch_embed.bias", [d]);
  for (let b = 0; b < v.depth; b++) {
    const p = `blocks.${b}.`;
    schema.set(p + "norm1.weight", [d]);
    schema.set(p + "norm1.bias", [d]);
    schema.set(p + "attn.qkv.weight", [3 * d, d]);
    schema.set(p + "attn.qkv.bias", [3 * d]);
    schema.set(p + "attn.proj.weight", [d, d]);
    schema.set(p + "attn.proj.bias", [d]);
    schema.set(p + "norm2.weight", [d]);
    schema.set(p + "norm2.bias", [d]);
    schema.set(p + "mlp.fc1.weight", [hidden, d]);
    schema.set(p + "mlp.fc1.bias", [hidden]);
    schema.set(p + "mlp.fc2.weight", [d, hidden]);
    schema.set(p + "mlp.fc2.bias", [d]);
  }
  schema.set("norm.weight", [d]);
  schema.set("norm.bias", [d]);
  return schema;
}
