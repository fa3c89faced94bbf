/**
 * Checkpoint conversion: read an upstream self-supervised ViT checkpoint
 * (torch zip or safetensors), rename to the canonical schema, validate
 * against the declared variant, and encode a PTF file.
 */

import { createHash } from "node:crypto";
import { mapName } from "./namemap.js";
import { encodePtf } from "./ptf.js";
import { parseSafetensors } from "./safetensors.js";
import { parseTorchCheckpoint } from "./torchpickle.js";
import { ConvertError, Tensor, TensorMap, shapesEqual } from "./types.js";
import { canonicalSchema, getVariant } from "./variants.js";

export interface ConversionResult {
  ptf: Buffer;
  /** upstream name -> canonical name (null for dropped tensors), sorted. */
  nameMap: Array<{ upstream: string; canonical: string | null }>;
  meta: Record<string, unknown>;
}

export function detectFormat(buf: Buffer): "torch-zip" | "safetensors" {
  if (buf.length >= 4 && buf.readUInt32LE(0) === 0x04034b50) {
    return "torch-zip";
  }
  // a plausible safetensors header length followed by '{'
  if (buf.length >= 9 && buf[8] === 0x7b) {
    const headerLen = Number(buf.readBigUInt64LE(0));
    if (headerLen > 0 && 8 + headerLen <= buf.length) {
      return "safetensors";
    }
  }
  throw new ConvertError("unrecognized checkpoint format (expected torch zip or safetensors)");
}

export function convertCheckpoint(src: Buffer, variantName: string): ConversionResult {
  const variant = getVariant(variantName);
  const format = detectFormat(src);
  const upstream: TensorMap =
    format === "torch-zip" ? parseTorchCheckpoint(src) : parseSafetensors(src);

  const schema = canonicalSchema(variant);
  const out: TensorMap = new Map();
  const nameMap: ConversionResult["nameMap"] = [];
  for (const [name, tensor] of upstream) {
    const mapped = mapName(name);
    nameMap.push({ upstream: name, canonical: mapped.canonical });
    if (mapped.canonical === null) continue;
    const expected = schema.get(mapped.canonical);
    if (!expected) {
      throw new ConvertError(
        `upstream tensor '${name}' maps to '${mapped.canonical}', `
        + `which is not in the ${variant.name} schema`);
    }
    if (!shapesEqual(tensor.shape, expected)) {
      throw new ConvertError(
        `'${mapped.canonical}': upstream shape [${tensor.shape}] does not match `
        + `the ${variant.name} schema [${expected}]`);
    }
    if (out.has(mapped.canonical)) {
      throw new ConvertError(`duplicate canonical tensor '${mapped.canonical}'`);
    }
    out.set(mapped.canonical, tensor as Tensor);
  }

  const missing = [...schema.keys()].filter((n) => !out.has(n)).sort();
  if (missing.length > 0) {
    throw new ConvertError(
      `source checkpoint is missing ${missing.length} tensors: `
      + missing.slice(0, 5).join(", ") + (missing.length > 5 ? ", ..." : ""));
  }

  nameMap.sort((a, b) => a.upstream.localeCompare(b.upstream));
  const meta = {
    converter: "vitgrade-converter",
    variant: variant.name,
    source_format: format,
    source_sha256: createHash("sha256").update(src).digest("hex"),
    source_grid: variant.grid,
    img_size: variant.imgSize,
    patch_size: variant.patchSize,
    embed_dim: variant.embedDim,
    depth: variant.depth,
    num_heads: variant.numHeads,
    head_included: false,
  };
  return { ptf: encodePtf(out, meta as never), nameMap, meta };
}
