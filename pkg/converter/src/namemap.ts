/**
 * Upstream -> canonical parameter naming.
 *
 * The shared ViT state-dict convention is already canonical except for the
 * patch embedding, which upstream stores under a conv submodule
 * (patch_embed.proj.*). Common wrapper prefixes from released checkpoints
 * are stripped first. Tensors stay in upstream layout: the engine's forward
 * definition resolves any transposition conventions, none are applied here.
 */

export const STRIP_PREFIXES = ["module.", "backbone."];

const RENAMES: ReadonlyArray<readonly [string, string]> = [
  ["patch_embed.proj.weight", "patch_embed.weight"],
  ["patch_embed.proj.bias", "patch_embed.bias"],
];

/** Upstream tensors that have no canonical slot and are dropped. */
const DROPPED = new Set(["mask_token"]);

export interface MappedName {
  upstream: string;
  canonical: string | null; // null = dropped
}

export function mapName(upstream: string): MappedName {
  let name = upstream;
  for (const prefix of STRIP_PREFIXES) {
    if (name.startsWith(prefix)) {
      name = name.slice(prefix.length);
    }
  }
  if (DROPPED.has(name)) {
    return { upstream, canonical: null };
  }
  for (const [from, to] of RENAMES) {
    if (name === from) {
      return { upstream, canonical: to };
    }
  }
  return { upstream, canonical: name };
}
