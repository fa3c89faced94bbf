#!/usr/bin/env node
/**
 * vitgrade-convert: convert --src <file> --variant vit_s16|vit_b16 --out <file.ptf>
 *
 * Reads an upstream self-supervised ViT checkpoint (torch zip or
 * safetensors), writes the canonical PTF file and emits the name-mapping
 * manifest to standard output for audit.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { convertCheckpoint } from "./convert.js";
import { ConvertError } from "./types.js";
import { VARIANTS } from "./variants.js";

interface Args {
  src?: string;
  variant?: string;
  out?: string;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {};
  for (let i = 0; i < argv.length; i++) {
    switch (argv[i]) {
      case "--src": args.src = argv[++i]; break;
      case "--variant": args.variant = argv[++i]; break;
      case "--out": args.out = argv[++i]; break;
      case "--help":
      case "-h":
        usage();
        process.exit(0);
        break;
      default:
        throw new ConvertError(`unknown argument '${argv[i]}'`);
    }
  }
  return args;
}

function usage(): void {
  console.log(
    "usage: vitgrade-convert convert --src <checkpoint> "
    + `--variant ${Object.keys(VARIANTS).join("|")} --out <file.ptf>`);
}

export function main(argv: string[]): number {
  try {
    if (argv[0] !== "convert") {
      usage();
      return argv.length === 0 ? 1 : argv[0] === "--help" || argv[0] === "-h" ? 0 : 1;
    }
    const args = parseArgs(argv.slice(1));
    if (!args.src || !args.variant || !args.out) {
      usage();
      return 1;
    }
    const src = readFileSync(args.src);
    const result = convertCheckpoint(src, args.variant);
    writeFileSync(args.out, result.ptf);
    for (const entry of result.nameMap) {
      console.log(`${entry.upstream} -> ${entry.canonical ?? "(dropped)"}`);
    }
    console.log(`# variant=${result.meta.variant} grid=${result.meta.source_grid} `
      + `sha256=${result.meta.source_sha256}`);
    console.log(`# wrote ${args.out} (${result.ptf.length} bytes)`);
    return 0;
  } catch (err) {
    if (err instanceof ConvertError) {
      console.error(`error: convert: ${err.message}`);
      return 1;
    }
    console.error(`error: io: ${(err as Error).message}`);
    return 1;
  }
}

process.exit(main(process.argv.slice(2)));
