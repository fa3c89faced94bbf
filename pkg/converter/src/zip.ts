/**
 * Minimal ZIP reader for torch checkpoint archives.
 *
 * Walks the central directory (with zip64 fallback) and exposes entry
 * payloads; handles stored and deflated entries, which is all torch
 * writes. Local headers are re-parsed per entry because torch pads the
 * extra field to 64-byte-align tensor storages.
 */

import * as zlib from "node:zlib";
import { ConvertError } from "./types.js";

const EOCD_SIG = 0x06054b50;
const EOCD64_LOC_SIG = 0x07064b50;
const EOCD64_SIG = 0x06064b50;
const CDIR_SIG = 0x02014b50;
const LOCAL_SIG = 0x04034b50;

export interface ZipEntry {
  name: string;
  data: Buffer;
}

function findEocd(buf: Buffer): number {
  const maxScan = Math.min(buf.length, 65557);
  for (let i = buf.length - 22; i >= buf.length - maxScan; i--) {
    if (buf.readUInt32LE(i) === EOCD_SIG) return i;
  }
  throw new ConvertError("not a zip archive (no end-of-central-directory record)");
}

export function readZip(buf: Buffer): Map<string, Buffer> {
  const eocd = findEocd(buf);
  let count = buf.readUInt16LE(eocd + 10);
  let cdirOffset = buf.readUInt32LE(eocd + 16);
  let cdirSize = buf.readUInt32LE(eocd + 12);

  if (count === 0xffff || cdirOffset === 0xffffffff || cdirSize === 0xffffffff) {
    // zip64: locator sits right before the EOCD
    const loc = eocd - 20;
    if (loc < 0 || buf.readUInt32LE(loc) !== EOCD64_LOC_SIG) {
      throw new ConvertError("zip64 archive without a zip64 locator");
    }
    const eocd64 = Number(buf.readBigUInt64LE(loc + 8));
    if (buf.readUInt32LE(eocd64) !== EOCD64_SIG) {
      throw new ConvertError("bad zip64 end-of-central-directory record");
    }
    count = Number(buf.readBigUInt64LE(eocd64 + 32));
    cdirSize = Number(buf.readBigUInt64LE(eocd64 + 40));
    cdirOffset = Number(buf.readBigUInt64LE(eocd64 + 48));
  }

  const entries = new Map<string, Buffer>();
  let p = cdirOffset;
  for (let i = 0; i < count; i++) {
    if (buf.readUInt32LE(p) !== CDIR_SIG) {
      throw new ConvertError(`bad central-directory entry at ${p}`);
    }
    const method = buf.readUInt16LE(p + 10);
    let compSize = buf.readUInt32LE(p + 20);
    let rawSize = buf.readUInt32LE(p + 24);
    const nameLen = buf.readUInt16LE(p + 28);
    const extraLen = buf.readUInt16LE(p + 30);
    const commentLen = buf.readUInt16LE(p + 32);
    let localOffset = buf.readUInt32LE(p + 42);
    const name = buf.subarray(p + 46, p + 46 + nameLen).toString("utf-8");

    if (compSize === 0xffffffff || rawSize === 0xffffffff || localOffset === 0xffffffff) {
      // zip64 extra field: tag 0x0001, fields in fixed order for the
      // 0xffffffff placeholders
      let e = p + 46 + nameLen;
      const extraEnd = e + extraLen;
      while (e + 4 <= extraEnd) {
        const tag = buf.readUInt16LE(e);
        const size = buf.readUInt16LE(e + 2);
        if (tag === 0x0001) {
          let f = e + 4;
          if (rawSize === 0xffffffff) { rawSize = Number(buf.readBigUInt64LE(f)); f += 8; }
          if (compSize === 0xffffffff) { compSize = Number(buf.readBigUInt64LE(f)); f += 8; }
          if (localOffset === 0xffffffff) { localOffset = Number(buf.readBigUInt64LE(f)); }
          break;
        }
        e += 4 + size;
      }
    }

    if (buf.readUInt32LE(localOffset) !== LOCAL_SIG) {
      throw new ConvertError(`bad local header for '${name}'`);
    }
    const lNameLen = buf.readUInt16LE(localOffset + 26);
    const lExtraLen = buf.readUInt16LE(localOffset + 28);
    const dataStart = localOffset + 30 + lNameLen + lExtraLen;
    const raw = buf.subarray(dataStart, dataStart + compSize);
    let data: Buffer;
    if (method === 0) {
      data = Buffer.from(raw);
    } else if (method === 8) {
      data = zlib.inflateRawSync(raw);
    } else {
      throw new ConvertError(`'${name}': unsupported compression method ${method}`);
    }
    if (data.length !== rawSize) {
      throw new ConvertError(`'${name}': inflated to ${data.length}, expected ${rawSize}`);
    }
    entries.set(name, data);
    p += 46 + nameLen + extraLen + commentLen;
  }
  return entries;
}
