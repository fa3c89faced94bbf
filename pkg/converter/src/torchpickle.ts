/**
 * Minimal pickle VM for torch zip checkpoints.
 *
 * Supports exactly the opcode set torch's protocol-2/4 serializer emits for
 * a plain state dict: memoized globals, tuples/dicts, ints/strings, and the
 * torch._utils._rebuild_tensor_v2 reduction over persistent storage ids.
 * Anything else is rejected loudly; this is a reader for checkpoints, not a
 * general unpickler (and it never executes arbitrary constructors).
 */

import { f32FromBufferLE } from "./safetensors.js";
import { ConvertError, Tensor, TensorMap, numel } from "./types.js";
import { readZip } from "./zip.js";

interface GlobalRef {
  kind: "global";
  module: string;
  name: string;
}

interface StorageRef {
  kind: "storage";
  dtype: "f32" | "f16" | "f64";
  key: string;
  count: number;
}

type Value = unknown;

const MARK_SENTINEL = { kind: "mark" } as const;

const STORAGE_DTYPES: Record<string, "f32" | "f16" | "f64"> = {
  FloatStorage: "f32",
  HalfStorage: "f16",
  DoubleStorage: "f64",
};

function contiguousStrides(shape: number[]): number[] {
  const strides = new Array(shape.length).fill(1);
  for (let i = shape.length - 2; i >= 0; i--) {
    strides[i] = strides[i + 1] * shape[i + 1];
  }
  return strides;
}

class Unpickler {
  private pos = 0;
  private stack: Value[] = [];
  private memo = new Map<number, Value>();

  constructor(
    private buf: Buffer,
    private loadStorage: (ref: StorageRef) => Float32Array,
  ) {}

  private u8(): number { return this.buf.readUInt8(this.pos++); }
  private u16(): number { const v = this.buf.readUInt16LE(this.pos); this.pos += 2; return v; }
  private i32(): number { const v = this.buf.readInt32LE(this.pos); this.pos += 4; return v; }
  private u32(): number { const v = this.buf.readUInt32LE(this.pos); this.pos += 4; return v; }

  private bytes(n: number): Buffer {
    const v = this.buf.subarray(this.pos, this.pos + n);
    if (v.length !== n) throw new ConvertError("pickle stream truncated");
    this.pos += n;
    return v;
  }

  private line(): string {
    const nl = this.buf.indexOf(0x0a, this.pos);
    if (nl < 0) throw new ConvertError("pickle stream truncated (unterminated line)");
    const v = this.buf.subarray(this.pos, nl).toString("utf-8");
    this.pos = nl + 1;
    return v;
  }

  private popMark(): Value[] {
    const idx = this.stack.lastIndexOf(MARK_SENTINEL);
    if (idx < 0) throw new ConvertError("pickle MARK underflow");
    const items = this.stack.splice(idx + 1);
    this.stack.pop(); // the mark itself
    return items;
  }

  private reduce(fn: Value, args: Value[]): Value {
    const ref = fn as GlobalRef;
    if (!ref || ref.kind !== "global") {
      throw new ConvertError("REDUCE of a non-global callable");
    }
    const qualified = `${ref.module}.${ref.name}`;
    if (qualified === "collections.OrderedDict") {
      const map = new Map<Value, Value>();
      if (args.length === 1 && Array.isArray(args[0])) {
        for (const pair of args[0] as Value[][]) map.set(pair[0], pair[1]);
      }
      return map;
    }
    if (qualified === "torch._utils._rebuild_tensor_v2") {
      const [storage, offset, size, stride] = args as
        [StorageRef, number, number[], number[]];
      return this.rebuildTensor(storage, offset, size, stride);
    }
    if (qualified === "torch._utils._rebuild_parameter") {
      return args[0];
    }
    throw new ConvertError(`unsupported reduction ${qualified}`);
  }

  private rebuildTensor(storage: StorageRef, offset: number,
                        size: number[], stride: number[]): Tensor {
    const all = this.loadStorage(storage);
    const count = numel(size);
    const want = contiguousStrides(size);
    if (size.length === 0) {
      return { shape: [], data: all.slice(offset, offset + 1) };
    }
    if (stride.length === want.length && stride.every((s, i) => s === want[i])) {
      if (offset + count > all.length) {
        throw new ConvertError(`tensor extends past storage '${storage.key}'`);
      }
      return { shape: size, data: all.slice(offset, offset + count) };
    }
    // non-contiguous: gather through the stride map
    const out = new Float32Array(count);
    const idx = new Array(size.length).fill(0);
    for (let flat = 0; flat < count; flat++) {
      let src = offset;
      for (let d = 0; d < size.length; d++) src += idx[d] * stride[d];
      out[flat] = all[src];
      for (let d = size.length - 1; d >= 0; d--) {
        if (++idx[d] < size[d]) break;
        idx[d] = 0;
      }
    }
    return { shape: size, data: out };
  }

  private persistentLoad(pid: Value): StorageRef {
    if (!Array.isArray(pid) || pid[0] !== "storage") {
      throw new ConvertError("unsupported persistent id (expected a storage tuple)");
    }
    const [, storageType, key, , count] = pid as
      [string, GlobalRef, string, string, number];
    const dtype = STORAGE_DTYPES[storageType.name];
    if (!dtype) {
      throw new ConvertError(`unsupported storage type torch.${storageType.name}`);
    }
    return { kind: "storage", dtype, key, count };
  }

  run(): Value {
    for (;;) {
      const op = this.u8();
      switch (op) {
        case 0x80: this.u8(); break;                              // PROTO
        case 0x95: this.bytes(8); break;                          // FRAME
        case 0x2e: {                                              // STOP
          if (this.stack.length !== 1) {
            throw new ConvertError("pickle stack not reduced to a single result");
          }
          return this.stack[0];
        }
        case 0x28: this.stack.push(MARK_SENTINEL); break;         // MARK
        case 0x4e: this.stack.push(null); break;                  // NONE
        case 0x88: this.stack.push(true); break;                  // NEWTRUE
        case 0x89: this.stack.push(false); break;                 // NEWFALSE
        case 0x4b: this.stack.push(this.u8()); break;             // BININT1
        case 0x4d: this.stack.push(this.u16()); break;            // BININT2
        case 0x4a: this.stack.push(this.i32()); break;            // BININT
        case 0x8a: {                                              // LONG1
          const n = this.u8();
          const raw = this.bytes(n);
          let v = 0n;
          for (let i = n - 1; i >= 0; i--) v = (v << 8n) | BigInt(raw[i]);
          if (n && raw[n - 1] & 0x80) v -= 1n << BigInt(8 * n);
          this.stack.push(Number(v));
          break;
        }
        case 0x47: {                                              // BINFLOAT
          const v = this.buf.readDoubleBE(this.pos);
          this.pos += 8;
          this.stack.push(v);
          break;
        }
        case 0x58: this.stack.push(this.bytes(this.u32()).toString("utf-8")); break; // BINUNICODE
        case 0x8c: this.stack.push(this.bytes(this.u8()).toString("utf-8")); break;  // SHORT_BINUNICODE
        case 0x55: this.stack.push(this.bytes(this.u8()).toString("latin1")); break; // SHORT_BINSTRING
        case 0x63: {                                              // GLOBAL
          const module = this.line();
          const name = this.line();
          this.stack.push({ kind: "global", module, name } satisfies GlobalRef);
          break;
        }
        case 0x93: {                                              // STACK_GLOBAL
          const name = this.stack.pop() as string;
          const module = this.stack.pop() as string;
          this.stack.push({ kind: "global", module, name } satisfies GlobalRef);
          break;
        }
        case 0x71: this.memo.set(this.u8(), this.top()); break;   // BINPUT
        case 0x72: this.memo.set(this.u32(), this.top()); break;  // LONG_BINPUT
        case 0x94: this.memo.set(this.memo.size, this.top()); break; // MEMOIZE
        case 0x68: this.stack.push(this.mustGet(this.u8())); break;   // BINGET
        case 0x6a: this.stack.push(this.mustGet(this.u32())); break;  // LONG_BINGET
        case 0x7d: this.stack.push(new Map()); break;             // EMPTY_DICT
        case 0x5d: this.stack.push([]); break;                    // EMPTY_LIST
        case 0x29: this.stack.push([]); break;                    // EMPTY_TUPLE
        case 0x74: this.stack.push(this.popMark()); break;        // TUPLE
        case 0x85: this.stack.push(this.stack.splice(-1)); break; // TUPLE1
        case 0x86: this.stack.push(this.stack.splice(-2)); break; // TUPLE2
        case 0x87: this.stack.push(this.stack.splice(-3)); break; // TUPLE3
        case 0x65: {                                              // APPENDS
          const items = this.popMark();
          (this.top() as Value[]).push(...items);
          break;
        }
        case 0x61: {                                              // APPEND
          const item = this.stack.pop();
          (this.top() as Value[]).push(item);
          break;
        }
        case 0x73: {                                              // SETITEM
          const value = this.stack.pop();
          const key = this.stack.pop();
          (this.top() as Map<Value, Value>).set(key, value);
          break;
        }
        case 0x75: {                                              // SETITEMS
          const items = this.popMark();
          const target = this.top() as Map<Value, Value>;
          for (let i = 0; i < items.length; i += 2) {
            target.set(items[i], items[i + 1]);
          }
          break;
        }
        case 0x52: {                                              // REDUCE
          const args = this.stack.pop() as Value[];
          const fn = this.stack.pop();
          this.stack.push(this.reduce(fn, args));
          break;
        }
        case 0x51: this.stack.push(this.persistentLoad(this.stack.pop())); break; // BINPERSID
        case 0x62: this.stack.pop(); break;                       // BUILD: drop state
        default:
          throw new ConvertError(
            `unsupported pickle opcode 0x${op.toString(16)} at ${this.pos - 1}`);
      }
    }
  }

  private top(): Value {
    if (!this.stack.length) throw new ConvertError("pickle stack underflow");
    return this.stack[this.stack.length - 1];
  }

  private mustGet(key: number): Value {
    if (!this.memo.has(key)) throw new ConvertError(`pickle memo miss for ${key}`);
    return this.memo.get(key);
  }
}

function widen(bytes: Buffer, dtype: "f32" | "f16" | "f64", count: number): Float32Array {
  if (dtype === "f32") {
    return f32FromBufferLE(bytes, count);
  }
  const out = new Float32Array(count);
  if (dtype === "f64") {
    for (let i = 0; i < count; i++) out[i] = bytes.readDoubleLE(i * 8);
  } else {
    for (let i = 0; i < count; i++) {
      const bits = bytes.readUInt16LE(i * 2);
      const sign = bits & 0x8000 ? -1 : 1;
      const exp = (bits >> 10) & 0x1f;
      const frac = bits & 0x3ff;
      out[i] = exp === 0 ? sign * frac * 2 ** -24
        : exp === 31 ? (frac ? NaN : sign * Infinity)
        : sign * (1 + frac / 1024) * 2 ** (exp - 15);
    }
  }
  return out;
}

/** Parse a torch zip checkpoint into named f32 tensors. */
export function parseTorchCheckpoint(buf: Buffer): TensorMap {
  const entries = readZip(buf);
  const pklName = [...entries.keys()].find((n) => n.endsWith("/data.pkl"));
  if (!pklName) {
    throw new ConvertError("zip archive has no data.pkl (not a torch checkpoint)");
  }
  const prefix = pklName.slice(0, -"data.pkl".length);
  const itemBytes = { f32: 4, f16: 2, f64: 8 } as const;

  const loadStorage = (ref: StorageRef): Float32Array => {
    const entry = entries.get(`${prefix}data/${ref.key}`);
    if (!entry) throw new ConvertError(`missing storage entry data/${ref.key}`);
    const expected = ref.count * itemBytes[ref.dtype];
    if (entry.length < expected) {
      throw new ConvertError(
        `storage data/${ref.key} has ${entry.length} bytes, expected ${expected}`);
    }
    return widen(entry, ref.dtype, ref.count);
  };

  const result = new Unpickler(entries.get(pklName)!, loadStorage).run();
  if (!(result instanceof Map)) {
    throw new ConvertError("checkpoint pickle did not produce a state dict");
  }
  const tensors: TensorMap = new Map();
  for (const [key, value] of result as Map<string, Value>) {
    const t = value as Tensor;
    if (typeof key !== "string" || !t || !(t.data instanceof Float32Array)) {
      throw new ConvertError(`state dict entry '${String(key)}' is not a tensor`);
    }
    tensors.set(key, t);
  }
  return tensors;
}
