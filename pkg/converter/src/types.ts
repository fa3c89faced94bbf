/** A named tensor held as raw little-endian float32 data. */
export interface Tensor {
  shape: number[];
  /** Row-major little-endian f32 payload. */
  data: Float32Array;
}

export type TensorMap = Map<string, Tensor>;

export function numel(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

export function shapesEqual(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((v, i) => v === b[i]);
}

export class ConvertError extends Error {}
