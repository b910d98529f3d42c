/**
 * Array interchange descriptors for the engine bridge.
 *
 * Volumes cross the process boundary as flat typed arrays in x-fastest
 * element order: element (x, y, z) sits at flat index
 * `x + nx*y + nx*ny*z`. Inputs must be contiguous in that order; a
 * strides field, when present, is validated against it and anything
 * else is rejected with a LayoutError before any bytes are sent.
 */

export interface ArrayView<T extends Float32Array | Uint8Array = Float32Array | Uint8Array> {
  data: T;
  /** [nx, ny, nz] */
  shape: number[];
  /** element strides; must describe the x-fastest contiguous layout */
  strides?: number[];
  readOnly?: boolean;
}

export class LayoutError extends Error {
  readonly code = "bad_layout";

  constructor(message: string) {
    super(message);
    this.name = "LayoutError";
  }
}

export function shapeElements(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

function contiguousStrides(shape: number[]): number[] {
  const strides = new Array<number>(shape.length);
  let step = 1;
  for (let axis = 0; axis < shape.length; axis++) {
    strides[axis] = step;
    step *= shape[axis];
  }
  return strides;
}

export function validateView(
  view: ArrayView,
  dtype: "float32" | "uint8",
  what: string,
): asserts view is ArrayView {
  const { data, shape, strides } = view;
  if (!Array.isArray(shape) || shape.length !== 3) {
    throw new LayoutError(`${what}: shape must have exactly 3 axes, got ${JSON.stringify(shape)}`);
  }
  if (!shape.every((n) => Number.isInteger(n) && n > 0)) {
    throw new LayoutError(`${what}: shape axes must be positive integers, got ${JSON.stringify(shape)}`);
  }
  if (dtype === "float32" && !(data instanceof Float32Array)) {
    throw new LayoutError(`${what}: expected a Float32Array`);
  }
  if (dtype === "uint8" && !(data instanceof Uint8Array)) {
    throw new LayoutError(`${what}: expected a Uint8Array`);
  }
  const wanted = shapeElements(shape);
  if (data.length !== wanted) {
    throw new LayoutError(`${what}: data has ${data.length} elements, shape wants ${wanted}`);
  }
  if (strides !== undefined) {
    const expected = contiguousStrides(shape);
    const matches =
      strides.length === 3 && strides.every((s, axis) => s === expected[axis]);
    if (!matches) {
      throw new LayoutError(
        `${what}: strides ${JSON.stringify(strides)} are not x-fastest contiguous ` +
          `(expected ${JSON.stringify(expected)})`,
      );
    }
  }
}

/** Wrap a typed array's bytes without copying. */
export function viewBytes(data: Float32Array | Uint8Array): Buffer {
  return Buffer.from(data.buffer, data.byteOffset, data.byteLength);
}

/**
 * Float32 view over a buffer region; zero-copy when 4-byte aligned,
 * otherwise one copy (alignment of the region depends on the JSON
 * header length in front of it).
 */
export function float32At(buffer: Buffer, byteOffset: number, elements: number): Float32Array {
  const absolute = buffer.byteOffset + byteOffset;
  if (absolute % 4 === 0) {
    return new Float32Array(buffer.buffer, absolute, elements);
  }
  const copy = Buffer.alloc(elements * 4);
  buffer.copy(copy, 0, byteOffset, byteOffset + elements * 4);
  return new Float32Array(copy.buffer, 0, elements);
}
