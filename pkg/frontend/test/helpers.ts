import { mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { runEngine } from "../src/bridge.js";

export function tempDir(prefix: string): string {
  return mkdtempSync(join(tmpdir(), prefix));
}

export async function cli(args: string[]): Promise<{ stdout: Buffer; stderr: Buffer }> {
  const result = await runEngine(args, null);
  if (result.code !== 0) {
    throw new Error(`engine CLI failed (${result.code}): ${result.stderr.toString("utf-8")}`);
  }
  return result;
}

export interface RawVolume {
  shape: number[];
  data: Float32Array;
}

/** Read the engine's raw fallback format (.raw + JSON sidecar). */
export function readRaw(basePath: string): RawVolume {
  const sidecar = JSON.parse(readFileSync(basePath.replace(/\.raw$/, ".json"), "utf-8"));
  const bytes = readFileSync(basePath);
  const data = new Float32Array(bytes.buffer, bytes.byteOffset, bytes.byteLength / 4);
  return { shape: sidecar.shape as number[], data: new Float32Array(data) };
}

export function writeRaw(basePath: string, shape: number[], data: Float32Array): void {
  writeFileSync(basePath, Buffer.from(data.buffer, data.byteOffset, data.byteLength));
  writeFileSync(
    basePath.replace(/\.raw$/, ".json"),
    JSON.stringify({ shape, spacing: [1, 1, 1], dtype: "float32" }) + "\n",
  );
}

export function toMask(volume: RawVolume): Uint8Array {
  const mask = new Uint8Array(volume.data.length);
  for (let i = 0; i < mask.length; i++) {
    mask[i] = volume.data[i] > 0.5 ? 1 : 0;
  }
  return mask;
}

/** Shift a mask by `offset` voxels along x (x-fastest flat layout). */
export function shiftX(mask: Uint8Array, shape: number[], offset: number): Uint8Array {
  const [nx, ny, nz] = shape;
  const out = new Uint8Array(mask.length);
  for (let z = 0; z < nz; z++) {
    for (let y = 0; y < ny; y++) {
      const row = nx * (y + ny * z);
      for (let x = 0; x < nx; x++) {
        const sx = x - offset;
        if (sx >= 0 && sx < nx) {
          out[row + x] = mask[row + sx];
        }
      }
    }
  }
  return out;
}
