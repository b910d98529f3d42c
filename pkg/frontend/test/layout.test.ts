/** Input validation: malformed views are rejected before any bytes move. */

import { describe, expect, it } from "vitest";

import { bridgeCall, EngineError } from "../src/bridge.js";
import { LayoutError, validateView } from "../src/arrayview.js";
import { runSession, simulateInteraction } from "../src/index.js";

const shape = [4, 4, 4];
const mask = new Uint8Array(64);
mask[0] = 1;

describe("view validation", () => {
  it("accepts contiguous x-fastest strides", () => {
    expect(() =>
      validateView({ data: mask, shape, strides: [1, 4, 16] }, "uint8", "gt"),
    ).not.toThrow();
  });

  it("rejects non-contiguous strides", async () => {
    await expect(
      simulateInteraction(
        { data: mask, shape, strides: [16, 4, 1] },
        { data: mask, shape },
        { kind: "point", seed: 0 },
      ),
    ).rejects.toThrow(LayoutError);
  });

  it("rejects wrong element counts", async () => {
    await expect(
      simulateInteraction(
        { data: new Uint8Array(63), shape },
        { data: mask, shape },
        { kind: "point", seed: 0 },
      ),
    ).rejects.toThrow(LayoutError);
  });

  it("rejects wrong dtypes", async () => {
    await expect(
      runSession(
        { data: new Uint8Array(64) as unknown as Float32Array, shape },
        { data: mask, shape },
        { seed: 1 },
      ),
    ).rejects.toThrow(LayoutError);
  });

  it("rejects shape mismatches between the two masks", async () => {
    await expect(
      simulateInteraction(
        { data: mask, shape },
        { data: new Uint8Array(27), shape: [3, 3, 3] },
        { kind: "point", seed: 0 },
      ),
    ).rejects.toThrow(LayoutError);
  });

  it("rejects non-positive shapes", async () => {
    await expect(
      simulateInteraction(
        { data: new Uint8Array(0), shape: [0, 4, 4] },
        { data: mask, shape },
        { kind: "point", seed: 0 },
      ),
    ).rejects.toThrow(LayoutError);
  });
});

describe("engine-side layout errors", () => {
  it("surfaces truncated payloads as bad_layout without crashing", async () => {
    await expect(
      bridgeCall(
        "bridge-simulate",
        { shape: [4, 4, 4], kind: "point", seed: 0 },
        Buffer.alloc(10),
      ),
    ).rejects.toMatchObject({ code: "bad_layout" });
  }, 60_000);

  it("surfaces missing session config keys", async () => {
    await expect(
      bridgeCall(
        "bridge-session",
        { shape: [4, 4, 4], config: {} },
        Buffer.alloc(64 * 5),
      ),
    ).rejects.toMatchObject({ code: "bad_config" });
  }, 60_000);

  it("wraps unparseable engine errors", async () => {
    await expect(
      bridgeCall("bridge-simulate", { shape: "garbage" }, Buffer.alloc(0)),
    ).rejects.toBeInstanceOf(EngineError);
  }, 60_000);
});
