/**
 * Bit parity between the bridge client and the engine's native CLI:
 * identical channel bytes from simulateInteraction and identical Dice
 * sequences from runSession, across 20 shared seeds.
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { beforeAll, describe, expect, it } from "vitest";

import { engineVersion, runSession, simulateInteraction } from "../src/index.js";
import { cli, readRaw, shiftX, tempDir, toMask, writeRaw } from "./helpers.js";

const KINDS = ["point", "scribble", "bbox2d", "lasso"] as const;

let workDir: string;
let shape: number[];
let gtMask: Uint8Array;
let predMask: Uint8Array;

beforeAll(async () => {
  workDir = tempDir("interseg-parity-");
  await cli([
    "synth", "--out", workDir, "--cases", "1", "--seed", "77",
    "--size", "22", "--file-format", "raw",
  ]);
  const label = readRaw(join(workDir, "case000_lab.raw"));
  shape = label.shape;
  gtMask = toMask(label);
  predMask = shiftX(gtMask, shape, 3); // both FP and FN regions
  const predFloat = new Float32Array(predMask.length);
  predMask.forEach((v, i) => {
    predFloat[i] = v;
  });
  writeRaw(join(workDir, "pred.raw"), shape, predFloat);
}, 120_000);

describe("simulateInteraction parity", () => {
  it("matches the file-based CLI byte for byte across 20 seeds", async () => {
    for (let seed = 0; seed < 20; seed++) {
      const kind = KINDS[seed % KINDS.length];
      const base = join(workDir, `sim-${seed}`);
      await cli([
        "simulate",
        "--gt", join(workDir, "case000_lab.raw"),
        "--pred", join(workDir, "pred.raw"),
        "--kind", kind, "--seed", String(seed), "--out", base,
      ]);
      const nativeBytes = readFileSync(`${base}.bin`);
      const nativeDesc = JSON.parse(readFileSync(`${base}.json`, "utf-8"));

      const result = await simulateInteraction(
        { data: gtMask, shape },
        { data: predMask, shape },
        { kind, seed },
      );
      expect(result.status).toBe("ok");
      if (result.status !== "ok") continue;
      expect(Buffer.compare(result.channelBytes, nativeBytes)).toBe(0);
      expect(result.record).toEqual(nativeDesc.record);
      expect(result.channelNames).toEqual(nativeDesc.channel_names);
    }
  }, 300_000);

  it("returns the no-components sentinel when masks agree", async () => {
    const result = await simulateInteraction(
      { data: gtMask, shape },
      { data: gtMask, shape },
      { kind: "point", seed: 4 },
    );
    expect(result.status).toBe("no_components");
  }, 60_000);

  it("reports the engine version", async () => {
    const version = await engineVersion();
    expect(version).toMatch(/^\d+\.\d+\.\d+$/);
    const result = await simulateInteraction(
      { data: gtMask, shape },
      { data: predMask, shape },
      { kind: "point", seed: 0 },
    );
    if (result.status === "ok" || result.status === "no_components") {
      expect(result.version).toBe(version);
    }
  }, 60_000);
});

describe("runSession parity", () => {
  it("reproduces the native CLI Dice sequences for 20 case streams", async () => {
    const sessionDir = tempDir("interseg-sessions-");
    await cli([
      "synth", "--out", sessionDir, "--cases", "20", "--seed", "501",
      "--size", "22", "--file-format", "raw",
    ]);
    const out = join(sessionDir, "native");
    await cli([
      "run", "--manifest", join(sessionDir, "cases.json"),
      "--segmenter", "noisy", "--followups", "3", "--seed", "31337",
      "--out", out, "--timing", "fixed", "--patch", "48", "--no-plots",
    ]);
    const report = JSON.parse(readFileSync(join(out, "report.json"), "utf-8"));

    for (let i = 0; i < 20; i++) {
      const caseId = `case${String(i).padStart(3, "0")}`;
      const image = readRaw(join(sessionDir, `${caseId}_img.raw`));
      const label = readRaw(join(sessionDir, `${caseId}_lab.raw`));
      const result = await runSession(
        { data: image.data, shape: image.shape },
        { data: toMask(label), shape: label.shape },
        { seed: 31337, caseId, segmenter: "noisy", followups: 3, patch: 48 },
      );
      expect(result.dice).toEqual(report.cases[caseId].curve);
      expect(result.caseId).toBe(caseId);
    }
  }, 600_000);
});
