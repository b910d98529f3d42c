/**
 * Client for the interseg engine.
 *
 * Exposes the two training-loop entry points over the engine's raw
 * tensor bridge: one-step interaction simulation against a prediction
 * error, and full interactive refinement sessions. Nothing is computed
 * on this side; inputs are validated, marshalled, and the engine's
 * results returned verbatim (parity with the native CLI is asserted by
 * the test suite, byte for byte).
 */

import { ArrayView, LayoutError, float32At, shapeElements, validateView, viewBytes } from "./arrayview.js";
import { EngineError, EngineOptions, bridgeCall, runEngine } from "./bridge.js";

export { ArrayView, LayoutError } from "./arrayview.js";
export { EngineError, EngineOptions } from "./bridge.js";

export type InteractionKind = "point" | "scribble" | "bbox2d" | "lasso" | "bbox3d";

export interface SimulateOptions extends EngineOptions {
  kind: InteractionKind;
  seed: number;
  alpha?: number;
  radius?: number;
  width?: number;
  enableBox3d?: boolean;
}

export interface InteractionResult {
  status: "ok";
  version: string;
  /** summary of the simulated action (kind, polarity, geometry extents, ...) */
  record: Record<string, unknown>;
  shape: number[];
  channelNames: string[];
  /** per-channel flat tensors, x-fastest, one per prompt channel */
  channels: Float32Array[];
  /** the raw channel block exactly as the engine emitted it */
  channelBytes: Buffer;
}

export interface NoComponentsResult {
  status: "no_components";
  version: string;
}

export interface SessionOptions extends EngineOptions {
  seed: number;
  caseId?: string;
  segmenter?: "gt" | "noisy" | "regiongrow" | string;
  agent?: "random" | "sunkcost" | "single";
  kinds?: InteractionKind[];
  followups?: number;
  keepProb?: number;
  initialKind?: InteractionKind | null;
  autozoom?: boolean;
  patch?: number;
}

export interface SessionIteration {
  iteration: number;
  kind: string | null;
  polarity: string | null;
  dice: number;
  millis: number;
}

export interface SessionResult {
  version: string;
  caseId: string;
  dice: number[];
  earlyExit: boolean;
  iterations: SessionIteration[];
  records: Record<string, unknown>[];
}

function maskPayload(view: ArrayView<Uint8Array>): Buffer {
  // normalize to strict 0/1 bytes without mutating the caller's array
  const bytes = Buffer.from(viewBytes(view.data));
  for (let i = 0; i < bytes.length; i++) {
    bytes[i] = bytes[i] > 0 ? 1 : 0;
  }
  return bytes;
}

function sameShape(a: number[], b: number[]): boolean {
  return a.length === b.length && a.every((n, i) => n === b[i]);
}

/**
 * Simulate one corrective interaction against a prediction error.
 *
 * gt and pred are 0/1 masks of identical shape. Resolves to the rendered
 * prompt-channel block plus the action record, or a `no_components`
 * sentinel when prediction and reference already agree.
 */
export async function simulateInteraction(
  gt: ArrayView<Uint8Array>,
  pred: ArrayView<Uint8Array>,
  options: SimulateOptions,
): Promise<InteractionResult | NoComponentsResult> {
  validateView(gt, "uint8", "gt");
  validateView(pred, "uint8", "pred");
  if (!sameShape(gt.shape, pred.shape)) {
    throw new LayoutError(`gt shape ${gt.shape} != pred shape ${pred.shape}`);
  }
  const header: Record<string, unknown> = {
    shape: gt.shape,
    kind: options.kind,
    seed: options.seed,
  };
  if (options.alpha !== undefined) header.alpha = options.alpha;
  if (options.radius !== undefined) header.radius = options.radius;
  if (options.width !== undefined) header.width = options.width;
  if (options.enableBox3d !== undefined) header.enable_box3d = options.enableBox3d;

  const payload = Buffer.concat([maskPayload(gt), maskPayload(pred)]);
  const response = await bridgeCall("bridge-simulate", header, payload, options);
  const head = response.header as {
    status: string;
    version: string;
    record?: Record<string, unknown>;
    shape?: number[];
    channels?: number;
    channel_names?: string[];
  };
  if (head.status === "no_components") {
    return { status: "no_components", version: head.version };
  }
  const shape = head.shape!;
  const count = shapeElements(shape);
  const channelCount = head.channels!;
  if (response.payload.length !== channelCount * count * 4) {
    throw new EngineError(
      "bad_response",
      `expected ${channelCount * count * 4} payload bytes, got ${response.payload.length}`,
    );
  }
  const channels: Float32Array[] = [];
  for (let c = 0; c < channelCount; c++) {
    channels.push(
      float32At(response.stdout, response.payloadOffsetInStdout + c * count * 4, count),
    );
  }
  return {
    status: "ok",
    version: head.version,
    record: head.record!,
    shape,
    channelNames: head.channel_names!,
    channels,
    channelBytes: response.payload,
  };
}

/**
 * Run one interactive refinement session (initial prompt + follow-ups)
 * and return its per-iteration Dice log. Results equal the native CLI's
 * bit for bit given the same seed and case id.
 */
export async function runSession(
  image: ArrayView<Float32Array>,
  gt: ArrayView<Uint8Array>,
  options: SessionOptions,
): Promise<SessionResult> {
  validateView(image, "float32", "image");
  validateView(gt, "uint8", "gt");
  if (!sameShape(image.shape, gt.shape)) {
    throw new LayoutError(`image shape ${image.shape} != gt shape ${gt.shape}`);
  }
  const config: Record<string, unknown> = { seed: options.seed };
  if (options.caseId !== undefined) config.case_id = options.caseId;
  if (options.segmenter !== undefined) config.segmenter = options.segmenter;
  if (options.agent !== undefined) config.agent = options.agent;
  if (options.kinds !== undefined) config.kinds = options.kinds;
  if (options.followups !== undefined) config.followups = options.followups;
  if (options.keepProb !== undefined) config.keep_prob = options.keepProb;
  if (options.initialKind !== undefined) config.initial_kind = options.initialKind;
  if (options.autozoom !== undefined) config.autozoom = options.autozoom;
  if (options.patch !== undefined) config.patch = options.patch;

  const payload = Buffer.concat([viewBytes(image.data), maskPayload(gt)]);
  const response = await bridgeCall(
    "bridge-session",
    { shape: image.shape, config },
    payload,
    options,
  );
  const head = response.header as {
    status: string;
    version: string;
    log: {
      case_id: string;
      early_exit: boolean;
      iterations: Array<{
        iteration: number;
        kind: string | null;
        polarity: string | null;
        dice: number;
        millis: number;
      }>;
      records: Record<string, unknown>[];
    };
  };
  const log = head.log;
  return {
    version: head.version,
    caseId: log.case_id,
    earlyExit: log.early_exit,
    dice: log.iterations.map((it) => it.dice),
    iterations: log.iterations,
    records: log.records,
  };
}

/** Engine version string (must match this client's expectations). */
export async function engineVersion(options?: EngineOptions): Promise<string> {
  const result = await runEngine(["--version"], null, options);
  if (result.code !== 0) {
    throw new EngineError("engine_failed", result.stderr.toString("utf-8").slice(0, 200));
  }
  return result.stdout.toString("utf-8").trim();
}
