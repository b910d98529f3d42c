/**
 * One-shot process bridge to the engine CLI.
 *
 * Every call spawns `python -m interseg <subcommand>`, writes one JSON
 * header line plus the raw tensor payload to its stdin, and collects
 * stdout: one JSON header line back, then the raw response tensors.
 * Errors come back as a JSON object on stderr with a stable code.
 */

import { spawn } from "node:child_process";

export interface BridgeResponse {
  header: Record<string, unknown>;
  payload: Buffer;
  payloadOffsetInStdout: number;
  stdout: Buffer;
}

export class EngineError extends Error {
  constructor(
    readonly code: string,
    message: string,
  ) {
    super(`${code}: ${message}`);
    this.name = "EngineError";
  }
}

export interface EngineOptions {
  /** interpreter running the engine package; defaults to $INTERSEG_PYTHON or python3 */
  python?: string;
  timeoutMs?: number;
}

export function pythonBin(options?: EngineOptions): string {
  return options?.python ?? process.env.INTERSEG_PYTHON ?? "python3";
}

export function runEngine(
  args: string[],
  stdin: Buffer | null,
  options?: EngineOptions,
): Promise<{ stdout: Buffer; stderr: Buffer; code: number }> {
  const bin = pythonBin(options);
  return new Promise((resolve, reject) => {
    const child = spawn(bin, ["-m", "interseg", ...args], {
      stdio: ["pipe", "pipe", "pipe"],
    });
    const out: Buffer[] = [];
    const err: Buffer[] = [];
    const timeoutMs = options?.timeoutMs ?? 300_000;
    const timer = setTimeout(() => {
      child.kill("SIGKILL");
      reject(new EngineError("timeout", `engine call exceeded ${timeoutMs} ms`));
    }, timeoutMs);
    child.stdout.on("data", (chunk: Buffer) => out.push(chunk));
    child.stderr.on("data", (chunk: Buffer) => err.push(chunk));
    child.on("error", (error) => {
      clearTimeout(timer);
      reject(new EngineError("spawn_failed", `${bin}: ${error.message}`));
    });
    child.on("close", (code) => {
      clearTimeout(timer);
      resolve({ stdout: Buffer.concat(out), stderr: Buffer.concat(err), code: code ?? -1 });
    });
    if (stdin !== null) {
      child.stdin.write(stdin);
    }
    child.stdin.end();
  });
}

function parseStderrError(stderr: Buffer): EngineError {
  const text = stderr.toString("utf-8").trim();
  const lines = text.split("\n").filter((line) => line.trim().length > 0);
  for (let i = lines.length - 1; i >= 0; i--) {
    try {
      const doc = JSON.parse(lines[i]);
      if (doc && typeof doc === "object" && doc.error) {
        return new EngineError(String(doc.error.code), String(doc.error.message));
      }
    } catch {
      // not a JSON line; keep scanning upward
    }
  }
  return new EngineError("engine_failed", text.slice(0, 500) || "no diagnostic output");
}

export async function bridgeCall(
  subcommand: string,
  header: Record<string, unknown>,
  payload: Buffer,
  options?: EngineOptions,
): Promise<BridgeResponse> {
  const request = Buffer.concat([Buffer.from(JSON.stringify(header) + "\n", "utf-8"), payload]);
  const result = await runEngine([subcommand], request, options);
  if (result.code !== 0) {
    throw parseStderrError(result.stderr);
  }
  const newline = result.stdout.indexOf(0x0a);
  if (newline < 0) {
    throw new EngineError("bad_response", "engine response is missing its JSON header line");
  }
  const head = JSON.parse(result.stdout.subarray(0, newline).toString("utf-8"));
  return {
    header: head,
    payload: result.stdout.subarray(newline + 1),
    payloadOffsetInStdout: newline + 1,
    stdout: result.stdout,
  };
}
