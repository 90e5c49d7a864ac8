/** Spawns the editing service for integration tests and tears it down after.
 *
 * Checkpoint resolution: PARTGEN_UI_CKPT when set, else the best cached
 * training run (falls back to a short demo training on first use).
 */
import { ChildProcess, execFileSync, spawn } from "node:child_process";
import type { GlobalSetupContext } from "vitest/node";

const HOST = "127.0.0.1";
const PORT = 8931;
const TOKEN = "uitest";
const URL = `http://${HOST}:${PORT}`;

declare module "vitest" {
  export interface ProvidedContext {
    serverUrl: string;
    serverToken: string;
  }
}

function resolveCheckpoint(): string {
  const fromEnv = process.env.PARTGEN_UI_CKPT;
  if (fromEnv) return fromEnv;
  const out = execFileSync("python3", ["-c",
    "from partgen.testsupport import best_cached_checkpoint; print(best_cached_checkpoint())",
  ], { encoding: "utf8", timeout: 600_000 });
  return out.trim();
}

async function waitForHealth(deadlineMs: number): Promise<void> {
  const t0 = Date.now();
  for (;;) {
    try {
      const res = await fetch(`${URL}/healthz`);
      if (res.ok) return;
    } catch { /* not up yet */ }
    if (Date.now() - t0 > deadlineMs) throw new Error("service never became healthy");
    await new Promise((r) => setTimeout(r, 250));
  }
}

let child: ChildProcess | null = null;

export default async function setup({ provide }: GlobalSetupContext): Promise<() => void> {
  const ckpt = resolveCheckpoint();
  child = spawn("partgen", [
    "serve", "--checkpoint", ckpt, "--host", HOST, "--port", String(PORT),
    "--token", TOKEN,
  ], { stdio: ["ignore", "inherit", "inherit"] });
  child.on("exit", (code) => {
    if (code !== null && code !== 0) console.error(`service exited with ${code}`);
  });
  await waitForHealth(60_000);
  provide("serverUrl", URL);
  provide("serverToken", TOKEN);
  return () => {
    child?.kill("SIGTERM");
  };
}
