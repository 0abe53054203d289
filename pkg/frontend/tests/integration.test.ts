/** End-to-end session against a live annotation service.
 *
 * Spawns the real service over a generated store, drives the controller
 * through a 50-label scripted session answering from ground truth, then
 * checks the export and that both label routes (store export vs. direct
 * label file) calibrate to a byte-identical host model artifact.
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { cpSync, mkdtempSync, readFileSync, writeFileSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, Task, Verdict } from "../src/api.js";
import { AnnotationController } from "../src/controller.js";
import { waitFor } from "./fakes.js";

const PYTHON = process.env.TWOSHOT_PYTHON ?? "python3";
const HELPER = new URL("./helpers/make_store_fixture.py", import.meta.url).pathname;

let fixtureDir: string;
let baseUrl: string;
let server: ChildProcess | null = null;
let truth: Record<string, Verdict>;

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      if (address === null || typeof address === "string") {
        probe.close();
        return reject(new Error("no port"));
      }
      const port = address.port;
      probe.close(() => resolve(port));
    });
  });
}

async function serviceUp(url: string, timeoutMs = 20000): Promise<void> {
  const start = Date.now();
  for (;;) {
    try {
      const response = await fetch(`${url}/progress?stage=host_speech`);
      if (response.ok) return;
    } catch {
      /* not up yet */
    }
    if (Date.now() - start > timeoutMs) throw new Error("service did not come up");
    await new Promise((r) => setTimeout(r, 200));
  }
}

function runCli(args: string[]): void {
  const result = spawnSync(PYTHON, ["-m", "twoshot.cli", ...args], { encoding: "utf-8" });
  if (result.status !== 0) {
    throw new Error(`cli ${args.join(" ")} failed: ${result.stdout}\n${result.stderr}`);
  }
}

beforeAll(async () => {
  fixtureDir = mkdtempSync(join(tmpdir(), "annoui-"));
  const made = spawnSync(PYTHON, [HELPER, fixtureDir, "60"], { encoding: "utf-8" });
  if (made.status !== 0) throw new Error(`fixture helper failed: ${made.stderr}`);
  expect(JSON.parse(made.stdout).tasks).toBe(60);
  truth = JSON.parse(readFileSync(join(fixtureDir, "truth.json"), "utf-8"));

  const port = await freePort();
  baseUrl = `http://127.0.0.1:${port}`;
  server = spawn(
    PYTHON,
    [
      "-m",
      "twoshot.cli",
      "serve-annotations",
      "--config",
      join(fixtureDir, "config.yaml"),
      "--data-dir",
      join(fixtureDir, "store"),
      "--host",
      "127.0.0.1",
      "--port",
      String(port),
    ],
    { stdio: "ignore" },
  );
  await serviceUp(baseUrl);
}, 60000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("scripted annotation session", () => {
  it("labels 50 tasks, exports them faithfully, and feeds calibration", async () => {
    const api = new ApiClient(baseUrl);
    const controller = new AnnotationController(api, "host_speech", "scripted", {
      debounceMs: 0,
      retryBaseMs: 50,
    });
    const given: Record<string, Verdict> = {};
    await controller.start();
    while (controller.labeledCount < 50) {
      await waitFor(() => controller.getState().kind !== "loading", 10000);
      const state = controller.getState();
      expect(state.kind).toBe("task");
      if (state.kind !== "task") break;
      const embeddingId = state.view.contextLines
        .find((line) => line.startsWith("embedding_id: "))!
        .split(": ")[1];
      const verdict = truth[embeddingId];
      given[embeddingId] = verdict;
      controller.handleKey(verdict === "positive" ? "y" : "n");
    }
    await waitFor(() => controller.queue.pendingCount === 0, 10000);
    controller.stop();
    expect(Object.keys(given)).toHaveLength(50);

    const bundle = await api.exportLabels("host_speech");
    expect(bundle.positives.length + bundle.negatives.length).toBe(50);
    const verdictOf = (task: Task, verdict: Verdict) => {
      const embeddingId = String(task.context.embedding_id);
      expect(given[embeddingId]).toBe(verdict);
    };
    bundle.positives.forEach((task) => verdictOf(task, "positive"));
    bundle.negatives.forEach((task) => verdictOf(task, "negative"));

    // same labels through both routes -> byte-identical host model artifact
    const fileLabels = Object.entries(given)
      .map(([embeddingId, verdict]) => `${embeddingId} ${verdict}`)
      .join("\n");
    writeFileSync(join(fixtureDir, "direct_labels.tsv"), fileLabels + "\n");
    const outFile = join(fixtureDir, "out_file");
    cpSync(join(fixtureDir, "out", "ingest"), join(outFile, "ingest"), { recursive: true });
    runCli(["calibrate-audio", "--config", join(fixtureDir, "config.yaml")]);
    runCli([
      "calibrate-audio",
      "--config",
      join(fixtureDir, "config.yaml"),
      "--set",
      "labels.store_dir=",
      "--set",
      `labels.host_speech=${join(fixtureDir, "direct_labels.tsv")}`,
      "--output-dir",
      outFile,
    ]);
    const fromStore = readFileSync(join(fixtureDir, "out", "calibrate", "host_model.txt"));
    const fromFile = readFileSync(join(outFile, "calibrate", "host_model.txt"));
    expect(fromStore.equals(fromFile)).toBe(true);
  }, 90000);

  it("grants a task lease to exactly one of two concurrent clients", async () => {
    const clientA = new ApiClient(baseUrl);
    const clientB = new ApiClient(baseUrl);
    const [first, second] = await Promise.all([
      clientA.nextTask("host_speech", "rivals-a"),
      clientB.nextTask("host_speech", "rivals-b"),
    ]);
    expect(first).not.toBeNull();
    expect(second).not.toBeNull();
    expect(first!.task_id).not.toBe(second!.task_id);
    // the same annotator re-requesting gets their own lease back
    const again = await clientA.nextTask("host_speech", "rivals-a");
    expect(again!.task_id).toBe(first!.task_id);
  }, 30000);
});
