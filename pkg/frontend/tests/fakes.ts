/** In-memory stand-in for the annotation service, wired through fetch. */

import { FetchLike, Task, Verdict } from "../src/api.js";

export interface FakeService {
  fetchFn: FetchLike;
  labels: Array<{ task_id: string; verdict: Verdict; annotator: string }>;
  failNetwork: (times: number) => void;
}

function json(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

export function makeTask(id: string, stage: "host_speech" | "host_face" = "host_speech"): Task {
  return {
    task_id: id,
    stage,
    payload_ref: `audio/clip/${id}.wav`,
    context: { embedding_id: `e-${id}`, clip_id: "clip" },
    status: "pending",
  };
}

export function makeFakeService(tasks: Task[]): FakeService {
  const pending = [...tasks];
  const labels: FakeService["labels"] = [];
  let networkFailures = 0;

  const fetchFn: FetchLike = async (input, init) => {
    if (networkFailures > 0) {
      networkFailures -= 1;
      throw new TypeError("fetch failed");
    }
    const url = new URL(input, "http://fake");
    if (url.pathname === "/tasks/next") {
      return json({ task: pending.length ? pending[0] : null });
    }
    if (url.pathname === "/labels" && init?.method === "POST") {
      const body = JSON.parse(String(init.body)) as {
        task_id: string;
        verdict: Verdict;
        annotator: string;
      };
      const known = tasks.some((t) => t.task_id === body.task_id);
      if (!known) return json({ detail: "unknown task" }, 404);
      labels.push(body);
      const index = pending.findIndex((t) => t.task_id === body.task_id);
      if (index >= 0) pending.splice(index, 1);
      return json({ ok: true });
    }
    if (url.pathname === "/progress") {
      return json({
        stage: url.searchParams.get("stage"),
        total: tasks.length,
        labeled: tasks.length - pending.length,
        pending: pending.length,
      });
    }
    return json({ detail: "not found" }, 404);
  };

  return {
    fetchFn,
    labels,
    failNetwork: (times: number) => {
      networkFailures = times;
    },
  };
}

export function waitFor(predicate: () => boolean, timeoutMs = 2000): Promise<void> {
  const start = Date.now();
  return new Promise((resolve, reject) => {
    const tick = () => {
      if (predicate()) return resolve();
      if (Date.now() - start > timeoutMs) return reject(new Error("waitFor timed out"));
      setTimeout(tick, 5);
    };
    tick();
  });
}
