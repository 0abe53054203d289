import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { RetryQueue } from "../src/queue.js";
import { makeFakeService, makeTask, waitFor } from "./fakes.js";

describe("RetryQueue", () => {
  it("delivers immediately when the network is up", async () => {
    const service = makeFakeService([makeTask("t1")]);
    const queue = new RetryQueue(new ApiClient("", service.fetchFn));
    await queue.submit({ taskId: "t1", verdict: "positive", annotator: "a" });
    expect(service.labels).toHaveLength(1);
    expect(queue.pendingCount).toBe(0);
  });

  it("requeues on network failure and retries with backoff", async () => {
    const service = makeFakeService([makeTask("t1")]);
    const counts: number[] = [];
    const queue = new RetryQueue(new ApiClient("", service.fetchFn), {
      baseDelayMs: 10,
      maxDelayMs: 40,
      onChange: (count) => counts.push(count),
    });
    service.failNetwork(2);
    await queue.submit({ taskId: "t1", verdict: "negative", annotator: "a" });
    expect(queue.pendingCount).toBe(1); // still pending after the first failure
    await waitFor(() => queue.pendingCount === 0);
    expect(service.labels).toEqual([{ task_id: "t1", verdict: "negative", annotator: "a" }]);
    expect(counts[0]).toBe(1);
    expect(counts[counts.length - 1]).toBe(0);
  });

  it("keeps queue order across multiple buffered labels", async () => {
    const service = makeFakeService([makeTask("t1"), makeTask("t2")]);
    const queue = new RetryQueue(new ApiClient("", service.fetchFn), { baseDelayMs: 5 });
    service.failNetwork(1);
    void queue.submit({ taskId: "t1", verdict: "positive", annotator: "a" });
    void queue.submit({ taskId: "t2", verdict: "unsure", annotator: "a" });
    await waitFor(() => queue.pendingCount === 0);
    expect(service.labels.map((l) => l.task_id)).toEqual(["t1", "t2"]);
  });

  it("drops server rejections instead of retrying forever", async () => {
    const service = makeFakeService([makeTask("t1")]);
    const rejected: string[] = [];
    const queue = new RetryQueue(new ApiClient("", service.fetchFn), {
      onRejection: (label) => rejected.push(label.taskId),
    });
    await queue.submit({ taskId: "ghost", verdict: "positive", annotator: "a" });
    expect(queue.pendingCount).toBe(0);
    expect(rejected).toEqual(["ghost"]);
    expect(service.labels).toHaveLength(0);
  });
});
