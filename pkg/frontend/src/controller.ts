/** State machine behind the annotation screen.
 *
 * One task on screen at a time; y/n/u submit a verdict and advance
 * optimistically, space replays the media, b steps back one item to append a
 * superseding label. The server is the only source of truth: refreshing the
 * page just leases the next pending task again.
 */

import { ApiClient, Stage, Task, Verdict } from "./api.js";
import { RetryQueue } from "./queue.js";

export const KEYMAP: Record<string, Verdict | "replay" | "back"> = {
  y: "positive",
  n: "negative",
  u: "unsure",
  " ": "replay",
  b: "back",
};

export interface TaskView {
  taskId: string;
  stage: Stage;
  mediaUrl: string;
  contextLines: string[];
  shortcuts: Record<string, string>;
  relabeling: boolean;
}

export type ControllerState =
  | { kind: "loading" }
  | { kind: "task"; view: TaskView }
  | { kind: "done" }
  | { kind: "error"; message: string; retryInMs: number };

export interface ControllerOptions {
  debounceMs?: number;
  retryBaseMs?: number;
  retryMaxMs?: number;
  onChange?: (state: ControllerState) => void;
  onPendingChange?: (count: number) => void;
  onReplay?: () => void;
}

interface HistoryEntry {
  task: Task;
  verdict: Verdict;
}

const SHORTCUT_HELP: Record<string, string> = {
  y: "host / positive",
  n: "not host / negative",
  u: "unsure",
  space: "replay",
  b: "back one item",
};

export class AnnotationController {
  private state: ControllerState = { kind: "loading" };
  private current: Task | null = null;
  private relabeling = false;
  private history: HistoryEntry[] = [];
  private submitted = new Set<string>();
  private lastAcceptedKeyAt = 0;
  private retryAttempt = 0;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private stopped = false;
  readonly queue: RetryQueue;
  labeledCount = 0;

  constructor(
    private readonly api: ApiClient,
    readonly stage: Stage,
    readonly annotator: string,
    private readonly options: ControllerOptions = {},
  ) {
    this.queue = new RetryQueue(api, {
      baseDelayMs: options.retryBaseMs,
      maxDelayMs: options.retryMaxMs,
      onChange: (count) => options.onPendingChange?.(count),
    });
  }

  getState(): ControllerState {
    return this.state;
  }

  async start(): Promise<void> {
    await this.fetchNext();
  }

  stop(): void {
    this.stopped = true;
    if (this.retryTimer !== null) clearTimeout(this.retryTimer);
  }

  async fetchNext(): Promise<void> {
    this.setState({ kind: "loading" });
    this.current = null;
    this.relabeling = false;
    let task: Task | null;
    try {
      task = await this.api.nextTask(this.stage, this.annotator);
      // the optimistic advance can outrun the label POST, in which case the
      // server hands our lease on the just-answered task back; wait it out
      for (let attempt = 0; task !== null && this.submitted.has(task.task_id); attempt++) {
        if (attempt > 400) break;
        await new Promise((resolve) => setTimeout(resolve, 25));
        task = await this.api.nextTask(this.stage, this.annotator);
      }
    } catch (error) {
      this.scheduleRefetch(error instanceof Error ? error.message : String(error));
      return;
    }
    this.retryAttempt = 0;
    if (task === null) {
      this.setState({ kind: "done" });
      return;
    }
    this.showTask(task, false);
  }

  /** Keyboard entry point; returns true when the key did something. */
  handleKey(key: string): boolean {
    const action = KEYMAP[key.toLowerCase()];
    if (action === undefined) return false;
    if (action === "replay") {
      if (this.state.kind === "task") this.options.onReplay?.();
      return this.state.kind === "task";
    }
    if (action === "back") {
      return this.goBack();
    }
    return this.submitVerdict(action);
  }

  /** Record a verdict for the task on screen and advance immediately. */
  submitVerdict(verdict: Verdict): boolean {
    if (this.current === null || this.state.kind !== "task") return false;
    const now = Date.now();
    const debounce = this.options.debounceMs ?? 150;
    if (now - this.lastAcceptedKeyAt < debounce) return false;
    this.lastAcceptedKeyAt = now;
    const task = this.current;
    const wasRelabel = this.relabeling;
    this.submitted.add(task.task_id);
    void this.queue.submit({ taskId: task.task_id, verdict, annotator: this.annotator });
    if (wasRelabel) {
      // superseding label recorded; resume the normal flow
      this.history[this.history.length - 1] = { task, verdict };
    } else {
      this.history.push({ task, verdict });
      this.labeledCount += 1;
    }
    void this.fetchNext();
    return true;
  }

  /** Re-open the previously labeled item so a correction can supersede it. */
  goBack(): boolean {
    if (this.relabeling || this.history.length === 0) return false;
    const previous = this.history[this.history.length - 1];
    this.showTask(previous.task, true);
    return true;
  }

  private showTask(task: Task, relabeling: boolean): void {
    this.current = task;
    this.relabeling = relabeling;
    const contextLines = Object.entries(task.context)
      .sort(([a], [b]) => (a < b ? -1 : 1))
      .map(([key, value]) => `${key}: ${String(value)}`);
    this.setState({
      kind: "task",
      view: {
        taskId: task.task_id,
        stage: task.stage,
        mediaUrl: this.api.mediaUrl(task.payload_ref),
        contextLines,
        shortcuts: SHORTCUT_HELP,
        relabeling,
      },
    });
  }

  private scheduleRefetch(message: string): void {
    const base = this.options.retryBaseMs ?? 1000;
    const max = this.options.retryMaxMs ?? 15000;
    const delay = Math.min(base * 2 ** this.retryAttempt, max);
    this.retryAttempt += 1;
    this.setState({ kind: "error", message, retryInMs: delay });
    if (this.stopped) return;
    if (this.retryTimer !== null) clearTimeout(this.retryTimer);
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      void this.fetchNext();
    }, delay);
  }

  private setState(state: ControllerState): void {
    this.state = state;
    this.options.onChange?.(state);
  }
}
