/** Local retry queue so a flaky network never loses a submitted verdict.
 *
 * Network failures requeue the submission with exponential backoff; HTTP
 * rejections (unknown task, bad verdict) are surfaced and dropped, since
 * retrying them can never succeed.
 */

import { ApiClient, ApiRejection, Verdict } from "./api.js";

export interface PendingLabel {
  taskId: string;
  verdict: Verdict;
  annotator: string;
}

export interface RetryQueueOptions {
  baseDelayMs?: number;
  maxDelayMs?: number;
  onChange?: (pendingCount: number) => void;
  onRejection?: (label: PendingLabel, error: ApiRejection) => void;
}

export class RetryQueue {
  private pending: PendingLabel[] = [];
  private flushing = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private attempt = 0;

  constructor(
    private readonly api: ApiClient,
    private readonly options: RetryQueueOptions = {},
  ) {}

  get pendingCount(): number {
    return this.pending.length;
  }

  /** Enqueue and immediately try to deliver. */
  submit(label: PendingLabel): Promise<void> {
    this.pending.push(label);
    this.notify();
    return this.flush();
  }

  async flush(): Promise<void> {
    if (this.flushing) return;
    this.flushing = true;
    try {
      while (this.pending.length > 0) {
        const label = this.pending[0];
        try {
          await this.api.submitLabel(label.taskId, label.verdict, label.annotator);
        } catch (error) {
          if (error instanceof ApiRejection) {
            this.pending.shift();
            this.notify();
            this.options.onRejection?.(label, error);
            continue;
          }
          this.scheduleRetry();
          return;
        }
        this.attempt = 0;
        this.pending.shift();
        this.notify();
      }
      if (this.timer !== null) {
        clearTimeout(this.timer);
        this.timer = null;
      }
    } finally {
      this.flushing = false;
    }
  }

  private scheduleRetry(): void {
    const base = this.options.baseDelayMs ?? 500;
    const max = this.options.maxDelayMs ?? 8000;
    const delay = Math.min(base * 2 ** this.attempt, max);
    this.attempt += 1;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.flush();
    }, delay);
  }

  private notify(): void {
    this.options.onChange?.(this.pending.length);
  }
}
