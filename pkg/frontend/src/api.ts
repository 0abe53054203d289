/** Thin client for the annotation service HTTP API. */

export type Stage = "host_speech" | "host_face";
export type Verdict = "positive" | "negative" | "unsure";

export interface Task {
  task_id: string;
  stage: Stage;
  payload_ref: string;
  context: Record<string, unknown>;
  status: string;
}

export interface Progress {
  stage: Stage;
  total: number;
  labeled: number;
  pending: number;
}

export interface ExportBundle {
  stage: Stage;
  positives: Task[];
  negatives: Task[];
}

/** Raised for HTTP-level rejections (bad verdict, unknown task). */
export class ApiRejection extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, init);
    if (!response.ok) {
      const body = await response.text().catch(() => "");
      throw new ApiRejection(response.status, `${path} -> ${response.status}: ${body}`);
    }
    return (await response.json()) as T;
  }

  async nextTask(stage: Stage, annotator: string): Promise<Task | null> {
    const params = new URLSearchParams({ stage, annotator });
    const data = await this.request<{ task: Task | null }>(`/tasks/next?${params}`);
    return data.task;
  }

  async submitLabel(taskId: string, verdict: Verdict, annotator: string): Promise<void> {
    await this.request("/labels", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ task_id: taskId, verdict, annotator }),
    });
  }

  async progress(stage: Stage): Promise<Progress> {
    return this.request<Progress>(`/progress?stage=${stage}`);
  }

  async exportLabels(stage: Stage): Promise<ExportBundle> {
    return this.request<ExportBundle>(`/export?stage=${stage}`);
  }

  mediaUrl(payloadRef: string): string {
    return `${this.baseUrl}/media/${payloadRef}`;
  }
}
