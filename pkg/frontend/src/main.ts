import { ApiClient, Stage } from "./api.js";
import { AnnotationController } from "./controller.js";
import { renderPending, renderProgress, renderState, replayMedia, ViewElements } from "./view.js";

function requireElement(id: string): HTMLElement {
  const element = document.getElementById(id);
  if (!element) throw new Error(`missing #${id}`);
  return element;
}

function resolveStage(): Stage {
  const raw = new URLSearchParams(window.location.search).get("stage");
  return raw === "host_face" ? "host_face" : "host_speech";
}

function resolveAnnotator(): string {
  const params = new URLSearchParams(window.location.search);
  const fromQuery = params.get("annotator");
  if (fromQuery) return fromQuery;
  const answer = window.prompt("annotator id?") || "anon";
  return answer.trim() || "anon";
}

function boot(): void {
  const elements: ViewElements = {
    root: requireElement("task-root"),
    banner: requireElement("banner"),
    pendingBadge: requireElement("pending-badge"),
    progress: requireElement("progress"),
  };
  const stage = resolveStage();
  const annotator = resolveAnnotator();
  const api = new ApiClient("");
  requireElement("stage-name").textContent = stage.replace("_", " ");

  const refreshProgress = () => {
    api
      .progress(stage)
      .then((p) => renderProgress(elements, p.labeled, p.total))
      .catch(() => renderProgress(elements, 0, 0));
  };

  const controller = new AnnotationController(api, stage, annotator, {
    onChange: (state) => {
      renderState(elements, state);
      if (state.kind === "task" || state.kind === "done") refreshProgress();
    },
    onPendingChange: (count) => renderPending(elements, count),
    onReplay: () => replayMedia(elements.root),
  });

  window.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement || event.target instanceof HTMLTextAreaElement) {
      return;
    }
    if (controller.handleKey(event.key)) event.preventDefault();
  });

  void controller.start();
}

boot();
