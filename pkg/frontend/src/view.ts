/** DOM rendering for the controller states. Logic stays in the controller. */

import { ControllerState } from "./controller.js";

export interface ViewElements {
  root: HTMLElement;
  banner: HTMLElement;
  pendingBadge: HTMLElement;
  progress: HTMLElement;
}

export function renderState(elements: ViewElements, state: ControllerState): void {
  const { root, banner } = elements;
  banner.hidden = state.kind !== "error";
  if (state.kind === "error") {
    banner.textContent = `service unreachable, retrying in ${Math.round(state.retryInMs / 1000)}s (${state.message})`;
  }
  switch (state.kind) {
    case "loading":
      root.innerHTML = '<p class="muted">loading…</p>';
      return;
    case "done":
      root.innerHTML = '<div class="done"><h2>All done</h2><p>No pending tasks remain for this stage.</p></div>';
      return;
    case "error":
      root.innerHTML = '<p class="muted">waiting for the service…</p>';
      return;
    case "task":
      break;
  }
  const view = state.view;
  const media =
    view.stage === "host_speech"
      ? `<audio id="media" src="${view.mediaUrl}" controls autoplay></audio>`
      : `<img id="media" src="${view.mediaUrl}" alt="face crop" class="zoomable">`;
  const question =
    view.stage === "host_speech" ? "Is this the host speaking?" : "Is this the host?";
  const shortcuts = Object.entries(view.shortcuts)
    .map(([key, label]) => `<kbd>${key}</kbd> ${label}`)
    .join(" · ");
  root.innerHTML = `
    <div class="task${view.relabeling ? " relabel" : ""}">
      ${view.relabeling ? '<p class="relabel-note">correcting previous item — new verdict supersedes</p>' : ""}
      <h2>${question}</h2>
      <div class="media">${media}</div>
      <ul class="context">${view.contextLines.map((line) => `<li>${line}</li>`).join("")}</ul>
      <p class="shortcuts">${shortcuts}</p>
    </div>`;
  const img = root.querySelector("img.zoomable");
  img?.addEventListener("click", () => img.classList.toggle("zoomed"));
}

export function renderPending(elements: ViewElements, count: number): void {
  elements.pendingBadge.hidden = count === 0;
  elements.pendingBadge.textContent = `${count} unsent`;
}

export function renderProgress(elements: ViewElements, labeled: number, total: number): void {
  elements.progress.textContent = total ? `${labeled} / ${total} labeled` : "";
}

export function replayMedia(root: HTMLElement): void {
  const audio = root.querySelector<HTMLAudioElement>("audio#media");
  if (audio) {
    audio.currentTime = 0;
    void audio.play();
  }
}
