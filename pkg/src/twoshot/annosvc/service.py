"""HTTP API over the label store, plus static serving of media and the UI.

Endpoints:
    GET  /tasks/next?stage=&annotator=   lease and return the next pending task
    POST /labels                         {task_id, verdict, annotator}
    GET  /export?stage=                  labeled sets partitioned by verdict
    GET  /progress?stage=                pending/labeled counters
    GET  /media/{payload_ref}            pre-cut snippets and crops, by reference
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..errors import ConfigurationError
from .store import LabelStore, STAGES, Task


class LabelSubmission(BaseModel):
    task_id: str
    verdict: Literal["positive", "negative", "unsure"]
    annotator: str


def _task_json(task: Task | None) -> dict:
    return {"task": task.public() if task else None}


def make_app(
    store: LabelStore,
    media_root: str | Path | None = None,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="twoshot annotation service")
    media_base = Path(media_root).resolve() if media_root else None

    @app.get("/tasks/next")
    def next_task(stage: str = Query(...), annotator: str = Query(...)) -> dict:
        if stage not in STAGES:
            raise HTTPException(status_code=400, detail=f"unknown stage {stage!r}")
        return _task_json(store.next_task(stage, annotator))

    @app.post("/labels")
    def submit_label(submission: LabelSubmission) -> dict:
        try:
            task = store.submit_label(submission.task_id, submission.verdict, submission.annotator)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown task {submission.task_id!r}")
        return {"ok": True, "task_id": task.task_id, "status": task.status}

    @app.get("/export")
    def export(stage: str = Query(...)) -> dict:
        try:
            bundle = store.export(stage)
        except ConfigurationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "stage": bundle.stage,
            "positives": [t.public() for t in bundle.positives],
            "negatives": [t.public() for t in bundle.negatives],
        }

    @app.get("/progress")
    def progress(stage: str = Query(...)) -> dict:
        if stage not in STAGES:
            raise HTTPException(status_code=400, detail=f"unknown stage {stage!r}")
        return store.progress(stage)

    @app.get("/media/{payload_ref:path}")
    def media(payload_ref: str) -> FileResponse:
        if media_base is None:
            raise HTTPException(status_code=404, detail="no media root configured")
        target = (media_base / payload_ref).resolve()
        if media_base not in target.parents and target != media_base:
            raise HTTPException(status_code=403, detail="path escapes media root")
        if not target.is_file():
            raise HTTPException(status_code=404, detail=f"no media at {payload_ref!r}")
        return FileResponse(target)

    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
