"""Append-only label store with deterministic task sampling and leasing.

Every state change is one JSON record appended to ``events.log`` and fsynced
before it is acknowledged, so after a crash a label is either durably present
or its task is still pending; a torn final line (interrupted append) is
discarded on load. Leases are in-memory only: restarting the service returns
leased-but-unlabeled tasks to the pending pool, which is the safe direction.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigurationError, ValidationError
from ..hashing import short_hash, unit_hash

STAGES = ("host_speech", "host_face")
VERDICTS = ("positive", "negative", "unsure")

DEFAULT_LEASE_SECONDS = 120.0


@dataclass(frozen=True)
class TaskCandidate:
    payload_ref: str
    context: dict


@dataclass(frozen=True)
class Label:
    task_id: str
    verdict: str
    annotator_id: str
    timestamp: float


@dataclass
class Task:
    task_id: str
    stage: str
    payload_ref: str
    context: dict
    status: str = "pending"  # pending | labeled | skipped
    labels: list[Label] = field(default_factory=list)

    @property
    def latest_verdict(self) -> str | None:
        return self.labels[-1].verdict if self.labels else None

    def public(self) -> dict:
        return {
            "task_id": self.task_id,
            "stage": self.stage,
            "payload_ref": self.payload_ref,
            "context": self.context,
            "status": self.status,
        }


@dataclass(frozen=True)
class ExportBundle:
    stage: str
    positives: tuple[Task, ...]
    negatives: tuple[Task, ...]


def task_id_for(stage: str, payload_ref: str) -> str:
    return f"{stage}-{short_hash(payload_ref)}"


class LabelStore:
    """Durable task/label state for the two annotation checkpoints."""

    def __init__(self, data_dir: str | Path, lease_seconds: float = DEFAULT_LEASE_SECONDS):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.data_dir / "events.log"
        self.lease_seconds = lease_seconds
        self.tasks: dict[str, Task] = {}
        self._leases: dict[str, tuple[str, float]] = {}  # task_id -> (annotator, expiry)
        self._lock = threading.Lock()
        self._load()

    # -- persistence --------------------------------------------------------

    def _load(self) -> None:
        if not self.log_path.exists():
            return
        raw = self.log_path.read_bytes()
        pieces = raw.split(b"\n")
        consumed = 0
        for i, piece in enumerate(pieces):
            terminated = i < len(pieces) - 1
            if not piece.strip():
                consumed += len(piece) + (1 if terminated else 0)
                continue
            try:
                event = json.loads(piece.decode("utf-8"))
                if not isinstance(event, dict):
                    raise ValidationError("event is not an object")
            except (json.JSONDecodeError, UnicodeDecodeError, ValidationError) as exc:
                if not terminated:
                    break  # torn tail from an interrupted append; discard
                raise ValidationError(f"{self.log_path}: corrupt event mid-log: {exc}") from exc
            self._apply(event)
            consumed += len(piece) + (1 if terminated else 0)
        if consumed < len(raw):
            with open(self.log_path, "r+b") as fh:
                fh.truncate(consumed)

    def _apply(self, event: dict) -> None:
        kind = event["type"]
        if kind == "task":
            task = Task(
                task_id=event["task_id"],
                stage=event["stage"],
                payload_ref=event["payload_ref"],
                context=event.get("context", {}),
            )
            self.tasks.setdefault(task.task_id, task)
        elif kind == "label":
            task = self.tasks.get(event["task_id"])
            if task is None:
                raise ValidationError(f"label event for unknown task {event['task_id']}")
            task.labels.append(
                Label(event["task_id"], event["verdict"], event["annotator_id"], event["timestamp"])
            )
            task.status = "labeled"
        elif kind == "skip":
            task = self.tasks.get(event["task_id"])
            if task is not None and task.status == "pending":
                task.status = "skipped"
        else:
            raise ValidationError(f"unknown event type {kind!r}")

    def _append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True) + "\n"
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def compact(self) -> None:
        """Rewrite the log keeping tasks and only each task's latest label."""
        with self._lock:
            tmp = self.log_path.with_suffix(".log.tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for task_id in sorted(self.tasks):
                    task = self.tasks[task_id]
                    fh.write(
                        json.dumps(
                            {
                                "type": "task",
                                "task_id": task.task_id,
                                "stage": task.stage,
                                "payload_ref": task.payload_ref,
                                "context": task.context,
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )
                    if task.labels:
                        last = task.labels[-1]
                        fh.write(
                            json.dumps(
                                {
                                    "type": "label",
                                    "task_id": last.task_id,
                                    "verdict": last.verdict,
                                    "annotator_id": last.annotator_id,
                                    "timestamp": last.timestamp,
                                },
                                sort_keys=True,
                            )
                            + "\n"
                        )
                fh.flush()
                os.fsync(fh.fileno())
            tmp.replace(self.log_path)

    # -- operations ----------------------------------------------------------

    def create_tasks(self, stage: str, candidates: list[TaskCandidate], sample_fraction: float) -> int:
        """Deterministically sample candidates into tasks; idempotent on reruns."""
        if stage not in STAGES:
            raise ConfigurationError(f"unknown annotation stage {stage!r}")
        if not candidates:
            raise ConfigurationError("create_tasks needs at least one candidate")
        if not 0.0 < sample_fraction <= 1.0:
            raise ConfigurationError(f"sample_fraction must be in (0, 1], got {sample_fraction}")
        created = 0
        with self._lock:
            for cand in candidates:
                if unit_hash(cand.payload_ref) >= sample_fraction:
                    continue
                task_id = task_id_for(stage, cand.payload_ref)
                if task_id in self.tasks:
                    continue
                event = {
                    "type": "task",
                    "task_id": task_id,
                    "stage": stage,
                    "payload_ref": cand.payload_ref,
                    "context": cand.context,
                }
                self._append(event)
                self._apply(event)
                created += 1
        return created

    def next_task(self, stage: str, annotator_id: str) -> Task | None:
        """Lease the next pending task to the annotator, or return their live lease."""
        if stage not in STAGES:
            raise ConfigurationError(f"unknown annotation stage {stage!r}")
        now = time.monotonic()
        with self._lock:
            expired = [tid for tid, (_, exp) in self._leases.items() if exp <= now]
            for tid in expired:
                del self._leases[tid]
            for tid, (holder, _exp) in self._leases.items():
                task = self.tasks[tid]
                if holder == annotator_id and task.stage == stage and task.status == "pending":
                    self._leases[tid] = (annotator_id, now + self.lease_seconds)
                    return task
            for task_id in sorted(self.tasks):
                task = self.tasks[task_id]
                if task.stage != stage or task.status != "pending" or task_id in self._leases:
                    continue
                self._leases[task_id] = (annotator_id, now + self.lease_seconds)
                return task
        return None

    def mark_skipped(self, task_id: str) -> None:
        """Take a pending task out of circulation without a verdict."""
        with self._lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise KeyError(task_id)
            if task.status != "pending":
                return
            event = {"type": "skip", "task_id": task_id}
            self._append(event)
            self._apply(event)
            self._leases.pop(task_id, None)

    def submit_label(self, task_id: str, verdict: str, annotator_id: str) -> Task:
        """Durably append a label; later submissions supersede earlier ones."""
        if verdict not in VERDICTS:
            raise ValidationError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        with self._lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise KeyError(task_id)
            event = {
                "type": "label",
                "task_id": task_id,
                "verdict": verdict,
                "annotator_id": annotator_id,
                "timestamp": time.time(),
            }
            self._append(event)
            self._apply(event)
            self._leases.pop(task_id, None)
            return task

    def export(self, stage: str) -> ExportBundle:
        """Labeled tasks partitioned by latest verdict, 'unsure' excluded."""
        if stage not in STAGES:
            raise ConfigurationError(f"unknown annotation stage {stage!r}")
        positives: list[Task] = []
        negatives: list[Task] = []
        with self._lock:
            for task_id in sorted(self.tasks):
                task = self.tasks[task_id]
                if task.stage != stage or task.status != "labeled":
                    continue
                if task.latest_verdict == "positive":
                    positives.append(task)
                elif task.latest_verdict == "negative":
                    negatives.append(task)
        return ExportBundle(stage=stage, positives=tuple(positives), negatives=tuple(negatives))

    def progress(self, stage: str) -> dict:
        with self._lock:
            stage_tasks = [t for t in self.tasks.values() if t.stage == stage]
            labeled = sum(1 for t in stage_tasks if t.status == "labeled")
            pending = sum(1 for t in stage_tasks if t.status == "pending")
            return {"stage": stage, "total": len(stage_tasks), "labeled": labeled, "pending": pending}

    def active_lease(self, task_id: str) -> str | None:
        with self._lock:
            entry = self._leases.get(task_id)
            if entry and entry[1] > time.monotonic():
                return entry[0]
            return None
