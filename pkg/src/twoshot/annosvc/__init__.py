"""Human-in-the-loop annotation checkpoints: durable label store and HTTP API."""

from .store import ExportBundle, Label, LabelStore, Task, TaskCandidate, STAGES, VERDICTS
from .service import make_app

__all__ = [
    "ExportBundle",
    "Label",
    "LabelStore",
    "Task",
    "TaskCandidate",
    "STAGES",
    "VERDICTS",
    "make_app",
]
