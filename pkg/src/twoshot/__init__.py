"""Curation engine for two-person interview footage.

Converts per-frame detection logs, speaker-diarization segments, and identity
embeddings into paired guest-context / host-response clips with frame-level
identity labels, crop geometry, render plans, and dataset statistics.
"""

__version__ = "0.1.0"
