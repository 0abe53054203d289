"""Parsers for the three upstream perception artifacts.

All three formats are UTF-8, whitespace-delimited, one record per line.
Lines starting with ``#`` are comments and ignored everywhere.

Tracking log, one detection per line::

    episode_id frame_index track_id kind x y w h confidence

Diarization file, one speech segment per line::

    clip_id speaker_label start_s end_s embedding_id

Embedding table: a header line holding the dimension ``d``, then one record
per line::

    embedding_id v1 v2 ... vd

Face embeddings consumed by identity assignment use the id convention
``{episode_id}:{frame_index}:{track_id}`` so detections can be joined to
their vectors without extra columns in the tracking log.

Parsers never silently drop a well-formed record: every input line is
accounted for as parsed, malformed, or dropped-degenerate in the returned
report. Files whose malformed fraction exceeds the tolerance raise
:class:`ValidationError` naming the first offending line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datamodel import BBox, EpisodeMeta
from .errors import ValidationError
from .numerics import format_float

KINDS = ("person", "face")

MALFORMED_TOLERANCE = 0.05


def face_embedding_id(episode_id: str, frame_index: int, track_id: int) -> str:
    """Embedding-table key joining a face detection to its identity vector."""
    return f"{episode_id}:{frame_index}:{track_id}"


@dataclass(frozen=True)
class Detection:
    frame_index: int
    track_id: int
    bbox: BBox
    confidence: float
    kind: str


@dataclass(frozen=True)
class TrackLog:
    episode_id: str
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class DiarSegment:
    clip_id: str
    speaker_label: str
    start_s: float
    end_s: float
    embedding_id: str


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]

    def __contains__(self, embedding_id: str) -> bool:
        return embedding_id in self.vectors

    def __getitem__(self, embedding_id: str) -> np.ndarray:
        return self.vectors[embedding_id]

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class ParseReport:
    """Per-file accounting; input lines = parsed + malformed + dropped_degenerate."""

    path: str
    total_lines: int = 0
    parsed: int = 0
    malformed: int = 0
    dropped_degenerate: int = 0
    rejected_ids: list[str] = field(default_factory=list)
    first_malformed: str | None = None

    def note_malformed(self, lineno: int, reason: str) -> None:
        self.malformed += 1
        if self.first_malformed is None:
            self.first_malformed = f"{self.path}:{lineno}: {reason}"


def _data_lines(path: str | Path):
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def _check_tolerance(report: ParseReport, bad: int) -> None:
    if report.total_lines and bad / report.total_lines > MALFORMED_TOLERANCE:
        raise ValidationError(
            f"{report.path}: {bad}/{report.total_lines} bad lines exceeds "
            f"{MALFORMED_TOLERANCE:.0%} tolerance; first: {report.first_malformed}"
        )


def parse_tracking_log(path: str | Path) -> tuple[TrackLog, ParseReport]:
    """Parse a per-frame detection log into a frame-sorted TrackLog.

    All records must share one episode_id; detections come back sorted by
    (frame_index, track_id) regardless of file order.
    """
    report = ParseReport(path=str(path))
    detections: list[Detection] = []
    episode_id: str | None = None
    for lineno, line in _data_lines(path):
        report.total_lines += 1
        fields = line.split()
        if len(fields) != 9:
            report.note_malformed(lineno, f"expected 9 fields, got {len(fields)}")
            continue
        eid, frame_s, track_s, kind, x, y, w, h, conf_s = fields
        try:
            frame = int(frame_s)
            track = int(track_s)
            conf = float(conf_s)
            bbox = BBox(float(x), float(y), float(w), float(h))
        except (ValueError, ValidationError) as exc:
            report.note_malformed(lineno, str(exc))
            continue
        if kind not in KINDS:
            report.note_malformed(lineno, f"unknown kind {kind!r}")
            continue
        if frame < 0:
            report.note_malformed(lineno, f"negative frame_index {frame}")
            continue
        if not 0.0 <= conf <= 1.0:
            report.note_malformed(lineno, f"confidence {conf} outside [0, 1]")
            continue
        if episode_id is None:
            episode_id = eid
        elif eid != episode_id:
            raise ValidationError(
                f"{path}:{lineno}: episode {eid!r} differs from {episode_id!r}; "
                "tracking logs hold one episode per file"
            )
        detections.append(Detection(frame, track, bbox, conf, kind))
        report.parsed += 1
    _check_tolerance(report, report.malformed)
    detections.sort(
        key=lambda d: (d.frame_index, d.track_id, d.kind, d.bbox.x, d.bbox.y, d.confidence)
    )
    return TrackLog(episode_id or "", tuple(detections)), report


def write_tracking_log(log: TrackLog, path: str | Path) -> None:
    lines = []
    for d in sorted(
        log.detections,
        key=lambda d: (d.frame_index, d.track_id, d.kind, d.bbox.x, d.bbox.y, d.confidence),
    ):
        lines.append(
            " ".join(
                [
                    log.episode_id,
                    str(d.frame_index),
                    str(d.track_id),
                    d.kind,
                    format_float(d.bbox.x),
                    format_float(d.bbox.y),
                    format_float(d.bbox.w),
                    format_float(d.bbox.h),
                    format_float(d.confidence),
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def parse_diarization(path: str | Path) -> tuple[list[DiarSegment], ParseReport]:
    """Parse diarization segments, preserving crosstalk overlaps verbatim.

    Zero-length segments are dropped with a warning count; inverted intervals
    count as malformed. Either kind on more than the tolerated fraction of
    lines raises :class:`ValidationError`.
    """
    report = ParseReport(path=str(path))
    segments: list[DiarSegment] = []
    for lineno, line in _data_lines(path):
        report.total_lines += 1
        fields = line.split()
        if len(fields) != 5:
            report.note_malformed(lineno, f"expected 5 fields, got {len(fields)}")
            continue
        clip_id, speaker, start_s, end_s, embedding_id = fields
        try:
            start = float(start_s)
            end = float(end_s)
        except ValueError as exc:
            report.note_malformed(lineno, str(exc))
            continue
        if end < start:
            report.note_malformed(lineno, f"end_s {end} before start_s {start}")
            continue
        if end == start:
            report.dropped_degenerate += 1
            if report.first_malformed is None:
                report.first_malformed = f"{report.path}:{lineno}: zero-length segment"
            continue
        segments.append(DiarSegment(clip_id, speaker, start, end, embedding_id))
        report.parsed += 1
    _check_tolerance(report, report.malformed + report.dropped_degenerate)
    return segments, report


def write_diarization(segments: list[DiarSegment], path: str | Path) -> None:
    lines = [
        " ".join(
            [s.clip_id, s.speaker_label, format_float(s.start_s), format_float(s.end_s), s.embedding_id]
        )
        for s in segments
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_embeddings(path: str | Path) -> tuple[EmbeddingTable, ParseReport]:
    """Load an embedding table, renormalizing every vector to unit norm.

    Zero vectors are rejected per record (ids collected in the report);
    a dimension differing from the header is a validation error.
    """
    report = ParseReport(path=str(path))
    lines = list(_data_lines(path))
    if not lines:
        raise ValidationError(f"{path}: missing dimension header")
    header_lineno, header = lines[0]
    try:
        dim = int(header.split()[0])
    except ValueError as exc:
        raise ValidationError(f"{path}:{header_lineno}: bad dimension header: {exc}") from exc
    if dim <= 0:
        raise ValidationError(f"{path}:{header_lineno}: dimension must be positive, got {dim}")
    vectors: dict[str, np.ndarray] = {}
    for lineno, line in lines[1:]:
        report.total_lines += 1
        fields = line.split()
        embedding_id = fields[0]
        if len(fields) - 1 != dim:
            raise ValidationError(
                f"{path}:{lineno}: vector for {embedding_id!r} has {len(fields) - 1} "
                f"components, header says {dim}"
            )
        try:
            vec = np.array([float(v) for v in fields[1:]], dtype=np.float64)
        except ValueError as exc:
            report.note_malformed(lineno, str(exc))
            continue
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            report.rejected_ids.append(embedding_id)
            report.dropped_degenerate += 1
            continue
        # already-unit vectors pass through untouched so reloading a
        # normalized table is bit-stable
        vectors[embedding_id] = vec if abs(norm - 1.0) <= 1e-9 else vec / norm
        report.parsed += 1
    _check_tolerance(report, report.malformed)
    return EmbeddingTable(dim, vectors), report


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    lines = [str(table.dim)]
    for embedding_id in sorted(table.vectors):
        vec = table.vectors[embedding_id]
        lines.append(" ".join([embedding_id] + [format_float(v) for v in vec]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_episodes(path: str | Path) -> list[EpisodeMeta]:
    """Episode metadata file: episode_id source_uri fps frame_count width height duration_s."""
    episodes = []
    for lineno, line in _data_lines(path):
        fields = line.split()
        if len(fields) != 7:
            raise ValidationError(f"{path}:{lineno}: expected 7 fields, got {len(fields)}")
        eid, uri, fps, frames, w, h, dur = fields
        episodes.append(
            EpisodeMeta(eid, uri, float(fps), int(frames), int(w), int(h), float(dur))
        )
    return episodes


def write_episodes(episodes: list[EpisodeMeta], path: str | Path) -> None:
    lines = [
        " ".join(
            [
                ep.episode_id,
                ep.source_uri,
                format_float(ep.fps),
                str(ep.frame_count),
                str(ep.width),
                str(ep.height),
                format_float(ep.duration_s),
            ]
        )
        for ep in sorted(episodes, key=lambda e: e.episode_id)
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
