"""Initial vetting: carve a tracking log into two-person co-occurrence segments.

A frame qualifies when exactly two person-kind identities are detected in it
at or above the confidence floor. Qualifying runs separated by short
non-qualifying stretches (detector dropouts, walk-through thirds) are merged,
with the bridged frames recorded per segment. Track ids may churn inside a
merged run; the segment reports the modal pair and counts frames showing a
different pair as gaps.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .ingest import TrackLog

DEFAULT_MAX_GAP = 12  # ~0.5 s of bridged dropout at a 25 fps decode rate
DEFAULT_MIN_LEN = 50  # 2 s worth of frames at 25 fps
DEFAULT_MIN_CONFIDENCE = 0.5


@dataclass(frozen=True)
class TwoPersonSegment:
    """Half-open frame interval [start_frame, end_frame) with exactly two people."""

    episode_id: str
    start_frame: int
    end_frame: int
    track_ids: tuple[int, int]
    gap_frames: tuple[int, ...]

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame


def qualifying_pairs(
    log: TrackLog, min_confidence: float = DEFAULT_MIN_CONFIDENCE
) -> dict[int, frozenset[int]]:
    """Map each qualifying frame to its pair of person track ids."""
    tracks_by_frame: dict[int, set[int]] = {}
    for det in log.detections:
        if det.kind != "person" or det.confidence < min_confidence:
            continue
        tracks_by_frame.setdefault(det.frame_index, set()).add(det.track_id)
    return {
        frame: frozenset(ids) for frame, ids in tracks_by_frame.items() if len(ids) == 2
    }


def extract_two_person_segments(
    log: TrackLog,
    max_gap: int = DEFAULT_MAX_GAP,
    min_len: int = DEFAULT_MIN_LEN,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
) -> list[TwoPersonSegment]:
    """Extract merged two-person segments from a frame-sorted tracking log.

    Qualifying runs separated by at most ``max_gap`` non-qualifying frames are
    fused; merged runs spanning fewer than ``min_len`` frames are discarded.
    ``gap_frames`` lists both the bridged non-qualifying frames and qualifying
    frames whose pair differs from the segment's modal pair.
    """
    if max_gap < 0:
        raise ValueError("max_gap must be >= 0")
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    pairs = qualifying_pairs(log, min_confidence)
    frames = sorted(pairs)
    runs: list[list[int]] = []
    for frame in frames:
        if runs and frame - runs[-1][-1] - 1 <= max_gap:
            runs[-1].append(frame)
        else:
            runs.append([frame])
    segments: list[TwoPersonSegment] = []
    for run in runs:
        start, end = run[0], run[-1] + 1
        if end - start < min_len:
            continue
        counts = Counter(pairs[f] for f in run)
        top = max(counts.values())
        # ties resolve to the lexicographically smallest sorted pair
        modal = min(
            (pair for pair, n in counts.items() if n == top),
            key=lambda p: tuple(sorted(p)),
        )
        gaps = [f for f in range(start, end) if pairs.get(f) != modal]
        segments.append(
            TwoPersonSegment(
                episode_id=log.episode_id,
                start_frame=start,
                end_frame=end,
                track_ids=tuple(sorted(modal)),
                gap_frames=tuple(gaps),
            )
        )
    return segments
