"""Canonical domain types, dataset manifest, split assignment, and statistics.

The manifest is persisted as a single UTF-8 text file, one tab-separated
record per line in a fixed field order:

    #twoshot-manifest v1
    episode <episode_id> <source_uri> <fps> <frame_count> <width> <height> <duration_s>
    clip    <clip_id> <episode_id> <start_frame> <end_frame> <split> <duration_s>
    pair    <pair_id> <clip_id> <plan_path>

Records are written sorted by their identifier and floats use shortest
round-trip decimals, so saving a loaded manifest is byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError, ValidationError
from .hashing import unit_hash
from .numerics import format_float

SCHEMA_VERSION = 1
SPLITS = ("train", "val", "test")
_MANIFEST_MAGIC = "#twoshot-manifest"

DEFAULT_SPLIT_RATIOS = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class EpisodeMeta:
    """Source-footage metadata supplied by ingestion (never probed from media)."""

    episode_id: str
    source_uri: str
    fps: float
    frame_count: int
    width: int
    height: int
    duration_s: float

    def __post_init__(self):
        if self.fps <= 0:
            raise ValidationError(f"episode {self.episode_id}: fps must be > 0")
        if self.frame_count < 0:
            raise ValidationError(f"episode {self.episode_id}: negative frame_count")
        expected = self.frame_count / self.fps
        if abs(self.duration_s - expected) > 1.0 / self.fps:
            raise ValidationError(
                f"episode {self.episode_id}: duration_s {self.duration_s} not within "
                f"one frame of frame_count/fps = {expected}"
            )


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, top-left corner plus size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"bbox sides must be positive, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2

    @property
    def cy(self) -> float:
        return self.y + self.h / 2


@dataclass(frozen=True)
class ClipRecord:
    """A half-open frame interval [start_frame, end_frame) of one episode."""

    clip_id: str
    episode_id: str
    start_frame: int
    end_frame: int
    split: str
    duration_s: float

    def __post_init__(self):
        if self.end_frame <= self.start_frame:
            raise ValidationError(f"clip {self.clip_id}: end_frame must exceed start_frame")
        if self.split not in SPLITS:
            raise ValidationError(f"clip {self.clip_id}: unknown split {self.split!r}")

    @property
    def n_frames(self) -> int:
        return self.end_frame - self.start_frame


@dataclass(frozen=True)
class PairRef:
    """Reference to an interaction pair and its render plan artifact."""

    pair_id: str
    clip_id: str
    plan_path: str


@dataclass
class Manifest:
    episodes: list[EpisodeMeta] = field(default_factory=list)
    clips: list[ClipRecord] = field(default_factory=list)
    pairs: list[PairRef] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> None:
        episode_ids = {e.episode_id for e in self.episodes}
        if len(episode_ids) != len(self.episodes):
            raise ValidationError("duplicate episode_id in manifest")
        clip_ids = set()
        for clip in self.clips:
            if clip.clip_id in clip_ids:
                raise ValidationError(f"duplicate clip_id {clip.clip_id}")
            clip_ids.add(clip.clip_id)
            if clip.episode_id not in episode_ids:
                raise ValidationError(
                    f"clip {clip.clip_id} references unknown episode {clip.episode_id}"
                )
        for pair in self.pairs:
            if pair.clip_id not in clip_ids:
                raise ValidationError(
                    f"pair {pair.pair_id} references unknown clip {pair.clip_id}"
                )

    def episode_by_id(self, episode_id: str) -> EpisodeMeta:
        for ep in self.episodes:
            if ep.episode_id == episode_id:
                return ep
        raise KeyError(episode_id)


def clip_id_for(episode_id: str, start_frame: int, end_frame: int) -> str:
    """Deterministic clip identifier shared by the segmenter and fixtures."""
    return f"{episode_id}-{start_frame}-{end_frame}"


def assign_split(clip_id: str, ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS) -> str:
    """Deterministically assign a clip to train/val/test by hashing its id.

    A stable 64-bit hash of ``clip_id`` maps to [0, 1); cumulative ratio
    buckets pick the split. The same input always yields the same split,
    independent of manifest order or process state.
    """
    if not clip_id:
        raise ConfigurationError("clip_id must be non-empty")
    if len(ratios) != len(SPLITS):
        raise ConfigurationError(f"expected {len(SPLITS)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigurationError(f"split ratios must be non-negative: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must sum to 1, got {sum(ratios)}")
    u = unit_hash(clip_id)
    cumulative = 0.0
    for name, ratio in zip(SPLITS, ratios):
        cumulative += ratio
        if u < cumulative:
            return name
    return SPLITS[-1]


@dataclass(frozen=True)
class StatsReport:
    """Aggregate clip-duration statistics (population std, 1-second bins)."""

    clip_count: int
    total_s: float
    total_hours: float
    mean_s: float
    std_s: float
    histogram: tuple[tuple[int, int], ...]  # (bin_start_s, count), bins are [b, b+1)

    def as_text(self) -> str:
        lines = [
            "# clip duration statistics (population std, 1-second histogram bins)",
            "clips\ttotal_hours\tduration_s",
            f"{self.clip_count}\t{self.total_hours:.2f}\t{self.mean_s:.2f} +/- {self.std_s:.2f}",
        ]
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {
            "clip_count": self.clip_count,
            "total_s": self.total_s,
            "total_hours": self.total_hours,
            "mean_s": self.mean_s,
            "std_s": self.std_s,
            "histogram": [{"bin_start_s": b, "count": c} for b, c in self.histogram],
        }


def compute_stats(manifest: Manifest) -> StatsReport:
    """Clip count, total hours, mean/std duration, and a 1-s histogram.

    An empty manifest yields a zero report rather than an error.
    """
    manifest.validate()
    durations = [c.duration_s for c in manifest.clips]
    if not durations:
        return StatsReport(0, 0.0, 0.0, 0.0, 0.0, ())
    n = len(durations)
    total = math.fsum(durations)
    mean = total / n
    var = math.fsum((d - mean) ** 2 for d in durations) / n
    std = math.sqrt(var)
    lo = math.floor(min(durations))
    hi = math.floor(max(durations))
    counts = {b: 0 for b in range(lo, hi + 1)}
    for d in durations:
        counts[math.floor(d)] += 1
    histogram = tuple(sorted(counts.items()))
    return StatsReport(n, total, total / 3600.0, mean, std, histogram)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    manifest.validate()
    lines = [f"{_MANIFEST_MAGIC} v{manifest.schema_version}"]
    for ep in sorted(manifest.episodes, key=lambda e: e.episode_id):
        lines.append(
            "\t".join(
                [
                    "episode",
                    ep.episode_id,
                    ep.source_uri,
                    format_float(ep.fps),
                    str(ep.frame_count),
                    str(ep.width),
                    str(ep.height),
                    format_float(ep.duration_s),
                ]
            )
        )
    for clip in sorted(manifest.clips, key=lambda c: c.clip_id):
        lines.append(
            "\t".join(
                [
                    "clip",
                    clip.clip_id,
                    clip.episode_id,
                    str(clip.start_frame),
                    str(clip.end_frame),
                    clip.split,
                    format_float(clip.duration_s),
                ]
            )
        )
    for pair in sorted(manifest.pairs, key=lambda p: p.pair_id):
        lines.append("\t".join(["pair", pair.pair_id, pair.clip_id, pair.plan_path]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> Manifest:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith(_MANIFEST_MAGIC):
        raise ValidationError(f"{path}: not a manifest file")
    version = int(lines[0].split("v")[-1])
    manifest = Manifest(schema_version=version)
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        kind = fields[0]
        try:
            if kind == "episode":
                _, eid, uri, fps, frames, w, h, dur = fields
                manifest.episodes.append(
                    EpisodeMeta(eid, uri, float(fps), int(frames), int(w), int(h), float(dur))
                )
            elif kind == "clip":
                _, cid, eid, start, end, split, dur = fields
                manifest.clips.append(
                    ClipRecord(cid, eid, int(start), int(end), split, float(dur))
                )
            elif kind == "pair":
                _, pid, cid, plan = fields
                manifest.pairs.append(PairRef(pid, cid, plan))
            else:
                raise ValidationError(f"{path}:{lineno}: unknown record kind {kind!r}")
        except (ValueError, TypeError) as exc:
            raise ValidationError(f"{path}:{lineno}: malformed record: {exc}") from exc
    manifest.validate()
    return manifest
