"""Host identification in audio and video, plus per-frame identity assignment.

The audio side fits a diagonal Gaussian to labeled host speaker embeddings and
thresholds squared Mahalanobis distance at an empirical tail quantile of the
training distances. The video side scores faces by maximum cosine similarity
against a vetted exemplar gallery, with the accept threshold tuned by
bootstrapped F1 maximization. Identity assignment classifies every face as
host or guest and clusters guests online by nearest-centroid matching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datamodel import BBox
from .errors import CalibrationError, ConfigurationError, ValidationError
from .ingest import Detection, DiarSegment, EmbeddingTable
from .numerics import format_float, linear_quantile

DEFAULT_TAIL = 0.01
DEFAULT_N_BOOT = 200
DEFAULT_VOTE_FRACTION = 0.5
DEFAULT_THETA_NEW = 0.45
DEFAULT_MAX_MERGE_GAP_S = 0.5
VARIANCE_FLOOR = 1e-6

HOST_ROLE = "host"


# ---------------------------------------------------------------------------
# Audio: Gaussian host-speech model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HostModel:
    """Diagonal Gaussian over unit speaker embeddings with a distance cutoff."""

    mean: np.ndarray
    var: np.ndarray
    threshold: float

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def squared_distance(self, vec: np.ndarray) -> float:
        """Variance-normalized squared distance of one embedding to the mean."""
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != self.mean.shape:
            raise ValueError(f"embedding dim {v.shape} does not match model dim {self.mean.shape}")
        delta = v - self.mean
        return float(np.sum(delta * delta / self.var))


def fit_host_gaussian(positives: Sequence[np.ndarray] | np.ndarray, tail: float = DEFAULT_TAIL) -> HostModel:
    """Fit the host-speech model on labeled positive embeddings.

    The mean and per-dimension population variance come straight from the
    positives (variance floored to keep degenerate dimensions finite). The
    decision threshold is the empirical (1 - tail) quantile of the positives'
    own squared distances, so at most ``ceil(tail * n)`` training samples fall
    outside their own model.
    """
    X = np.asarray(positives, dtype=np.float64)
    if X.ndim != 2:
        raise CalibrationError(f"expected a 2-D array of embeddings, got shape {X.shape}")
    if X.shape[0] < 10:
        raise CalibrationError(f"need at least 10 positive embeddings, got {X.shape[0]}")
    if not 0.0 < tail < 0.5:
        raise ConfigurationError(f"tail must be in (0, 0.5), got {tail}")
    mean = X.mean(axis=0)
    var = np.maximum(X.var(axis=0), VARIANCE_FLOOR)
    delta = X - mean
    distances = np.sum(delta * delta / var, axis=1)
    threshold = linear_quantile(distances, 1.0 - tail)
    return HostModel(mean=mean, var=var, threshold=threshold)


@dataclass(frozen=True)
class SpeakerVerdict:
    is_host: bool
    score: float  # squared Mahalanobis distance; lower is more host-like


def classify_speaker(
    model: HostModel, segment: DiarSegment, embeddings: EmbeddingTable | Mapping[str, np.ndarray]
) -> SpeakerVerdict:
    """Classify one diarized segment as host speech or not (boundary inclusive)."""
    if segment.embedding_id not in embeddings:
        raise KeyError(f"segment {segment.clip_id}@{segment.start_s}: unknown embedding {segment.embedding_id!r}")
    score = model.squared_distance(embeddings[segment.embedding_id])
    return SpeakerVerdict(is_host=score <= model.threshold, score=score)


def merge_positive_segments(
    decisions: Sequence[tuple[DiarSegment, bool]],
    max_merge_gap_s: float,
    fps: float,
    clip_start_frame: int = 0,
) -> list[tuple[int, int]]:
    """Fuse host-positive segments and express them as half-open frame intervals.

    Consecutive positives whose inter-gap is at most ``max_merge_gap_s`` merge
    into one interval; intervals are then aligned to the video timeline via
    ``clip_start_frame + floor/ceil(seconds * fps)``. Output is disjoint and
    sorted.
    """
    positives = sorted(
        (seg for seg, is_host in decisions if is_host), key=lambda s: (s.start_s, s.end_s)
    )
    merged_s: list[list[float]] = []
    for seg in positives:
        if merged_s and seg.start_s - merged_s[-1][1] <= max_merge_gap_s:
            merged_s[-1][1] = max(merged_s[-1][1], seg.end_s)
        else:
            merged_s.append([seg.start_s, seg.end_s])
    intervals: list[tuple[int, int]] = []
    for start_s, end_s in merged_s:
        start_f = clip_start_frame + math.floor(start_s * fps)
        end_f = clip_start_frame + math.ceil(end_s * fps)
        if intervals and start_f <= intervals[-1][1]:
            intervals[-1] = (intervals[-1][0], max(intervals[-1][1], end_f))
        else:
            intervals.append((start_f, end_f))
    return intervals


# ---------------------------------------------------------------------------
# Video: exemplar gallery and cosine-voting threshold
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaceGallery:
    """Vetted host face exemplars with a calibrated cosine accept threshold."""

    exemplars: np.ndarray  # (m, d), unit rows
    tau: float
    vote_fraction: float = DEFAULT_VOTE_FRACTION

    def __post_init__(self):
        if self.exemplars.ndim != 2 or self.exemplars.shape[0] < 1:
            raise ValidationError("gallery needs at least one exemplar")
        norms = np.linalg.norm(self.exemplars, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValidationError("gallery exemplars must be unit vectors")
        if not -1.0 < self.tau < 1.0:
            raise ValidationError(f"tau must lie in (-1, 1), got {self.tau}")
        if not 0.0 < self.vote_fraction <= 1.0:
            raise ValidationError(f"vote_fraction must lie in (0, 1], got {self.vote_fraction}")

    def score(self, vec: np.ndarray) -> float:
        """Maximum cosine similarity of a unit vector to any exemplar."""
        return float(np.max(self.exemplars @ np.asarray(vec, dtype=np.float64)))


def _best_f1_threshold(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """Threshold maximizing F1 of the rule ``score >= tau``.

    Candidates are the midpoints between adjacent distinct scores plus the
    lowest score itself (accept everything); ties resolve to the largest
    tau, favoring precision.
    """
    scores = np.concatenate([pos_scores, neg_scores])
    labels = np.concatenate([np.ones(len(pos_scores), bool), np.zeros(len(neg_scores), bool)])
    unique = np.unique(scores)
    candidates = [unique[0]]
    candidates.extend((unique[:-1] + unique[1:]) / 2.0)
    best_tau = candidates[0]
    best_f1 = -1.0
    n_pos = int(labels.sum())
    for tau in candidates:
        accepted = scores >= tau
        tp = int(np.sum(accepted & labels))
        fp = int(np.sum(accepted & ~labels))
        fn = n_pos - tp
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        if f1 > best_f1 or (f1 == best_f1 and tau > best_tau):
            best_f1 = f1
            best_tau = tau
    return float(best_tau)


def calibrate_face_threshold(
    positives: np.ndarray,
    negatives: np.ndarray,
    gallery_exemplars: np.ndarray,
    n_boot: int = DEFAULT_N_BOOT,
    vote_fraction: float = DEFAULT_VOTE_FRACTION,
    seed: int = 0,
) -> tuple[float, float]:
    """Tune the cosine accept threshold by bootstrapped F1 maximization.

    Trial 0 scores the labeled sets as given; each further trial resamples
    positives and negatives with replacement. The returned tau is the median
    over trials, so ``n_boot=1`` collapses to the single-shot F1-optimal
    threshold.
    """
    pos = np.asarray(positives, dtype=np.float64)
    neg = np.asarray(negatives, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[0] < 5:
        raise CalibrationError(f"need at least 5 labeled positives, got {0 if pos.ndim != 2 else pos.shape[0]}")
    if neg.ndim != 2 or neg.shape[0] < 5:
        raise CalibrationError(f"need at least 5 labeled negatives, got {0 if neg.ndim != 2 else neg.shape[0]}")
    if n_boot < 1:
        raise ConfigurationError(f"n_boot must be >= 1, got {n_boot}")
    exemplars = np.asarray(gallery_exemplars, dtype=np.float64)
    pos_scores = np.max(pos @ exemplars.T, axis=1)
    neg_scores = np.max(neg @ exemplars.T, axis=1)
    rng = np.random.default_rng(seed)
    taus = [_best_f1_threshold(pos_scores, neg_scores)]
    for _ in range(n_boot - 1):
        p = pos_scores[rng.integers(0, len(pos_scores), len(pos_scores))]
        n = neg_scores[rng.integers(0, len(neg_scores), len(neg_scores))]
        taus.append(_best_f1_threshold(p, n))
    tau = float(np.median(taus))
    # keep tau strictly inside the open cosine interval required by FaceGallery
    tau = min(max(tau, math.nextafter(-1.0, 0.0)), math.nextafter(1.0, 0.0))
    return tau, vote_fraction


# ---------------------------------------------------------------------------
# Per-frame identity assignment with online guest clustering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Assignment:
    track_id: int
    bbox: BBox
    role: str  # "host" or "guest_<index>"


@dataclass
class IdentityTrack:
    clip_id: str
    assignments: dict[int, tuple[Assignment, ...]] = field(default_factory=dict)
    unscored: int = 0  # face detections lacking an embedding, skipped

    def frames_with_role(self, role_prefix: str) -> set[int]:
        return {
            frame
            for frame, entries in self.assignments.items()
            if any(a.role.startswith(role_prefix) for a in entries)
        }


class _GuestClusters:
    """Online nearest-centroid clustering over unit face embeddings."""

    def __init__(self, theta_new: float):
        self.theta_new = theta_new
        self.sums: list[np.ndarray] = []

    def assign(self, vec: np.ndarray) -> int:
        best_index = -1
        best_cos = -2.0
        for index, total in enumerate(self.sums):
            centroid = total / np.linalg.norm(total)
            cos = float(centroid @ vec)
            if cos > best_cos:
                best_cos = cos
                best_index = index
        if best_index >= 0 and best_cos >= self.theta_new:
            self.sums[best_index] = self.sums[best_index] + vec
            return best_index
        self.sums.append(vec.copy())
        return len(self.sums) - 1


def assign_identities(
    clip_id: str,
    detections: Sequence[Detection],
    gallery: FaceGallery,
    embeddings: Mapping[tuple[int, int], np.ndarray],
    theta_new: float = DEFAULT_THETA_NEW,
    vote_mode: str = "track",
) -> IdentityTrack:
    """Label every face detection of one clip as host or an indexed guest.

    With ``vote_mode="track"`` (default) a face track is host when at least
    ``gallery.vote_fraction`` of its scored frames clear tau; with
    ``vote_mode="frame"`` each frame votes alone, which keeps guest labeling
    stable under stream truncation. At most one face per frame is host: the
    highest-scoring candidate wins, ties broken by larger box area, then
    lower track id. Remaining faces join the guest cluster whose running-mean
    centroid is most cosine-similar (at least ``theta_new``), or open a new
    cluster; guest indices follow order of first appearance.
    """
    if vote_mode not in ("track", "frame"):
        raise ConfigurationError(f"vote_mode must be 'track' or 'frame', got {vote_mode!r}")
    faces = [d for d in detections if d.kind == "face"]
    scored: dict[tuple[int, int], float] = {}
    unscored = 0
    for det in faces:
        key = (det.frame_index, det.track_id)
        if key in embeddings:
            scored[key] = gallery.score(embeddings[key])
        else:
            unscored += 1

    host_tracks: set[int] = set()
    if vote_mode == "track":
        votes: dict[int, list[bool]] = {}
        for (frame, track), score in scored.items():
            votes.setdefault(track, []).append(score >= gallery.tau)
        for track, track_votes in votes.items():
            if sum(track_votes) / len(track_votes) >= gallery.vote_fraction:
                host_tracks.add(track)

    by_frame: dict[int, list[Detection]] = {}
    for det in faces:
        by_frame.setdefault(det.frame_index, []).append(det)

    clusters = _GuestClusters(theta_new)
    guest_index_of_cluster: dict[int, int] = {}
    track = IdentityTrack(clip_id=clip_id, unscored=unscored)
    for frame in sorted(by_frame):
        entries: list[tuple[Detection, float]] = []
        for det in by_frame[frame]:
            key = (frame, det.track_id)
            if key not in scored:
                continue
            entries.append((det, scored[key]))
        if not entries:
            track.assignments[frame] = ()
            continue
        if vote_mode == "track":
            candidates = [(d, s) for d, s in entries if d.track_id in host_tracks]
        else:
            candidates = [(d, s) for d, s in entries if s >= gallery.tau]
        host_det: Detection | None = None
        if candidates:
            host_det = max(
                candidates, key=lambda e: (e[1], e[0].bbox.area, -e[0].track_id)
            )[0]
        assignments: list[Assignment] = []
        for det, _score in sorted(entries, key=lambda e: e[0].track_id):
            if host_det is not None and det is host_det:
                assignments.append(Assignment(det.track_id, det.bbox, HOST_ROLE))
                continue
            cluster = clusters.assign(embeddings[(frame, det.track_id)])
            if cluster not in guest_index_of_cluster:
                guest_index_of_cluster[cluster] = len(guest_index_of_cluster)
            assignments.append(
                Assignment(det.track_id, det.bbox, f"guest_{guest_index_of_cluster[cluster]}")
            )
        track.assignments[frame] = tuple(assignments)
    return track


# ---------------------------------------------------------------------------
# Pseudo-label validation harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class F1Report:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def pseudo_label_report(predicted: Mapping[str, bool], reference: Mapping[str, bool]) -> F1Report:
    """Precision/recall/F1 of predictions against externally supplied labels.

    Only keys present in both mappings are scored.
    """
    keys = set(predicted) & set(reference)
    tp = sum(1 for k in keys if predicted[k] and reference[k])
    fp = sum(1 for k in keys if predicted[k] and not reference[k])
    fn = sum(1 for k in keys if not predicted[k] and reference[k])
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return F1Report(precision, recall, f1, tp, fp, fn)


# ---------------------------------------------------------------------------
# Versioned text artifacts
# ---------------------------------------------------------------------------

_HOST_MODEL_MAGIC = "#twoshot-host-model v1"
_GALLERY_MAGIC = "#twoshot-face-gallery v1"
_IDENTITY_MAGIC = "#twoshot-identity v1"


def save_identity_track(track: IdentityTrack, path: str | Path) -> None:
    lines = [_IDENTITY_MAGIC, f"clip {track.clip_id}", f"unscored {track.unscored}"]
    for frame in sorted(track.assignments):
        entries = track.assignments[frame]
        if not entries:
            lines.append(f"empty {frame}")
            continue
        for a in sorted(entries, key=lambda a: a.track_id):
            lines.append(
                " ".join(
                    [
                        str(frame),
                        str(a.track_id),
                        format_float(a.bbox.x),
                        format_float(a.bbox.y),
                        format_float(a.bbox.w),
                        format_float(a.bbox.h),
                        a.role,
                    ]
                )
            )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_identity_track(path: str | Path) -> IdentityTrack:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _IDENTITY_MAGIC:
        raise ValidationError(f"{path}: not an identity track artifact")
    clip_id = lines[1].split(" ", 1)[1]
    unscored = int(lines[2].split(" ", 1)[1])
    track = IdentityTrack(clip_id=clip_id, unscored=unscored)
    rows: dict[int, list[Assignment]] = {}
    for ln in lines[3:]:
        if not ln.strip():
            continue
        fields = ln.split()
        if fields[0] == "empty":
            rows.setdefault(int(fields[1]), [])
            continue
        frame, track_id, x, y, w, h, role = fields
        rows.setdefault(int(frame), []).append(
            Assignment(int(track_id), BBox(float(x), float(y), float(w), float(h)), role)
        )
    track.assignments = {frame: tuple(entries) for frame, entries in rows.items()}
    return track


def save_host_model(model: HostModel, path: str | Path) -> None:
    lines = [
        _HOST_MODEL_MAGIC,
        f"dim {model.dim}",
        f"threshold {format_float(model.threshold)}",
        "mean " + " ".join(format_float(v) for v in model.mean),
        "var " + " ".join(format_float(v) for v in model.var),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_host_model(path: str | Path) -> HostModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _HOST_MODEL_MAGIC:
        raise ValidationError(f"{path}: not a host model artifact")
    fields = {ln.split(" ", 1)[0]: ln.split(" ", 1)[1] for ln in lines[1:] if ln.strip()}
    dim = int(fields["dim"])
    mean = np.array([float(v) for v in fields["mean"].split()], dtype=np.float64)
    var = np.array([float(v) for v in fields["var"].split()], dtype=np.float64)
    if mean.shape[0] != dim or var.shape[0] != dim:
        raise ValidationError(f"{path}: vector length disagrees with declared dim {dim}")
    return HostModel(mean=mean, var=var, threshold=float(fields["threshold"]))


def save_face_gallery(gallery: FaceGallery, path: str | Path) -> None:
    lines = [
        _GALLERY_MAGIC,
        f"dim {gallery.exemplars.shape[1]}",
        f"tau {format_float(gallery.tau)}",
        f"vote_fraction {format_float(gallery.vote_fraction)}",
    ]
    for row in gallery.exemplars:
        lines.append("exemplar " + " ".join(format_float(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_face_gallery(path: str | Path) -> FaceGallery:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _GALLERY_MAGIC:
        raise ValidationError(f"{path}: not a face gallery artifact")
    tau = vote_fraction = None
    dim = None
    rows = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, rest = ln.split(" ", 1)
        if key == "dim":
            dim = int(rest)
        elif key == "tau":
            tau = float(rest)
        elif key == "vote_fraction":
            vote_fraction = float(rest)
        elif key == "exemplar":
            rows.append([float(v) for v in rest.split()])
        else:
            raise ValidationError(f"{path}: unknown gallery field {key!r}")
    exemplars = np.array(rows, dtype=np.float64)
    if dim is None or tau is None or vote_fraction is None or exemplars.ndim != 2:
        raise ValidationError(f"{path}: incomplete gallery artifact")
    if exemplars.shape[1] != dim:
        raise ValidationError(f"{path}: exemplar length disagrees with declared dim {dim}")
    return FaceGallery(exemplars=exemplars, tau=tau, vote_fraction=vote_fraction)
