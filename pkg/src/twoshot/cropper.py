"""Paired-clip derivation: coverage filtering, crop geometry, render planning.

An interaction pair is a fixed 64-frame guest-context window immediately
followed by an 81-frame host-response window. Candidates are filtered on
detection coverage and face-area balance, each role's face boxes are reduced
to a single dominant trajectory, cleaned with an interquartile-range filter,
and enclosed in one square crop window per role. Guest frames with no visible
guest are recorded as blackout frames in the render plan; no footage is ever
fabricated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from .datamodel import BBox, EpisodeMeta
from .errors import ValidationError
from .hostid import HOST_ROLE, IdentityTrack
from .numerics import format_float, linear_quantile

GUEST_FRAMES = 64
HOST_FRAMES = 81

DEFAULT_MIN_GUEST_COVERAGE = 0.70
DEFAULT_MIN_HOST_COVERAGE = 0.85
DEFAULT_MAX_AREA_RATIO = 10.0
DEFAULT_EXPAND_FACTOR = 1.3
DEFAULT_DOWN_SHIFT = 0.2
DEFAULT_IQR_K = 1.5

RENDER_FPS = 25
RENDER_VIDEO_CODEC = "h264"
RENDER_CRF = 18
RENDER_AUDIO_RATE_HZ = 16000
RENDER_AUDIO_CHANNELS = 1


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; 0 when disjoint."""
    ix = max(a.x, b.x)
    iy = max(a.y, b.y)
    ix2 = min(a.x + a.w, b.x + b.w)
    iy2 = min(a.y + a.h, b.y + b.h)
    iw = max(0.0, ix2 - ix)
    ih = max(0.0, iy2 - iy)
    inter = iw * ih
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def _box_sort_key(box: BBox) -> tuple:
    # deterministic preference: larger area first, then position
    return (-box.area, box.x, box.y, box.w, box.h)


def select_dominant_trajectory(
    boxes_by_frame: Mapping[int, Sequence[BBox]],
) -> dict[int, BBox]:
    """Keep one face box per frame by following the largest frame-to-frame IoU.

    The first detected frame picks its largest box; every later frame with
    multiple boxes keeps the one overlapping most with the previously selected
    box. Empty frames stay empty and the anchor carries across them.
    """
    result: dict[int, BBox] = {}
    previous: BBox | None = None
    for frame in sorted(boxes_by_frame):
        candidates = list(boxes_by_frame[frame])
        if not candidates:
            continue
        if previous is None:
            chosen = min(candidates, key=_box_sort_key)
        else:
            prev = previous
            chosen = min(candidates, key=lambda b: (-iou(b, prev),) + _box_sort_key(b))
        result[frame] = chosen
        previous = chosen
    return result


def iqr_inliers(boxes: Sequence[BBox], k: float = DEFAULT_IQR_K) -> list[BBox]:
    """Drop boxes whose center or size falls outside the Tukey fences.

    A box survives only if center-x, center-y, width, and height all lie in
    [Q1 - k*IQR, Q3 + k*IQR] of their respective series, with quartiles by
    linear interpolation. Fewer than 4 boxes pass through unchanged because
    the quartiles would be unstable.
    """
    boxes = list(boxes)
    if len(boxes) < 4:
        warnings.warn(
            f"iqr_inliers: only {len(boxes)} boxes, quartiles unstable; passing all through",
            stacklevel=2,
        )
        return boxes
    series = {
        "cx": [b.cx for b in boxes],
        "cy": [b.cy for b in boxes],
        "w": [b.w for b in boxes],
        "h": [b.h for b in boxes],
    }
    fences = {}
    for name, values in series.items():
        q1 = linear_quantile(values, 0.25)
        q3 = linear_quantile(values, 0.75)
        spread = q3 - q1
        fences[name] = (q1 - k * spread, q3 + k * spread)
    inliers = []
    for box in boxes:
        values = {"cx": box.cx, "cy": box.cy, "w": box.w, "h": box.h}
        if all(fences[n][0] <= values[n] <= fences[n][1] for n in series):
            inliers.append(box)
    return inliers


@dataclass(frozen=True)
class CropWindow:
    """Square crop window, top-left corner plus side length, in pixels."""

    x: float
    y: float
    side: float

    def __post_init__(self):
        if self.side <= 0:
            raise ValidationError(f"crop side must be positive, got {self.side}")

    def contains_x_extent(self, x0: float, x1: float) -> bool:
        return self.x <= x0 and x1 <= self.x + self.side


def build_crop_window(
    boxes: Sequence[BBox],
    frame_size: tuple[int, int],
    expand_factor: float = DEFAULT_EXPAND_FACTOR,
    down_shift: float = DEFAULT_DOWN_SHIFT,
) -> CropWindow:
    """Construct the canonical square window enclosing all inlier face boxes.

    The enclosing box is scaled by ``expand_factor`` about its center, shifted
    down by ``down_shift`` of the scaled height to retain upper-body motion,
    then squared to the larger scaled side. The window is translated back into
    frame bounds; if the side exceeds the frame's smaller dimension it shrinks
    to that dimension about its center before clamping.
    """
    if not boxes:
        raise ValidationError("build_crop_window requires at least one box")
    frame_w, frame_h = frame_size
    x0 = min(b.x for b in boxes)
    y0 = min(b.y for b in boxes)
    x1 = max(b.x + b.w for b in boxes)
    y1 = max(b.y + b.h for b in boxes)
    cx = (x0 + x1) / 2
    cy = (y0 + y1) / 2
    scaled_w = (x1 - x0) * expand_factor
    scaled_h = (y1 - y0) * expand_factor
    cy = cy + down_shift * scaled_h
    side = max(scaled_w, scaled_h)
    if side > min(frame_w, frame_h):
        side = float(min(frame_w, frame_h))
    x = cx - side / 2
    y = cy - side / 2
    x = min(max(x, 0.0), frame_w - side)
    y = min(max(y, 0.0), frame_h - side)
    return CropWindow(x=x, y=y, side=side)


# ---------------------------------------------------------------------------
# Pair filtering and derivation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairFilterDecision:
    accepted: bool
    reasons: tuple[str, ...]  # all failed criteria, machine-readable
    guest_coverage: float
    host_coverage: float
    area_ratio: float | None  # None when either role has no detections


def filter_pair(
    track: IdentityTrack,
    t1: int,
    clip_start: int,
    clip_end: int,
    min_guest_coverage: float = DEFAULT_MIN_GUEST_COVERAGE,
    min_host_coverage: float = DEFAULT_MIN_HOST_COVERAGE,
    max_area_ratio: float = DEFAULT_MAX_AREA_RATIO,
) -> PairFilterDecision:
    """Accept or reject a candidate boundary frame on coverage and area balance.

    Guest coverage is the fraction of the 64 frames before ``t1`` holding a
    guest detection; host coverage the fraction of the 81 frames from ``t1``
    holding the host. The pair is rejected when either coverage misses its
    floor or the host-to-guest mean face-area ratio exceeds the cap; every
    failed criterion is listed.
    """
    t0 = t1 - GUEST_FRAMES
    t2 = t1 + HOST_FRAMES
    if t0 < clip_start:
        raise ValidationError(
            f"guest window [{t0},{t1}) starts before clip start {clip_start}"
        )
    if t2 > clip_end:
        raise ValidationError(f"host window [{t1},{t2}) ends after clip end {clip_end}")
    guest_areas: list[float] = []
    host_areas: list[float] = []
    guest_frames = 0
    host_frames = 0
    for frame in range(t0, t1):
        entries = track.assignments.get(frame, ())
        guest_boxes = [a.bbox for a in entries if a.role != HOST_ROLE]
        if guest_boxes:
            guest_frames += 1
            guest_areas.extend(b.area for b in guest_boxes)
    for frame in range(t1, t2):
        entries = track.assignments.get(frame, ())
        host_boxes = [a.bbox for a in entries if a.role == HOST_ROLE]
        if host_boxes:
            host_frames += 1
            host_areas.extend(b.area for b in host_boxes)
    guest_coverage = guest_frames / GUEST_FRAMES
    host_coverage = host_frames / HOST_FRAMES
    area_ratio = None
    if guest_areas and host_areas:
        area_ratio = (sum(host_areas) / len(host_areas)) / (sum(guest_areas) / len(guest_areas))
    reasons = []
    if guest_coverage < min_guest_coverage:
        reasons.append("guest-coverage")
    if host_coverage < min_host_coverage:
        reasons.append("host-coverage")
    if area_ratio is not None and area_ratio > max_area_ratio:
        reasons.append("area-ratio")
    return PairFilterDecision(
        accepted=not reasons,
        reasons=tuple(reasons),
        guest_coverage=guest_coverage,
        host_coverage=host_coverage,
        area_ratio=area_ratio,
    )


@dataclass(frozen=True)
class RenderOutput:
    role: str
    filename: str
    start_frame: int
    end_frame: int
    crop: CropWindow
    blackout: tuple[int, ...]  # output-relative frame indices with no guest


@dataclass(frozen=True)
class RenderPlan:
    pair_id: str
    source_uri: str
    fps: int
    video_codec: str
    crf: int
    audio_rate_hz: int
    audio_channels: int
    outputs: tuple[RenderOutput, ...]


@dataclass(frozen=True)
class InteractionPair:
    pair_id: str
    clip_id: str
    guest_window: tuple[int, int]  # [t0, t1)
    host_window: tuple[int, int]  # [t1, t2)
    guest_crop: CropWindow
    host_crop: CropWindow
    guest_coverage: float
    host_coverage: float
    gap_mask: tuple[bool, ...]  # True where the guest is absent, length 64
    render_plan: RenderPlan | None = None

    def __post_init__(self):
        if self.guest_window[1] != self.host_window[0]:
            raise ValidationError("guest and host windows must be contiguous")
        if len(self.gap_mask) != GUEST_FRAMES:
            raise ValidationError(f"gap_mask must cover {GUEST_FRAMES} guest frames")


def pair_id_for(clip_id: str, t1: int) -> str:
    return f"{clip_id}-p{t1}"


@dataclass
class PairRejection:
    clip_id: str
    t1: int
    reasons: tuple[str, ...]


def derive_pair(
    track: IdentityTrack,
    t1: int,
    clip_start: int,
    clip_end: int,
    episode: EpisodeMeta,
    min_guest_coverage: float = DEFAULT_MIN_GUEST_COVERAGE,
    min_host_coverage: float = DEFAULT_MIN_HOST_COVERAGE,
    max_area_ratio: float = DEFAULT_MAX_AREA_RATIO,
    area_source: str = "face",
    expand_factor: float = DEFAULT_EXPAND_FACTOR,
    down_shift: float = DEFAULT_DOWN_SHIFT,
    iqr_k: float = DEFAULT_IQR_K,
) -> InteractionPair | PairRejection:
    """Build one interaction pair at boundary ``t1``, or report why it fails.

    ``area_source`` picks what the host-to-guest area cap compares: raw face
    boxes before cropping (default) or the derived crop windows.
    """
    decision = filter_pair(
        track,
        t1,
        clip_start,
        clip_end,
        min_guest_coverage=min_guest_coverage,
        min_host_coverage=min_host_coverage,
        max_area_ratio=max_area_ratio if area_source == "face" else float("inf"),
    )
    if not decision.accepted:
        return PairRejection(clip_id=track.clip_id, t1=t1, reasons=decision.reasons)
    t0 = t1 - GUEST_FRAMES
    t2 = t1 + HOST_FRAMES
    guest_boxes = {
        f: [a.bbox for a in track.assignments.get(f, ()) if a.role != HOST_ROLE]
        for f in range(t0, t1)
    }
    host_boxes = {
        f: [a.bbox for a in track.assignments.get(f, ()) if a.role == HOST_ROLE]
        for f in range(t1, t2)
    }
    frame_size = (episode.width, episode.height)
    guest_traj = select_dominant_trajectory(guest_boxes)
    host_traj = select_dominant_trajectory(host_boxes)
    guest_inliers = iqr_inliers(list(guest_traj.values()), k=iqr_k)
    host_inliers = iqr_inliers(list(host_traj.values()), k=iqr_k)
    guest_crop = build_crop_window(guest_inliers, frame_size, expand_factor, down_shift)
    host_crop = build_crop_window(host_inliers, frame_size, expand_factor, down_shift)
    if area_source == "crop":
        crop_ratio = (host_crop.side * host_crop.side) / (guest_crop.side * guest_crop.side)
        if crop_ratio > max_area_ratio:
            return PairRejection(clip_id=track.clip_id, t1=t1, reasons=("area-ratio",))
    gap_mask = tuple(not guest_boxes[f] for f in range(t0, t1))
    pair = InteractionPair(
        pair_id=pair_id_for(track.clip_id, t1),
        clip_id=track.clip_id,
        guest_window=(t0, t1),
        host_window=(t1, t2),
        guest_crop=guest_crop,
        host_crop=host_crop,
        guest_coverage=decision.guest_coverage,
        host_coverage=decision.host_coverage,
        gap_mask=gap_mask,
    )
    return replace(pair, render_plan=plan_render(pair, episode))


def plan_render(pair: InteractionPair, episode: EpisodeMeta) -> RenderPlan:
    """Emit the deterministic encode plan for one accepted pair.

    Two outputs, guest context then host response, share fixed encode
    parameters (25 fps, H.264 at CRF 18, 16 kHz mono audio). Guest frames with
    no detection become blackout frames rather than synthesized content.
    """
    blackout = tuple(i for i, absent in enumerate(pair.gap_mask) if absent)
    guest = RenderOutput(
        role="guest",
        filename=f"{pair.pair_id}_guest.mp4",
        start_frame=pair.guest_window[0],
        end_frame=pair.guest_window[1],
        crop=pair.guest_crop,
        blackout=blackout,
    )
    host = RenderOutput(
        role="host",
        filename=f"{pair.pair_id}_host.mp4",
        start_frame=pair.host_window[0],
        end_frame=pair.host_window[1],
        crop=pair.host_crop,
        blackout=(),
    )
    return RenderPlan(
        pair_id=pair.pair_id,
        source_uri=episode.source_uri,
        fps=RENDER_FPS,
        video_codec=RENDER_VIDEO_CODEC,
        crf=RENDER_CRF,
        audio_rate_hz=RENDER_AUDIO_RATE_HZ,
        audio_channels=RENDER_AUDIO_CHANNELS,
        outputs=(guest, host),
    )


# ---------------------------------------------------------------------------
# Plan serialization and encoder command emission
# ---------------------------------------------------------------------------

_PLAN_MAGIC = "#twoshot-render-plan v1"
_PAIR_MAGIC = "#twoshot-pair v1"


def _crop_fields(crop: CropWindow) -> list[str]:
    return [format_float(crop.x), format_float(crop.y), format_float(crop.side)]


def save_render_plan(plan: RenderPlan, path: str | Path) -> None:
    lines = [
        _PLAN_MAGIC,
        f"pair {plan.pair_id}",
        f"source {plan.source_uri}",
        f"fps {plan.fps}",
        f"video_codec {plan.video_codec}",
        f"crf {plan.crf}",
        f"audio_rate_hz {plan.audio_rate_hz}",
        f"audio_channels {plan.audio_channels}",
    ]
    for out in plan.outputs:
        blackout = ",".join(str(i) for i in out.blackout) or "-"
        lines.append(
            " ".join(
                [
                    "output",
                    out.role,
                    out.filename,
                    str(out.start_frame),
                    str(out.end_frame),
                    *_crop_fields(out.crop),
                    blackout,
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_render_plan(path: str | Path) -> RenderPlan:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _PLAN_MAGIC:
        raise ValidationError(f"{path}: not a render plan artifact")
    fields: dict[str, str] = {}
    outputs: list[RenderOutput] = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, rest = ln.split(" ", 1)
        if key == "output":
            role, filename, start, end, x, y, side, blackout = rest.split(" ")
            black = () if blackout == "-" else tuple(int(i) for i in blackout.split(","))
            outputs.append(
                RenderOutput(
                    role,
                    filename,
                    int(start),
                    int(end),
                    CropWindow(float(x), float(y), float(side)),
                    black,
                )
            )
        else:
            fields[key] = rest
    return RenderPlan(
        pair_id=fields["pair"],
        source_uri=fields["source"],
        fps=int(fields["fps"]),
        video_codec=fields["video_codec"],
        crf=int(fields["crf"]),
        audio_rate_hz=int(fields["audio_rate_hz"]),
        audio_channels=int(fields["audio_channels"]),
        outputs=tuple(outputs),
    )


def save_pair(pair: InteractionPair, path: str | Path) -> None:
    lines = [
        _PAIR_MAGIC,
        f"pair_id {pair.pair_id}",
        f"clip_id {pair.clip_id}",
        f"guest_window {pair.guest_window[0]} {pair.guest_window[1]}",
        f"host_window {pair.host_window[0]} {pair.host_window[1]}",
        "guest_crop " + " ".join(_crop_fields(pair.guest_crop)),
        "host_crop " + " ".join(_crop_fields(pair.host_crop)),
        f"guest_coverage {format_float(pair.guest_coverage)}",
        f"host_coverage {format_float(pair.host_coverage)}",
        "gap_mask " + "".join("1" if absent else "0" for absent in pair.gap_mask),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_pair(path: str | Path) -> InteractionPair:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _PAIR_MAGIC:
        raise ValidationError(f"{path}: not a pair artifact")
    fields = {ln.split(" ", 1)[0]: ln.split(" ", 1)[1] for ln in lines[1:] if ln.strip()}
    gw = tuple(int(v) for v in fields["guest_window"].split())
    hw = tuple(int(v) for v in fields["host_window"].split())
    gc = [float(v) for v in fields["guest_crop"].split()]
    hc = [float(v) for v in fields["host_crop"].split()]
    return InteractionPair(
        pair_id=fields["pair_id"],
        clip_id=fields["clip_id"],
        guest_window=(gw[0], gw[1]),
        host_window=(hw[0], hw[1]),
        guest_crop=CropWindow(*gc),
        host_crop=CropWindow(*hc),
        guest_coverage=float(fields["guest_coverage"]),
        host_coverage=float(fields["host_coverage"]),
        gap_mask=tuple(ch == "1" for ch in fields["gap_mask"]),
    )


def _blackout_runs(frames: Sequence[int]) -> list[tuple[int, int]]:
    runs: list[list[int]] = []
    for f in frames:
        if runs and f == runs[-1][1] + 1:
            runs[-1][1] = f
        else:
            runs.append([f, f])
    return [(a, b) for a, b in runs]


def render_command(plan: RenderPlan, output: RenderOutput, media_root: str | Path = ".") -> str:
    """One auditable encoder command line for a plan output.

    Template: frame-accurate trim, integer-pixel crop, blackout runs drawn as
    full-frame black boxes, then the plan's fixed codec and audio parameters.
    """
    src = str(Path(media_root) / plan.source_uri)
    crop = output.crop
    x, y, side = (int(round(v)) for v in (crop.x, crop.y, crop.side))
    filters = [
        f"trim=start_frame={output.start_frame}:end_frame={output.end_frame}",
        "setpts=PTS-STARTPTS",
        f"crop={side}:{side}:{x}:{y}",
        f"fps={plan.fps}",
    ]
    for a, b in _blackout_runs(output.blackout):
        filters.append(f"drawbox=c=black:t=fill:enable='between(n,{a},{b})'")
    start_s = output.start_frame / plan.fps
    end_s = output.end_frame / plan.fps
    audio = f"atrim=start={start_s}:end={end_s},asetpts=PTS-STARTPTS"
    return (
        f"ffmpeg -y -i {src} -vf \"{','.join(filters)}\" -af \"{audio}\" "
        f"-c:v libx264 -crf {plan.crf} -ar {plan.audio_rate_hz} -ac {plan.audio_channels} "
        f"{output.filename}"
    )


def render_commands(plan: RenderPlan, media_root: str | Path = ".") -> list[str]:
    return [render_command(plan, out, media_root) for out in plan.outputs]


def run_render_commands(
    commands: Sequence[str], workers: int = 1, runner=None
) -> list[int]:
    """Optionally execute encoder command lines; returns per-command exit codes.

    The artifact's contract is the plan itself; running it through an
    external encoder is a convenience. ``runner`` defaults to a shell
    invocation and is injectable for testing and dry runs.
    """
    import shlex
    import subprocess
    from concurrent.futures import ThreadPoolExecutor

    def default_runner(command: str) -> int:
        return subprocess.run(shlex.split(command), check=False).returncode

    run = runner or default_runner
    if workers <= 1:
        return [run(command) for command in commands]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, commands))
