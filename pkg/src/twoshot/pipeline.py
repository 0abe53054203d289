"""Stage orchestration: files in, files out, each stage idempotent.

A stage's outputs are written through temp-and-rename, its input files and
relevant config are content-hashed so an unchanged rerun is a no-op, and every
run appends one record to the journal. Rejections at every stage land in a
machine-readable ledger next to the stage outputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import cropper, hostid, ingest, segmenter
from .annosvc.store import LabelStore, TaskCandidate
from .config import PipelineConfig
from .datamodel import (
    ClipRecord,
    EpisodeMeta,
    Manifest,
    PairRef,
    assign_split,
    clip_id_for,
    compute_stats,
    load_manifest,
    save_manifest,
)
from .errors import CalibrationError, ConfigurationError, PrerequisiteError, ValidationError
from .ingest import DiarSegment, EmbeddingTable, face_embedding_id

log = logging.getLogger(__name__)

VERDICT_VALUES = ("positive", "negative", "unsure")


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def write_atomic(path: Path, writer: Callable[[Path], None]) -> None:
    """Run a writer against a temp file, then rename over the target."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    tmp.replace(path)


def write_text_atomic(path: Path, text: str) -> None:
    write_atomic(path, lambda p: p.write_text(text, encoding="utf-8"))


def read_label_file(path: Path) -> dict[str, str]:
    """Label file: ``embedding_id verdict`` per line, later lines supersede."""
    labels: dict[str, str] = {}
    text = path.read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2 or fields[1] not in VERDICT_VALUES:
            raise ValidationError(f"{path}:{lineno}: expected '<id> <verdict>', got {line!r}")
        labels[fields[0]] = fields[1]
    return labels


def _labels_for_stage(cfg: PipelineConfig, stage: str) -> dict[str, str]:
    """Labels from the annotation store when present, else the labels file.

    Store exports identify embeddings through each task's context, so both
    sources reduce to the same ``embedding_id -> verdict`` mapping.
    """
    if cfg.labels.store_dir:
        store = LabelStore(cfg.labels.store_dir)
        bundle = store.export(stage)
        if bundle.positives or bundle.negatives:
            labels = {}
            for task in bundle.positives:
                labels[task.context["embedding_id"]] = "positive"
            for task in bundle.negatives:
                labels[task.context["embedding_id"]] = "negative"
            return labels
    file_key = {"host_speech": cfg.labels.host_speech, "host_face": cfg.labels.host_face}[stage]
    if not file_key:
        raise ConfigurationError(
            f"no labels available for stage {stage!r}: set labels.{stage} or labels.store_dir"
        )
    return read_label_file(Path(file_key))


def _labeled_vectors(
    labels: dict[str, str], table: EmbeddingTable, what: str
) -> tuple[list[str], np.ndarray, list[str], np.ndarray]:
    """Split labels into (ids, vectors) per class, sorted by embedding id."""
    pos_ids = sorted(k for k, v in labels.items() if v == "positive")
    neg_ids = sorted(k for k, v in labels.items() if v == "negative")
    missing = [k for k in pos_ids + neg_ids if k not in table]
    if missing:
        raise ValidationError(f"{what}: labeled embeddings missing from table: {missing[:5]}")
    pos = np.array([table[k] for k in pos_ids]) if pos_ids else np.empty((0, table.dim))
    neg = np.array([table[k] for k in neg_ids]) if neg_ids else np.empty((0, table.dim))
    return pos_ids, pos, neg_ids, neg


def host_intervals_for_clip(
    model: hostid.HostModel,
    segments: list[DiarSegment],
    embeddings: EmbeddingTable,
    episode: EpisodeMeta,
    clip: ClipRecord,
    max_merge_gap_s: float,
) -> list[tuple[int, int]]:
    """Classify a clip's diarized segments and merge host speech into frame intervals."""
    decisions = []
    for seg in segments:
        verdict = hostid.classify_speaker(model, seg, embeddings)
        decisions.append((seg, verdict.is_host))
    return hostid.merge_positive_segments(
        decisions, max_merge_gap_s, episode.fps, clip_start_frame=clip.start_frame
    )


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_ingest(cfg: PipelineConfig) -> dict:
    out = cfg.out_path("ingest")
    reports = {}
    episodes = ingest.parse_episodes(Path(cfg.inputs.episodes))
    write_atomic(out / "episodes.tsv", lambda p: ingest.write_episodes(episodes, p))
    detections = 0
    for tracking_path in cfg.inputs.tracking:
        track_log, report = ingest.parse_tracking_log(Path(tracking_path))
        write_atomic(
            out / f"tracking-{track_log.episode_id}.log",
            lambda p, tl=track_log: ingest.write_tracking_log(tl, p),
        )
        reports[str(tracking_path)] = report.__dict__
        detections += report.parsed
    segments, diar_report = ingest.parse_diarization(Path(cfg.inputs.diarization))
    write_atomic(out / "diarization.tsv", lambda p: ingest.write_diarization(segments, p))
    reports[str(cfg.inputs.diarization)] = diar_report.__dict__
    speaker_table, spk_report = ingest.load_embeddings(Path(cfg.inputs.speaker_embeddings))
    write_atomic(
        out / "speaker_embeddings.tsv", lambda p: ingest.write_embeddings(speaker_table, p)
    )
    reports[str(cfg.inputs.speaker_embeddings)] = spk_report.__dict__
    face_table, face_report = ingest.load_embeddings(Path(cfg.inputs.face_embeddings))
    write_atomic(out / "face_embeddings.tsv", lambda p: ingest.write_embeddings(face_table, p))
    reports[str(cfg.inputs.face_embeddings)] = face_report.__dict__
    write_text_atomic(out / "report.json", json.dumps(reports, indent=2, sort_keys=True) + "\n")
    return {
        "episodes": len(episodes),
        "detections": detections,
        "diar_segments": len(segments),
        "speaker_embeddings": len(speaker_table),
        "face_embeddings": len(face_table),
    }


def _split_key(cfg: PipelineConfig, clip_id: str, episode_id: str) -> str:
    return episode_id if cfg.split.by == "episode" else clip_id


def stage_segment(cfg: PipelineConfig) -> dict:
    out = cfg.out_path("segments")
    episodes = ingest.parse_episodes(cfg.out_path("ingest", "episodes.tsv"))
    by_id = {e.episode_id: e for e in episodes}
    clips: list[ClipRecord] = []
    sidecar_lines: list[str] = []
    hours_in = sum(e.duration_s for e in episodes) / 3600.0
    for episode in sorted(episodes, key=lambda e: e.episode_id):
        log_path = cfg.out_path("ingest", f"tracking-{episode.episode_id}.log")
        if not log_path.exists():
            continue
        track_log, _ = ingest.parse_tracking_log(log_path)
        segs = segmenter.extract_two_person_segments(
            track_log,
            max_gap=cfg.segmenter.max_gap,
            min_len=cfg.segmenter.min_len,
            min_confidence=cfg.segmenter.min_confidence,
        )
        for seg in segs:
            clip_id = clip_id_for(episode.episode_id, seg.start_frame, seg.end_frame)
            ratios = tuple(cfg.split.ratios)
            split = assign_split(_split_key(cfg, clip_id, episode.episode_id), ratios)
            clips.append(
                ClipRecord(
                    clip_id=clip_id,
                    episode_id=episode.episode_id,
                    start_frame=seg.start_frame,
                    end_frame=seg.end_frame,
                    split=split,
                    duration_s=seg.n_frames / episode.fps,
                )
            )
            gaps = ",".join(str(g) for g in seg.gap_frames) or "-"
            sidecar_lines.append(
                f"{clip_id} {seg.track_ids[0]} {seg.track_ids[1]} {len(seg.gap_frames)} {gaps}"
            )
    manifest = Manifest(episodes=list(episodes), clips=clips)
    write_atomic(out / "manifest.tsv", lambda p: save_manifest(manifest, p))
    write_text_atomic(out / "segments.tsv", "\n".join(sidecar_lines) + ("\n" if sidecar_lines else ""))
    hours_out = sum(c.duration_s for c in clips) / 3600.0
    return {
        "episodes": len(episodes),
        "clips": len(clips),
        "hours_in": hours_in,
        "hours_out": hours_out,
        "reduction_ratio": hours_out / hours_in if hours_in else 0.0,
    }


def stage_calibrate_audio(cfg: PipelineConfig) -> dict:
    table, _ = ingest.load_embeddings(cfg.out_path("ingest", "speaker_embeddings.tsv"))
    labels = _labels_for_stage(cfg, "host_speech")
    pos_ids, pos, _neg_ids, neg = _labeled_vectors(labels, table, "host_speech")
    model = hostid.fit_host_gaussian(pos, tail=cfg.hostid.tail)
    write_atomic(
        cfg.out_path("calibrate", "host_model.txt"),
        lambda p: hostid.save_host_model(model, p),
    )
    counts = {
        "positives": len(pos_ids),
        "negatives": int(neg.shape[0]),
        "threshold": model.threshold,
    }
    if cfg.labels.pseudo_speech:
        pseudo = {
            k: v == "positive" for k, v in read_label_file(Path(cfg.labels.pseudo_speech)).items()
        }
        predicted = {
            k: model.squared_distance(table[k]) <= model.threshold
            for k in pseudo
            if k in table
        }
        report = hostid.pseudo_label_report(predicted, pseudo)
        write_text_atomic(
            cfg.out_path("calibrate", "pseudo_label_report.json"),
            json.dumps(report.__dict__, indent=2, sort_keys=True) + "\n",
        )
        counts["pseudo_f1"] = report.f1
    return counts


def stage_calibrate_face(cfg: PipelineConfig) -> dict:
    table, _ = ingest.load_embeddings(cfg.out_path("ingest", "face_embeddings.tsv"))
    labels = _labels_for_stage(cfg, "host_face")
    pos_ids, pos, _neg_ids, neg = _labeled_vectors(labels, table, "host_face")
    # even-indexed positives (sorted by id) become gallery exemplars, odd
    # indices calibrate the threshold against the negatives
    exemplars = pos[0::2]
    calib_pos = pos[1::2]
    if len(calib_pos) < 5 or len(exemplars) < 1:
        raise CalibrationError(
            f"host_face needs at least 10 labeled positives to split into exemplars "
            f"and calibration samples, got {len(pos_ids)}"
        )
    tau, vote_fraction = hostid.calibrate_face_threshold(
        calib_pos,
        neg,
        exemplars,
        n_boot=cfg.hostid.n_boot,
        vote_fraction=cfg.hostid.vote_fraction,
        seed=cfg.hostid.seed,
    )
    if cfg.hostid.tau_override is not None:
        tau = cfg.hostid.tau_override
    gallery = hostid.FaceGallery(exemplars=exemplars, tau=tau, vote_fraction=vote_fraction)
    write_atomic(
        cfg.out_path("calibrate", "face_gallery.txt"),
        lambda p: hostid.save_face_gallery(gallery, p),
    )
    return {
        "positives": len(pos_ids),
        "negatives": int(neg.shape[0]),
        "exemplars": int(exemplars.shape[0]),
        "tau": tau,
    }


def _face_embedding_map(
    episode_id: str, detections, table: EmbeddingTable
) -> dict[tuple[int, int], np.ndarray]:
    mapping = {}
    for det in detections:
        if det.kind != "face":
            continue
        key = face_embedding_id(episode_id, det.frame_index, det.track_id)
        if key in table:
            mapping[(det.frame_index, det.track_id)] = table[key]
    return mapping


def stage_assign_ids(cfg: PipelineConfig) -> dict:
    manifest = load_manifest(cfg.out_path("segments", "manifest.tsv"))
    gallery = hostid.load_face_gallery(cfg.out_path("calibrate", "face_gallery.txt"))
    table, _ = ingest.load_embeddings(cfg.out_path("ingest", "face_embeddings.tsv"))
    out = cfg.out_path("identity")
    logs: dict[str, ingest.TrackLog] = {}
    for clip in manifest.clips:
        if clip.episode_id not in logs:
            logs[clip.episode_id], _ = ingest.parse_tracking_log(
                cfg.out_path("ingest", f"tracking-{clip.episode_id}.log")
            )

    def process(clip: ClipRecord) -> tuple[int, int]:
        track_log = logs[clip.episode_id]
        in_clip = [
            d
            for d in track_log.detections
            if d.kind == "face" and clip.start_frame <= d.frame_index < clip.end_frame
        ]
        embeddings = _face_embedding_map(clip.episode_id, in_clip, table)
        identity = hostid.assign_identities(
            clip.clip_id,
            in_clip,
            gallery,
            embeddings,
            theta_new=cfg.hostid.theta_new,
            vote_mode=cfg.hostid.vote_mode,
        )
        write_atomic(
            out / f"{clip.clip_id}.tsv", lambda p, t=identity: hostid.save_identity_track(t, p)
        )
        return len(identity.assignments), identity.unscored

    ordered = sorted(manifest.clips, key=lambda c: c.clip_id)
    if cfg.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(process, ordered))
    else:
        results = [process(clip) for clip in ordered]
    return {
        "clips": len(results),
        "frames": sum(r[0] for r in results),
        "unscored": sum(r[1] for r in results),
    }


def stage_derive_pairs(cfg: PipelineConfig) -> dict:
    manifest = load_manifest(cfg.out_path("segments", "manifest.tsv"))
    model = hostid.load_host_model(cfg.out_path("calibrate", "host_model.txt"))
    speaker_table, _ = ingest.load_embeddings(cfg.out_path("ingest", "speaker_embeddings.tsv"))
    diar, _ = ingest.parse_diarization(cfg.out_path("ingest", "diarization.tsv"))
    by_clip: dict[str, list[DiarSegment]] = {}
    for seg in diar:
        by_clip.setdefault(seg.clip_id, []).append(seg)
    out = cfg.out_path("pairs")
    interval_lines: list[str] = []
    rejection_lines: list[str] = []
    pair_refs: list[PairRef] = []
    accepted = 0
    for clip in sorted(manifest.clips, key=lambda c: c.clip_id):
        episode = manifest.episode_by_id(clip.episode_id)
        segments = sorted(
            by_clip.get(clip.clip_id, []), key=lambda s: (s.start_s, s.end_s, s.embedding_id)
        )
        intervals = host_intervals_for_clip(
            model, segments, speaker_table, episode, clip, cfg.hostid.max_merge_gap_s
        )
        identity_path = cfg.out_path("identity", f"{clip.clip_id}.tsv")
        if not identity_path.exists():
            raise PrerequisiteError(
                f"derive-pairs: no identity track for clip {clip.clip_id}; run 'assign-ids' first",
                run_first="assign-ids",
            )
        track = hostid.load_identity_track(identity_path)
        for start_f, end_f in intervals:
            interval_lines.append(f"{clip.clip_id} {start_f} {end_f}")
            t1 = start_f
            if t1 - cropper.GUEST_FRAMES < clip.start_frame or t1 + cropper.HOST_FRAMES > clip.end_frame:
                rejection_lines.append(f"{clip.clip_id} {t1} window-out-of-bounds")
                continue
            result = cropper.derive_pair(
                track,
                t1,
                clip.start_frame,
                clip.end_frame,
                episode,
                min_guest_coverage=cfg.cropper.guest_coverage,
                min_host_coverage=cfg.cropper.host_coverage,
                max_area_ratio=cfg.cropper.area_ratio,
                area_source=cfg.cropper.area_source,
                expand_factor=cfg.cropper.expand_factor,
                down_shift=cfg.cropper.down_shift,
                iqr_k=cfg.cropper.iqr_k,
            )
            if isinstance(result, cropper.PairRejection):
                rejection_lines.append(f"{clip.clip_id} {t1} {','.join(result.reasons)}")
                continue
            write_atomic(
                out / f"{result.pair_id}.pair", lambda p, pr=result: cropper.save_pair(pr, p)
            )
            pair_refs.append(
                PairRef(result.pair_id, clip.clip_id, f"renders/{result.pair_id}.plan")
            )
            accepted += 1
    write_text_atomic(
        out / "host_intervals.tsv", "\n".join(interval_lines) + ("\n" if interval_lines else "")
    )
    write_text_atomic(
        out / "rejections.tsv", "\n".join(rejection_lines) + ("\n" if rejection_lines else "")
    )
    full = Manifest(episodes=manifest.episodes, clips=manifest.clips, pairs=pair_refs)
    write_atomic(cfg.out_path("manifest.tsv"), lambda p: save_manifest(full, p))
    return {
        "host_intervals": len(interval_lines),
        "pairs_accepted": accepted,
        "pairs_rejected": len(rejection_lines),
    }


def stage_plan_renders(cfg: PipelineConfig) -> dict:
    manifest = load_manifest(cfg.out_path("manifest.tsv"))
    out = cfg.out_path("renders")
    commands: list[str] = []
    for ref in sorted(manifest.pairs, key=lambda p: p.pair_id):
        pair = cropper.load_pair(cfg.out_path("pairs", f"{ref.pair_id}.pair"))
        clip = next(c for c in manifest.clips if c.clip_id == ref.clip_id)
        episode = manifest.episode_by_id(clip.episode_id)
        plan = cropper.plan_render(pair, episode)
        write_atomic(out / f"{ref.pair_id}.plan", lambda p, pl=plan: cropper.save_render_plan(pl, p))
        commands.extend(cropper.render_commands(plan, cfg.inputs.media_root))
    write_text_atomic(out / "commands.sh", "\n".join(commands) + ("\n" if commands else ""))
    return {"plans": len(manifest.pairs), "commands": len(commands)}


def stage_stats(cfg: PipelineConfig) -> dict:
    manifest = load_manifest(cfg.out_path("manifest.tsv"))
    report = compute_stats(manifest)
    out = cfg.out_path("stats")
    write_text_atomic(out / "stats.txt", report.as_text())
    write_text_atomic(
        out / "stats.json", json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    )
    hist_lines = [f"{b} {c}" for b, c in report.histogram]
    write_text_atomic(
        out / "histogram.tsv", "\n".join(hist_lines) + ("\n" if hist_lines else "")
    )
    return {"clips": report.clip_count, "total_hours": report.total_hours}


def make_tasks(cfg: PipelineConfig, stage: str) -> dict:
    """Create annotation tasks for one checkpoint in the label store."""
    store_dir = cfg.labels.store_dir or str(cfg.out_path("anno"))
    store = LabelStore(store_dir, lease_seconds=cfg.annotation.lease_seconds)
    candidates: list[TaskCandidate] = []
    if stage == "host_speech":
        diar, _ = ingest.parse_diarization(cfg.out_path("ingest", "diarization.tsv"))
        for seg in diar:
            ref = f"audio/{seg.clip_id}/{seg.embedding_id}.wav"
            candidates.append(
                TaskCandidate(
                    payload_ref=ref,
                    context={
                        "clip_id": seg.clip_id,
                        "speaker_label": seg.speaker_label,
                        "start_s": seg.start_s,
                        "end_s": seg.end_s,
                        "embedding_id": seg.embedding_id,
                    },
                )
            )
    elif stage == "host_face":
        manifest = load_manifest(cfg.out_path("segments", "manifest.tsv"))
        model = hostid.load_host_model(cfg.out_path("calibrate", "host_model.txt"))
        speaker_table, _ = ingest.load_embeddings(
            cfg.out_path("ingest", "speaker_embeddings.tsv")
        )
        diar, _ = ingest.parse_diarization(cfg.out_path("ingest", "diarization.tsv"))
        by_clip: dict[str, list[DiarSegment]] = {}
        for seg in diar:
            by_clip.setdefault(seg.clip_id, []).append(seg)
        stride = cfg.annotation.face_frame_stride
        for clip in sorted(manifest.clips, key=lambda c: c.clip_id):
            episode = manifest.episode_by_id(clip.episode_id)
            segments = sorted(
                by_clip.get(clip.clip_id, []), key=lambda s: (s.start_s, s.end_s, s.embedding_id)
            )
            intervals = host_intervals_for_clip(
                model, segments, speaker_table, episode, clip, cfg.hostid.max_merge_gap_s
            )
            track_log, _ = ingest.parse_tracking_log(
                cfg.out_path("ingest", f"tracking-{clip.episode_id}.log")
            )
            wanted = set()
            for start_f, end_f in intervals:
                wanted.update(range(start_f, end_f, stride))
            for det in track_log.detections:
                if det.kind != "face" or det.frame_index not in wanted:
                    continue
                ref = f"crops/{clip.episode_id}/{det.frame_index}/{det.track_id}.jpg"
                candidates.append(
                    TaskCandidate(
                        payload_ref=ref,
                        context={
                            "clip_id": clip.clip_id,
                            "frame_index": det.frame_index,
                            "track_id": det.track_id,
                            "embedding_id": face_embedding_id(
                                clip.episode_id, det.frame_index, det.track_id
                            ),
                        },
                    )
                )
    else:
        raise ConfigurationError(f"unknown annotation stage {stage!r}")
    created = store.create_tasks(stage, candidates, cfg.annotation.sample_fraction)
    return {"candidates": len(candidates), "created": created}


# ---------------------------------------------------------------------------
# Stage registry and runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StageDef:
    name: str
    run: Callable[[PipelineConfig], dict]
    config_sections: tuple[str, ...]
    # (path, producing stage or None for external inputs)
    inputs: Callable[[PipelineConfig], list[tuple[Path, str | None]]]


def _ingest_inputs(cfg: PipelineConfig) -> list[tuple[Path, str | None]]:
    paths = [Path(cfg.inputs.episodes), Path(cfg.inputs.diarization)]
    paths.extend(Path(p) for p in cfg.inputs.tracking)
    paths.append(Path(cfg.inputs.speaker_embeddings))
    paths.append(Path(cfg.inputs.face_embeddings))
    return [(p, None) for p in paths]


def _ingest_outputs(cfg: PipelineConfig) -> list[Path]:
    out = cfg.out_path("ingest")
    paths = [out / "episodes.tsv", out / "diarization.tsv"]
    paths.extend(sorted(out.glob("tracking-*.log")))
    paths.append(out / "speaker_embeddings.tsv")
    paths.append(out / "face_embeddings.tsv")
    return paths


def _segment_inputs(cfg: PipelineConfig) -> list[tuple[Path, str | None]]:
    return [(p, "ingest") for p in _ingest_outputs(cfg)]


def _calibrate_audio_inputs(cfg: PipelineConfig) -> list[tuple[Path, str | None]]:
    paths = [(cfg.out_path("ingest", "speaker_embeddings.tsv"), "ingest")]
    if not cfg.labels.store_dir and cfg.labels.host_speech:
        paths.append((Path(cfg.labels.host_speech), None))
    if cfg.labels.pseudo_speech:
        paths.append((Path(cfg.labels.pseudo_speech), None))
    return paths


def _calibrate_face_inputs(cfg: PipelineConfig) -> list[tuple[Path, str | None]]:
    paths = [(cfg.out_path("ingest", "face_embeddings.tsv"), "ingest")]
    if not cfg.labels.store_dir and cfg.labels.host_face:
        paths.append((Path(cfg.labels.host_face), None))
    return paths


def _assign_ids_inputs(cfg: PipelineConfig) -> list[tuple[Path, str | None]]:
    paths = [
        (cfg.out_path("segments", "manifest.tsv"), "segment"),
        (cfg.out_path("calibrate", "face_gallery.txt"), "calibrate-face"),
        (cfg.out_path("ingest", "face_embeddings.tsv"), "ingest"),
    ]
    paths.extend((p, "ingest") for p in sorted(cfg.out_path("ingest").glob("tracking-*.log")))
    return paths


def _derive_pairs_inputs(cfg: PipelineConfig) -> list[tuple[Path, str | None]]:
    paths = [
        (cfg.out_path("segments", "manifest.tsv"), "segment"),
        (cfg.out_path("calibrate", "host_model.txt"), "calibrate-audio"),
        (cfg.out_path("ingest", "diarization.tsv"), "ingest"),
        (cfg.out_path("ingest", "speaker_embeddings.tsv"), "ingest"),
    ]
    identity_dir = cfg.out_path("identity")
    identity_files = sorted(identity_dir.glob("*.tsv")) if identity_dir.is_dir() else []
    if identity_files:
        paths.extend((p, "assign-ids") for p in identity_files)
    else:
        paths.append((identity_dir, "assign-ids"))
    return paths


def _plan_renders_inputs(cfg: PipelineConfig) -> list[tuple[Path, str | None]]:
    paths = [(cfg.out_path("manifest.tsv"), "derive-pairs")]
    pairs_dir = cfg.out_path("pairs")
    if pairs_dir.is_dir():
        paths.extend((p, "derive-pairs") for p in sorted(pairs_dir.glob("*.pair")))
    return paths


def _stats_inputs(cfg: PipelineConfig) -> list[tuple[Path, str | None]]:
    return [(cfg.out_path("manifest.tsv"), "derive-pairs")]


STAGE_DEFS: dict[str, StageDef] = {
    "ingest": StageDef("ingest", stage_ingest, ("inputs",), _ingest_inputs),
    "segment": StageDef("segment", stage_segment, ("segmenter", "split"), _segment_inputs),
    "calibrate-audio": StageDef(
        "calibrate-audio", stage_calibrate_audio, ("hostid", "labels"), _calibrate_audio_inputs
    ),
    "calibrate-face": StageDef(
        "calibrate-face", stage_calibrate_face, ("hostid", "labels"), _calibrate_face_inputs
    ),
    "assign-ids": StageDef("assign-ids", stage_assign_ids, ("hostid",), _assign_ids_inputs),
    "derive-pairs": StageDef(
        "derive-pairs", stage_derive_pairs, ("hostid", "cropper"), _derive_pairs_inputs
    ),
    "plan-renders": StageDef(
        "plan-renders", stage_plan_renders, ("inputs",), _plan_renders_inputs
    ),
    "stats": StageDef("stats", stage_stats, (), _stats_inputs),
}

RUN_ALL_ORDER = (
    "ingest",
    "segment",
    "calibrate-audio",
    "calibrate-face",
    "assign-ids",
    "derive-pairs",
    "plan-renders",
    "stats",
)


@dataclass(frozen=True)
class StageResult:
    stage: str
    skipped: bool
    counts: dict
    wall_s: float


def _stage_digest(stage: StageDef, cfg: PipelineConfig) -> str:
    h = hashlib.blake2b(digest_size=16)
    for section in stage.config_sections:
        h.update(repr(getattr(cfg, section)).encode("utf-8"))
    for path, _producer in stage.inputs(cfg):
        h.update(str(path).encode("utf-8"))
        if path.is_file():
            h.update(path.read_bytes())
    return h.hexdigest()


def _check_prerequisites(stage: StageDef, cfg: PipelineConfig) -> None:
    for path, producer in stage.inputs(cfg):
        if path.exists():
            continue
        if producer is None:
            raise ValidationError(f"stage {stage.name}: input file not found: {path}")
        raise PrerequisiteError(
            f"stage {stage.name}: missing {path}; run stage {producer!r} first",
            run_first=producer,
        )


def _append_journal(cfg: PipelineConfig, result: StageResult, digest: str) -> None:
    journal = cfg.out_path("journal.jsonl")
    journal.parent.mkdir(parents=True, exist_ok=True)
    record = {
        "stage": result.stage,
        "skipped": result.skipped,
        "counts": result.counts,
        "wall_s": round(result.wall_s, 6),
        "input_hash": digest,
        "at": time.time(),
    }
    with open(journal, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def run_stage(name: str, cfg: PipelineConfig, force: bool = False) -> StageResult:
    """Run one pipeline stage, skipping when inputs and config are unchanged."""
    if name not in STAGE_DEFS:
        raise ConfigurationError(f"unknown stage {name!r}; stages: {sorted(STAGE_DEFS)}")
    stage = STAGE_DEFS[name]
    _check_prerequisites(stage, cfg)
    digest = _stage_digest(stage, cfg)
    hash_path = cfg.out_path("state", f"{name}.hash")
    if not force and hash_path.exists() and hash_path.read_text(encoding="utf-8") == digest:
        result = StageResult(stage=name, skipped=True, counts={}, wall_s=0.0)
        _append_journal(cfg, result, digest)
        log.info("stage %s: up to date", name)
        return result
    started = time.perf_counter()
    counts = stage.run(cfg)
    wall = time.perf_counter() - started
    write_text_atomic(hash_path, digest)
    result = StageResult(stage=name, skipped=False, counts=counts, wall_s=wall)
    _append_journal(cfg, result, digest)
    log.info("stage %s: %s (%.2fs)", name, counts, wall)
    return result


def run_all(cfg: PipelineConfig, force: bool = False) -> list[StageResult]:
    return [run_stage(name, cfg, force=force) for name in RUN_ALL_ORDER]
