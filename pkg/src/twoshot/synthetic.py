"""Bundled synthetic mini-episode generator.

Builds a deterministic, fully labeled fixture that exercises every pipeline
stage: a 60-second episode with a host and guest person track, a brief
walk-through third person, detector dropouts, face tracks with a background
face, crosstalk diarization, separable voice and face embedding clusters, and
label files for both calibration checkpoints. The ground truth written next
to the inputs states what the pipeline must find.

The separations are generous by construction (inter-cluster cosine about 0.1,
within-cluster noise far smaller), so expected outcomes are structural rather
than borderline.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .datamodel import BBox, EpisodeMeta, clip_id_for
from .ingest import (
    Detection,
    DiarSegment,
    EmbeddingTable,
    TrackLog,
    face_embedding_id,
    write_diarization,
    write_embeddings,
    write_episodes,
    write_tracking_log,
)

DIM = 16
EPISODE_ID = "ep0"
FPS = 25.0
FRAME_COUNT = 1500
WIDTH, HEIGHT = 1280, 720

HOST_PERSON, GUEST_PERSON, INTRUDER_PERSON = 1, 2, 3
HOST_FACE, GUEST_FACE, EXTRA_FACE = 11, 12, 13

CLIP_START, CLIP_END = 100, 1441  # two-person segment the vetting stage must find
INTRUDER_FRAMES = range(700, 706)
GUEST_PERSON_DROPOUT = range(900, 904)
GUEST_FACE_DROPOUTS = sorted({*range(300, 303), *range(620, 661), *range(900, 904)})
GUEST_FACE_JUMP_FRAMES = (420, 421)  # tracker glitch the IQR filter must absorb
EXTRA_FACE_FRAMES = range(1100, 1201)

HOST_TURNS = [
    (2.0, 3.5),
    (4.0, 5.5),
    (8.0, 9.2),
    (10.0, 10.9),
    (11.3, 12.5),
    (14.0, 15.5),
    (18.0, 19.5),
    (22.0, 23.0),
    (26.0, 27.5),
    (32.0, 33.5),
    (40.0, 41.5),
    (46.0, 47.5),
]
GUEST_TURNS = [
    (3.4, 4.1),  # crosstalk over two host turns
    (5.8, 7.8),
    (9.4, 9.9),
    (12.7, 13.8),
    (15.7, 17.7),
    (19.7, 21.7),
    (23.2, 25.7),
    (27.7, 31.7),
    (33.7, 39.7),
    (41.7, 45.7),
    (47.7, 52.0),
]

# merged host onsets at max_merge_gap_s=0.5, in episode frames
EXPECTED_ONSETS = [150, 300, 350, 450, 550, 650, 750, 900, 1100, 1250]
EXPECTED_ACCEPTED_T1 = [300, 350, 450, 550, 750, 900, 1100, 1250]
EXPECTED_REJECTIONS = {150: "window-out-of-bounds", 650: "guest-coverage"}

N_CAL_SPEAKER = 20  # labeled calibration examples per voice class
N_FACE_POSITIVES = 26
N_FACE_NEGATIVES = 12

SPEAKER_CAL_SIGMA = 0.05
SPEAKER_EPISODE_SIGMA = 0.02
FACE_SIGMA = 0.04


def _unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(DIM)
    return v / np.linalg.norm(v)


def _with_cosine(rng: np.random.Generator, anchor: np.ndarray, cosine: float) -> np.ndarray:
    """A unit vector at the requested cosine to ``anchor``."""
    raw = rng.standard_normal(DIM)
    perp = raw - (raw @ anchor) * anchor
    perp = perp / np.linalg.norm(perp)
    return cosine * anchor + np.sqrt(1.0 - cosine**2) * perp


def _around(rng: np.random.Generator, mean: np.ndarray, sigma: float) -> np.ndarray:
    v = mean + sigma * rng.standard_normal(DIM)
    return v / np.linalg.norm(v)


def _person_box(rng: np.random.Generator, base_x: float, base_y: float, w: float, h: float) -> BBox:
    return BBox(
        base_x + rng.uniform(-3, 3), base_y + rng.uniform(-3, 3), w + rng.uniform(-2, 2), h
    )


def generate(target_dir: str | Path, seed: int = 7) -> dict:
    """Write the fixture into ``target_dir`` and return its ground truth."""
    target = Path(target_dir)
    (target / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    episode = EpisodeMeta(
        episode_id=EPISODE_ID,
        source_uri="media/ep0.mp4",
        fps=FPS,
        frame_count=FRAME_COUNT,
        width=WIDTH,
        height=HEIGHT,
        duration_s=FRAME_COUNT / FPS,
    )
    write_episodes([episode], target / "episodes.tsv")

    detections: list[Detection] = []
    for frame in range(80, 1461):
        detections.append(
            Detection(frame, HOST_PERSON, _person_box(rng, 800, 190, 180, 330), 0.9, "person")
        )
    for frame in range(100, 1441):
        if frame in GUEST_PERSON_DROPOUT:
            continue
        detections.append(
            Detection(frame, GUEST_PERSON, _person_box(rng, 300, 200, 170, 310), 0.9, "person")
        )
    for frame in INTRUDER_FRAMES:
        detections.append(
            Detection(frame, INTRUDER_PERSON, _person_box(rng, 550, 250, 160, 300), 0.9, "person")
        )

    face_frames: dict[int, list[tuple[int, BBox]]] = {}
    for frame in range(CLIP_START, CLIP_END):
        face_frames.setdefault(frame, []).append(
            (HOST_FACE, BBox(850 + rng.uniform(-3, 3), 230 + rng.uniform(-3, 3), 90, 90))
        )
        if frame not in GUEST_FACE_DROPOUTS:
            if frame in GUEST_FACE_JUMP_FRAMES:
                box = BBox(540, 240, 88, 88)
            else:
                box = BBox(340 + rng.uniform(-3, 3), 240 + rng.uniform(-3, 3), 88, 88)
            face_frames[frame].append((GUEST_FACE, box))
        if frame in EXTRA_FACE_FRAMES:
            face_frames[frame].append(
                (EXTRA_FACE, BBox(600 + rng.uniform(-2, 2), 260 + rng.uniform(-2, 2), 70, 70))
            )
    for frame, faces in face_frames.items():
        for track_id, box in faces:
            detections.append(Detection(frame, track_id, box, 0.95, "face"))
    write_tracking_log(
        TrackLog(EPISODE_ID, tuple(detections)), target / "tracking-ep0.log"
    )

    # voice and face identity clusters
    host_voice = _unit(rng)
    guest_voice = _with_cosine(rng, host_voice, 0.1)
    host_face_mean = _unit(rng)
    guest_face_mean = _with_cosine(rng, host_face_mean, 0.1)
    extra_face_mean = _with_cosine(rng, host_face_mean, 0.12)

    clip_id = clip_id_for(EPISODE_ID, CLIP_START, CLIP_END)
    diar: list[DiarSegment] = []
    speaker_vectors: dict[str, np.ndarray] = {}
    for idx, (start, end) in enumerate(HOST_TURNS):
        eid = f"spk-h-{idx:03d}"
        speaker_vectors[eid] = _around(rng, host_voice, SPEAKER_EPISODE_SIGMA)
        diar.append(DiarSegment(clip_id, "S0", start, end, eid))
    for idx, (start, end) in enumerate(GUEST_TURNS):
        eid = f"spk-g-{idx:03d}"
        speaker_vectors[eid] = _around(rng, guest_voice, SPEAKER_EPISODE_SIGMA)
        diar.append(DiarSegment(clip_id, "S1", start, end, eid))
    diar.sort(key=lambda s: (s.start_s, s.end_s))
    write_diarization(diar, target / "diarization.tsv")

    speech_labels: list[str] = []
    pseudo_labels: list[str] = []
    for idx in range(N_CAL_SPEAKER):
        eid = f"cal-h-{idx:03d}"
        speaker_vectors[eid] = _around(rng, host_voice, SPEAKER_CAL_SIGMA)
        speech_labels.append(f"{eid} positive")
        eid = f"cal-g-{idx:03d}"
        speaker_vectors[eid] = _around(rng, guest_voice, SPEAKER_CAL_SIGMA)
        speech_labels.append(f"{eid} negative")
    for seg in diar:
        truth = "positive" if seg.speaker_label == "S0" else "negative"
        pseudo_labels.append(f"{seg.embedding_id} {truth}")
    write_embeddings(
        EmbeddingTable(DIM, speaker_vectors), target / "speaker_embeddings.tsv"
    )
    (target / "labels" / "host_speech.tsv").write_text(
        "\n".join(speech_labels) + "\n", encoding="utf-8"
    )
    (target / "labels" / "pseudo_speech.tsv").write_text(
        "\n".join(pseudo_labels) + "\n", encoding="utf-8"
    )

    face_vectors: dict[str, np.ndarray] = {}
    means = {HOST_FACE: host_face_mean, GUEST_FACE: guest_face_mean, EXTRA_FACE: extra_face_mean}
    for frame, faces in face_frames.items():
        for track_id, _box in faces:
            eid = face_embedding_id(EPISODE_ID, frame, track_id)
            face_vectors[eid] = _around(rng, means[track_id], FACE_SIGMA)
    write_embeddings(EmbeddingTable(DIM, face_vectors), target / "face_embeddings.tsv")

    host_face_frames = sorted(f for f, faces in face_frames.items() if any(t == HOST_FACE for t, _ in faces))
    guest_face_frames = sorted(f for f, faces in face_frames.items() if any(t == GUEST_FACE for t, _ in faces))
    face_labels = []
    for frame in host_face_frames[:: max(1, len(host_face_frames) // N_FACE_POSITIVES)][:N_FACE_POSITIVES]:
        face_labels.append(f"{face_embedding_id(EPISODE_ID, frame, HOST_FACE)} positive")
    for frame in guest_face_frames[:: max(1, len(guest_face_frames) // N_FACE_NEGATIVES)][:N_FACE_NEGATIVES]:
        face_labels.append(f"{face_embedding_id(EPISODE_ID, frame, GUEST_FACE)} negative")
    (target / "labels" / "host_face.tsv").write_text(
        "\n".join(face_labels) + "\n", encoding="utf-8"
    )

    config_text = "\n".join(
        [
            "inputs:",
            f"  episodes: {target / 'episodes.tsv'}",
            "  tracking:",
            f"    - {target / 'tracking-ep0.log'}",
            f"  diarization: {target / 'diarization.tsv'}",
            f"  speaker_embeddings: {target / 'speaker_embeddings.tsv'}",
            f"  face_embeddings: {target / 'face_embeddings.tsv'}",
            f"  media_root: {target}",
            "labels:",
            f"  host_speech: {target / 'labels' / 'host_speech.tsv'}",
            f"  host_face: {target / 'labels' / 'host_face.tsv'}",
            f"  pseudo_speech: {target / 'labels' / 'pseudo_speech.tsv'}",
            f"output_dir: {target / 'out'}",
            "",
        ]
    )
    (target / "config.yaml").write_text(config_text, encoding="utf-8")

    ground_truth = {
        "episode_id": EPISODE_ID,
        "clip_id": clip_id,
        "clip_start": CLIP_START,
        "clip_end": CLIP_END,
        "gap_frames": sorted({*INTRUDER_FRAMES, *GUEST_PERSON_DROPOUT}),
        "person_pair": [HOST_PERSON, GUEST_PERSON],
        "host_onsets": EXPECTED_ONSETS,
        "accepted_t1": EXPECTED_ACCEPTED_T1,
        "rejections": {str(k): v for k, v in EXPECTED_REJECTIONS.items()},
        "blackout_for_t1_350": [14, 15, 16],
        "guest_clusters": 2,
    }
    (target / "ground_truth.json").write_text(
        json.dumps(ground_truth, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return ground_truth
