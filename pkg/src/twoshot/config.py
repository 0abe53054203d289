"""Pipeline configuration: YAML file plus per-tunable flag overrides.

Every tunable is validated against its documented range when the config is
loaded, so a bad value fails up front rather than three stages in.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

import yaml

from .errors import ConfigurationError


@dataclass
class InputsConfig:
    episodes: str = ""
    tracking: list[str] = field(default_factory=list)
    diarization: str = ""
    speaker_embeddings: str = ""
    face_embeddings: str = ""
    media_root: str = "."


@dataclass
class LabelsConfig:
    # label files: "<embedding_id> <verdict>" per line; the annosvc store
    # directory, when set, takes precedence for stages it has labels for
    host_speech: str = ""
    host_face: str = ""
    store_dir: str = ""
    pseudo_speech: str = ""  # optional held-out labels for the audio F1 report


@dataclass
class SegmenterConfig:
    max_gap: int = 12
    min_len: int = 50
    min_confidence: float = 0.5


@dataclass
class HostidConfig:
    tail: float = 0.01
    n_boot: int = 200
    theta_new: float = 0.45
    vote_fraction: float = 0.5
    vote_mode: str = "track"
    max_merge_gap_s: float = 0.5
    tau_override: float | None = None
    seed: int = 0


@dataclass
class CropperConfig:
    guest_coverage: float = 0.70
    host_coverage: float = 0.85
    area_ratio: float = 10.0
    area_source: str = "face"  # face | crop: which areas the 10:1 cap compares
    expand_factor: float = 1.3
    down_shift: float = 0.2
    iqr_k: float = 1.5


@dataclass
class SplitConfig:
    ratios: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    by: str = "clip"  # clip | episode


@dataclass
class AnnotationConfig:
    sample_fraction: float = 0.10
    lease_seconds: float = 120.0
    face_frame_stride: int = 25


@dataclass
class PipelineConfig:
    inputs: InputsConfig = field(default_factory=InputsConfig)
    labels: LabelsConfig = field(default_factory=LabelsConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    hostid: HostidConfig = field(default_factory=HostidConfig)
    cropper: CropperConfig = field(default_factory=CropperConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    annotation: AnnotationConfig = field(default_factory=AnnotationConfig)
    output_dir: str = "out"
    workers: int = 1

    def validate(self) -> None:
        seg, hid, crop = self.segmenter, self.hostid, self.cropper
        checks = [
            (seg.max_gap >= 0, f"segmenter.max_gap must be >= 0, got {seg.max_gap}"),
            (seg.min_len >= 1, f"segmenter.min_len must be >= 1, got {seg.min_len}"),
            (
                0.0 <= seg.min_confidence <= 1.0,
                f"segmenter.min_confidence must be in [0, 1], got {seg.min_confidence}",
            ),
            (0.0 < hid.tail < 0.5, f"hostid.tail must be in (0, 0.5), got {hid.tail}"),
            (hid.n_boot >= 1, f"hostid.n_boot must be >= 1, got {hid.n_boot}"),
            (
                -1.0 < hid.theta_new < 1.0,
                f"hostid.theta_new must be in (-1, 1), got {hid.theta_new}",
            ),
            (
                0.0 < hid.vote_fraction <= 1.0,
                f"hostid.vote_fraction must be in (0, 1], got {hid.vote_fraction}",
            ),
            (
                hid.vote_mode in ("track", "frame"),
                f"hostid.vote_mode must be track|frame, got {hid.vote_mode!r}",
            ),
            (
                hid.max_merge_gap_s >= 0.0,
                f"hostid.max_merge_gap_s must be >= 0, got {hid.max_merge_gap_s}",
            ),
            (
                hid.tau_override is None or -1.0 < hid.tau_override < 1.0,
                f"hostid.tau_override must be in (-1, 1), got {hid.tau_override}",
            ),
            (
                0.0 <= crop.guest_coverage <= 1.0,
                f"cropper.guest_coverage must be in [0, 1], got {crop.guest_coverage}",
            ),
            (
                0.0 <= crop.host_coverage <= 1.0,
                f"cropper.host_coverage must be in [0, 1], got {crop.host_coverage}",
            ),
            (crop.area_ratio > 0, f"cropper.area_ratio must be > 0, got {crop.area_ratio}"),
            (
                crop.area_source in ("face", "crop"),
                f"cropper.area_source must be face|crop, got {crop.area_source!r}",
            ),
            (
                crop.expand_factor > 0,
                f"cropper.expand_factor must be > 0, got {crop.expand_factor}",
            ),
            (crop.down_shift >= 0, f"cropper.down_shift must be >= 0, got {crop.down_shift}"),
            (crop.iqr_k >= 0, f"cropper.iqr_k must be >= 0, got {crop.iqr_k}"),
            (
                len(self.split.ratios) == 3 and all(r >= 0 for r in self.split.ratios),
                f"split.ratios must be three non-negative fractions, got {self.split.ratios}",
            ),
            (
                abs(sum(self.split.ratios) - 1.0) <= 1e-9,
                f"split.ratios must sum to 1, got {sum(self.split.ratios)}",
            ),
            (
                self.split.by in ("clip", "episode"),
                f"split.by must be clip|episode, got {self.split.by!r}",
            ),
            (
                0.0 < self.annotation.sample_fraction <= 1.0,
                f"annotation.sample_fraction must be in (0, 1], got {self.annotation.sample_fraction}",
            ),
            (
                self.annotation.lease_seconds > 0,
                f"annotation.lease_seconds must be > 0, got {self.annotation.lease_seconds}",
            ),
            (
                self.annotation.face_frame_stride >= 1,
                f"annotation.face_frame_stride must be >= 1, got {self.annotation.face_frame_stride}",
            ),
            (self.workers >= 1, f"workers must be >= 1, got {self.workers}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(message)

    def out_path(self, *parts: str) -> Path:
        return Path(self.output_dir).joinpath(*parts)


_SECTIONS = {
    "inputs": InputsConfig,
    "labels": LabelsConfig,
    "segmenter": SegmenterConfig,
    "hostid": HostidConfig,
    "cropper": CropperConfig,
    "split": SplitConfig,
    "annotation": AnnotationConfig,
}


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in dc_fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown {section} option(s): {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data or {})
    kwargs = {}
    for section, cls in _SECTIONS.items():
        raw = data.pop(section, {}) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"config section {section!r} must be a mapping")
        kwargs[section] = _build_section(cls, raw, section)
    for scalar in ("output_dir", "workers"):
        if scalar in data:
            kwargs[scalar] = data.pop(scalar)
    if data:
        raise ConfigurationError(f"unknown config key(s): {sorted(data)}")
    cfg = PipelineConfig(**kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: config root must be a mapping")
    return config_from_dict(data)


def apply_override(cfg: PipelineConfig, dotted_key: str, raw_value: str) -> None:
    """Apply one ``section.key=value`` style flag override in place."""
    if "." in dotted_key:
        section_name, key = dotted_key.split(".", 1)
        section = getattr(cfg, section_name, None)
        if section is None or section_name not in _SECTIONS:
            raise ConfigurationError(f"unknown config section {section_name!r}")
    else:
        section, key = cfg, dotted_key
    if not hasattr(section, key):
        raise ConfigurationError(f"unknown config key {dotted_key!r}")
    current = getattr(section, key)
    value: object
    if isinstance(current, bool):
        value = raw_value.lower() in ("1", "true", "yes")
    elif isinstance(current, int):
        value = int(raw_value)
    elif isinstance(current, float):
        value = float(raw_value)
    elif isinstance(current, list):
        parts = [p for p in raw_value.split(",") if p != ""]
        if current and isinstance(current[0], float):
            value = [float(p) for p in parts]
        else:
            value = parts
    elif current is None:
        value = float(raw_value)
    else:
        value = raw_value
    setattr(section, key, value)
