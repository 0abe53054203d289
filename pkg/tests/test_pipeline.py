import json
from pathlib import Path

import pytest

from twoshot import synthetic
from twoshot.cli import main
from twoshot.config import PipelineConfig, apply_override, config_from_dict, load_config
from twoshot.cropper import load_pair, load_render_plan
from twoshot.datamodel import load_manifest
from twoshot.errors import ConfigurationError, PrerequisiteError
from twoshot.hostid import load_identity_track
from twoshot.pipeline import make_tasks, run_all, run_stage


def artifact_bytes(out_dir: Path) -> dict[str, bytes]:
    """Everything determinism promises to reproduce byte-for-byte."""
    collected = {}
    for pattern in ("manifest.tsv", "identity/*.tsv", "renders/*.plan", "pairs/*.pair",
                    "pairs/host_intervals.tsv", "pairs/rejections.tsv"):
        for path in sorted(out_dir.glob(pattern)):
            collected[str(path.relative_to(out_dir))] = path.read_bytes()
    return collected


class TestRunAll:
    def test_finds_the_designed_clip(self, pipeline_run):
        cfg, truth, _ = pipeline_run
        manifest = load_manifest(cfg.out_path("manifest.tsv"))
        assert [c.clip_id for c in manifest.clips] == [truth["clip_id"]]
        clip = manifest.clips[0]
        assert clip.start_frame == truth["clip_start"]
        assert clip.end_frame == truth["clip_end"]

    def test_segment_sidecar_records_designed_gaps(self, pipeline_run):
        cfg, truth, _ = pipeline_run
        line = cfg.out_path("segments", "segments.tsv").read_text().strip()
        fields = line.split()
        assert fields[0] == truth["clip_id"]
        assert [int(fields[1]), int(fields[2])] == truth["person_pair"]
        gaps = [int(g) for g in fields[4].split(",")]
        assert gaps == truth["gap_frames"]

    def test_host_intervals_start_at_designed_onsets(self, pipeline_run):
        cfg, truth, _ = pipeline_run
        lines = cfg.out_path("pairs", "host_intervals.tsv").read_text().splitlines()
        onsets = [int(line.split()[1]) for line in lines]
        assert onsets == truth["host_onsets"]

    def test_accepts_designed_pairs_and_rejects_the_rest(self, pipeline_run):
        cfg, truth, _ = pipeline_run
        manifest = load_manifest(cfg.out_path("manifest.tsv"))
        accepted = sorted(int(p.pair_id.rsplit("p", 1)[1]) for p in manifest.pairs)
        assert accepted == sorted(truth["accepted_t1"])
        rejections = {}
        for line in cfg.out_path("pairs", "rejections.tsv").read_text().splitlines():
            _clip, t1, reasons = line.split()
            rejections[t1] = reasons
        assert rejections == truth["rejections"]

    def test_identity_track_has_expected_guest_clusters(self, pipeline_run):
        cfg, truth, _ = pipeline_run
        track = load_identity_track(cfg.out_path("identity", f"{truth['clip_id']}.tsv"))
        roles = {a.role for entries in track.assignments.values() for a in entries}
        guests = {r for r in roles if r.startswith("guest_")}
        assert "host" in roles
        assert len(guests) == truth["guest_clusters"]

    def test_blackout_recorded_for_designed_dropout(self, pipeline_run):
        cfg, truth, _ = pipeline_run
        plan = load_render_plan(
            cfg.out_path("renders", f"{truth['clip_id']}-p350.plan")
        )
        assert list(plan.outputs[0].blackout) == truth["blackout_for_t1_350"]

    def test_render_plans_carry_fixed_parameters(self, pipeline_run):
        cfg, truth, _ = pipeline_run
        for path in sorted(cfg.out_path("renders").glob("*.plan")):
            plan = load_render_plan(path)
            assert (plan.fps, plan.crf, plan.audio_rate_hz, plan.audio_channels) == (25, 18, 16000, 1)
            assert plan.video_codec == "h264"

    def test_pair_windows_contiguous_with_fixed_lengths(self, pipeline_run):
        cfg, truth, _ = pipeline_run
        for path in sorted(cfg.out_path("pairs").glob("*.pair")):
            pair = load_pair(path)
            assert pair.guest_window[1] == pair.host_window[0]
            assert pair.guest_window[1] - pair.guest_window[0] == 64
            assert pair.host_window[1] - pair.host_window[0] == 81

    def test_pseudo_label_f1_is_perfect_on_designed_data(self, pipeline_run):
        cfg, _, _ = pipeline_run
        report = json.loads(cfg.out_path("calibrate", "pseudo_label_report.json").read_text())
        assert report["f1"] == 1.0

    def test_rerun_is_noop(self, pipeline_run):
        cfg, _, _ = pipeline_run
        results = run_all(cfg)
        assert all(r.skipped for r in results)

    def test_journal_records_every_stage(self, pipeline_run):
        cfg, _, results = pipeline_run
        lines = cfg.out_path("journal.jsonl").read_text().splitlines()
        stages = [json.loads(line)["stage"] for line in lines]
        for result in results:
            assert result.stage in stages

    def test_vetting_reports_reduction_ratio(self, pipeline_run):
        cfg, _, results = pipeline_run
        segment = next(r for r in results if r.stage == "segment")
        if not segment.skipped:
            assert 0 < segment.counts["reduction_ratio"] <= 1
            assert segment.counts["hours_out"] <= segment.counts["hours_in"]


class TestDeterminism:
    def test_two_fresh_runs_byte_identical(self, fixture_episode, tmp_path):
        root, _ = fixture_episode
        outputs = []
        for name in ("run_a", "run_b"):
            cfg = load_config(root / "config.yaml")
            cfg.output_dir = str(tmp_path / name)
            run_all(cfg)
            outputs.append(artifact_bytes(tmp_path / name))
        assert outputs[0].keys() == outputs[1].keys()
        assert outputs[0] == outputs[1]


class TestPrerequisites:
    def test_derive_pairs_before_anything_fails_with_stage_name(self, fixture_episode, tmp_path):
        root, _ = fixture_episode
        cfg = load_config(root / "config.yaml")
        cfg.output_dir = str(tmp_path / "empty")
        with pytest.raises(PrerequisiteError) as err:
            run_stage("derive-pairs", cfg)
        assert err.value.run_first in ("segment", "ingest", "assign-ids", "calibrate-audio")

    def test_cli_exit_code_two_for_missing_prerequisite(self, fixture_episode, tmp_path):
        root, _ = fixture_episode
        code = main(
            [
                "assign-ids",
                "--config",
                str(root / "config.yaml"),
                "--output-dir",
                str(tmp_path / "fresh"),
            ]
        )
        assert code == 2

    def test_cli_exit_code_one_for_bad_config(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text("hostid:\n  tail: 0.9\n")
        assert main(["ingest", "--config", str(bad)]) == 1


class TestMakeTasks:
    def test_host_speech_tasks_sampled_from_diarization(self, pipeline_run, tmp_path):
        cfg, _, _ = pipeline_run
        cfg_copy = load_config(Path(cfg.inputs.episodes).parent / "config.yaml")
        cfg_copy.output_dir = cfg.output_dir
        cfg_copy.labels.store_dir = str(tmp_path / "anno")
        cfg_copy.annotation.sample_fraction = 1.0
        counts = make_tasks(cfg_copy, "host_speech")
        assert counts["candidates"] == 23  # every diarized segment
        assert counts["created"] == 23
        again = make_tasks(cfg_copy, "host_speech")
        assert again["created"] == 0

    def test_host_face_tasks_limited_to_host_windows(self, pipeline_run, tmp_path):
        cfg, _, _ = pipeline_run
        cfg_copy = load_config(Path(cfg.inputs.episodes).parent / "config.yaml")
        cfg_copy.output_dir = cfg.output_dir
        cfg_copy.labels.store_dir = str(tmp_path / "anno2")
        cfg_copy.annotation.sample_fraction = 1.0
        counts = make_tasks(cfg_copy, "host_face")
        assert counts["candidates"] > 0
        assert counts["created"] == counts["candidates"]


class TestSplitGrouping:
    def test_by_episode_split_follows_episode_hash(self, fixture_episode, tmp_path):
        from twoshot.datamodel import assign_split

        root, truth = fixture_episode
        cfg = load_config(root / "config.yaml")
        cfg.output_dir = str(tmp_path / "grouped")
        cfg.split.by = "episode"
        run_stage("ingest", cfg)
        run_stage("segment", cfg)
        manifest = load_manifest(cfg.out_path("segments", "manifest.tsv"))
        expected = assign_split(truth["episode_id"], (0.8, 0.1, 0.1))
        assert all(c.split == expected for c in manifest.clips)


class TestConfig:
    def test_defaults_validate(self):
        PipelineConfig().validate()

    def test_out_of_range_tunables_rejected(self):
        for key, value in (
            ("hostid.tail", "0.7"),
            ("cropper.guest_coverage", "1.4"),
            ("segmenter.max_gap", "-1"),
            ("split.by", "shard"),
        ):
            cfg = PipelineConfig()
            apply_override(cfg, key, value)
            with pytest.raises(ConfigurationError):
                cfg.validate()

    def test_ratio_sum_enforced(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({"split": {"ratios": [0.8, 0.1, 0.2]}})

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigurationError):
            config_from_dict({"segmenter": {"maximum_gap": 3}})
        with pytest.raises(ConfigurationError):
            config_from_dict({"mystery": {}})

    def test_flag_override_types(self):
        cfg = PipelineConfig()
        apply_override(cfg, "hostid.n_boot", "50")
        apply_override(cfg, "split.ratios", "0.7,0.2,0.1")
        apply_override(cfg, "hostid.tau_override", "0.55")
        assert cfg.hostid.n_boot == 50
        assert cfg.split.ratios == [0.7, 0.2, 0.1]
        assert cfg.hostid.tau_override == 0.55
        cfg.validate()


class TestCliSurface:
    def test_mod_sweep_prints_table(self, capsys):
        assert main(["mod-sweep", "--tokens", "4", "--features", "8"]) == 0
        out = capsys.readouterr().out
        lines = out.strip().splitlines()
        assert lines[0].startswith("guidance")
        assert len(lines) == 1 + 16
        first = lines[1].split("\t")
        assert first[0] == "0.00" and float(first[1]) == 0.0

    def test_make_fixture_command(self, tmp_path, capsys):
        assert main(["make-fixture", str(tmp_path / "fx"), "--seed", "3"]) == 0
        assert (tmp_path / "fx" / "config.yaml").exists()
        assert (tmp_path / "fx" / "ground_truth.json").exists()

    def test_stats_command_prints_table(self, pipeline_run, capsys, tmp_path):
        cfg, _, _ = pipeline_run
        root = Path(cfg.inputs.episodes).parent
        assert main(["stats", "--config", str(root / "config.yaml")]) == 0
        out = capsys.readouterr().out
        assert "clips\ttotal_hours\tduration_s" in out
