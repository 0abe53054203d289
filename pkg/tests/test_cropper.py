import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twoshot.cropper import (
    CropWindow,
    GUEST_FRAMES,
    HOST_FRAMES,
    InteractionPair,
    PairRejection,
    build_crop_window,
    derive_pair,
    filter_pair,
    iou,
    iqr_inliers,
    load_pair,
    load_render_plan,
    plan_render,
    render_commands,
    run_render_commands,
    save_pair,
    save_render_plan,
    select_dominant_trajectory,
)
from twoshot.datamodel import BBox, EpisodeMeta
from twoshot.errors import ValidationError
from twoshot.hostid import Assignment, IdentityTrack

from oracles import (
    crop_window_oracle,
    exhaustive_trajectory,
    iou_pixel_count,
    iqr_inlier_indices,
)

EPISODE = EpisodeMeta("ep", "media/ep.mp4", 25.0, 5000, 1000, 1000, 200.0)


class TestIoU:
    def test_identical_boxes(self):
        a = BBox(3, 4, 10, 12)
        assert iou(a, a) == 1.0

    def test_disjoint_boxes(self):
        assert iou(BBox(0, 0, 10, 10), BBox(100, 100, 5, 5)) == 0.0

    def test_fixture_pair_equals_one_third(self):
        a, b = BBox(0, 0, 10, 10), BBox(5, 0, 10, 10)
        assert abs(iou(a, b) - 1 / 3) <= 1e-12
        assert abs(iou(a, b) - iou_pixel_count(a, b)) <= 1e-12

    def test_random_integer_boxes_match_pixel_counting(self):
        rng = np.random.default_rng(21)
        for _ in range(60):
            a = BBox(*(int(v) for v in rng.integers(0, 20, 2)), *(int(v) for v in rng.integers(1, 15, 2)))
            b = BBox(*(int(v) for v in rng.integers(0, 20, 2)), *(int(v) for v in rng.integers(1, 15, 2)))
            assert iou(a, b) == pytest.approx(iou_pixel_count(a, b), abs=1e-12)


class TestDominantTrajectory:
    def test_single_box_frames_pass_through(self):
        frames = {0: [BBox(0, 0, 10, 10)], 1: [BBox(1, 0, 10, 10)], 3: [BBox(2, 0, 10, 10)]}
        picked = select_dominant_trajectory(frames)
        assert picked == {0: frames[0][0], 1: frames[1][0], 3: frames[3][0]}
        assert 2 not in picked

    def test_first_frame_prefers_largest_area(self):
        frames = {0: [BBox(0, 0, 5, 5), BBox(50, 0, 20, 20)]}
        assert select_dominant_trajectory(frames)[0] == BBox(50, 0, 20, 20)

    def test_selection_stays_on_initial_track(self):
        # two persistent parallel tracks; the larger one anchors the chain
        track_a = {f: BBox(100 + f, 100, 20, 20) for f in range(8)}
        track_b = {f: BBox(400 + f, 100, 12, 12) for f in range(8)}
        frames = {f: [track_a[f], track_b[f]] for f in range(8)}
        picked = select_dominant_trajectory(frames)
        assert picked == track_a
        oracle = exhaustive_trajectory({f: list(v) for f, v in frames.items()}, iou)
        assert picked == oracle

    def test_matches_exhaustive_oracle_on_separated_fixtures(self):
        # the large track wobbles least, so its path maximizes the IoU sum
        rng = np.random.default_rng(22)
        for _ in range(20):
            n_frames = int(rng.integers(2, 8))
            tracks = []
            for base, side, wobble in ((50.0, 30.0, 0.5), (400.0, 22.0, 4.0), (800.0, 16.0, 4.0)):
                tracks.append(
                    {
                        f: BBox(base + float(rng.uniform(-wobble, wobble)), 100.0, side, side)
                        for f in range(n_frames)
                    }
                )
            frames = {
                f: [t[f] for t in tracks[: int(rng.integers(2, 4))]] for f in range(n_frames)
            }
            picked = select_dominant_trajectory(frames)
            oracle = exhaustive_trajectory(frames, iou)
            assert picked == oracle

    def test_output_boxes_come_from_input(self):
        rng = np.random.default_rng(23)
        frames = {
            f: [
                BBox(float(rng.uniform(0, 500)), float(rng.uniform(0, 500)), 10 + f, 10)
                for _ in range(int(rng.integers(1, 4)))
            ]
            for f in range(20)
        }
        picked = select_dominant_trajectory(frames)
        for f, box in picked.items():
            assert box in frames[f]


class TestIqrInliers:
    def boxes_at(self, centers_x, w=10.0, h=10.0):
        return [BBox(cx - w / 2, 50.0, w, h) for cx in centers_x]

    def test_identical_boxes_all_inliers(self):
        boxes = self.boxes_at([100.0] * 8)
        assert iqr_inliers(boxes) == boxes

    def test_single_jump_removed(self):
        boxes = self.boxes_at([100.0] * 20 + [500.0])
        survivors = iqr_inliers(boxes)
        assert len(survivors) == 20
        assert all(b.cx == 100.0 for b in survivors)
        oracle = iqr_inlier_indices(boxes, 1.5)
        assert oracle == set(range(20))

    def test_huge_k_keeps_everything(self):
        boxes = self.boxes_at([10.0, 100.0, 500.0, 900.0, 50.0])
        assert iqr_inliers(boxes, k=1e9) == boxes

    def test_fewer_than_four_passthrough_with_warning(self):
        boxes = self.boxes_at([1.0, 2.0, 900.0])
        with pytest.warns(UserWarning):
            assert iqr_inliers(boxes) == boxes

    def test_matches_quantile_arithmetic_oracle(self):
        rng = np.random.default_rng(24)
        for _ in range(200):
            n = int(rng.integers(4, 40))
            boxes = [
                BBox(
                    float(rng.uniform(0, 800)),
                    float(rng.uniform(0, 800)),
                    float(rng.uniform(5, 120)),
                    float(rng.uniform(5, 120)),
                )
                for _ in range(n)
            ]
            k = float(rng.choice([0.5, 1.0, 1.5, 3.0]))
            survivors = iqr_inliers(boxes, k=k)
            expected = iqr_inlier_indices(boxes, k)
            assert [boxes[i] for i in sorted(expected)] == survivors

    def test_scale_equivariance(self):
        rng = np.random.default_rng(25)
        for scale in (0.5, 2.0, 4.0):  # power-of-two scales are float-exact
            boxes = [
                BBox(
                    float(rng.integers(0, 500)),
                    float(rng.integers(0, 500)),
                    float(rng.integers(4, 60)),
                    float(rng.integers(4, 60)),
                )
                for _ in range(25)
            ]
            scaled = [BBox(b.x * scale, b.y * scale, b.w * scale, b.h * scale) for b in boxes]
            kept = {boxes.index(b) for b in iqr_inliers(boxes)}
            kept_scaled = {scaled.index(b) for b in iqr_inliers(scaled)}
            assert kept == kept_scaled


class TestBuildCropWindow:
    def test_golden_single_box(self):
        window = build_crop_window([BBox(100, 100, 100, 100)], (1000, 1000))
        assert (window.x, window.y, window.side) == (85.0, 111.0, 130.0)

    def test_square_union_far_from_borders(self):
        window = build_crop_window([BBox(400, 400, 80, 80)], (2000, 2000))
        assert window.side == 80 * 1.3

    def test_bottom_edge_clamps_upward(self):
        window = build_crop_window([BBox(450, 950, 40, 40)], (1000, 1000))
        assert window.y + window.side <= 1000
        assert window.x >= 0 and window.y >= 0

    def test_oversized_union_shrinks_to_frame(self):
        window = build_crop_window([BBox(0, 0, 900, 100)], (1000, 600))
        assert window.side == 600.0
        assert 0 <= window.x <= 1000 - 600

    def test_scripted_oracle_cases_bit_exact(self):
        rng = np.random.default_rng(26)
        cases = []
        for _ in range(20):
            n = int(rng.integers(1, 6))
            boxes = [
                BBox(
                    float(rng.uniform(0, 900)),
                    float(rng.uniform(0, 900)),
                    float(rng.uniform(10, 300)),
                    float(rng.uniform(10, 300)),
                )
                for _ in range(n)
            ]
            cases.append(boxes)
        # clamping cases on every edge
        cases.append([BBox(980, 500, 15, 15)])
        cases.append([BBox(2, 2, 10, 10)])
        cases.append([BBox(500, 980, 18, 12)])
        for boxes in cases:
            window = build_crop_window(boxes, (1000, 1000))
            assert (window.x, window.y, window.side) == crop_window_oracle(boxes, (1000, 1000))

    @given(
        x=st.floats(0, 900),
        y=st.floats(0, 900),
        w=st.floats(1, 800),
        h=st.floats(1, 800),
    )
    @settings(max_examples=300, deadline=None)
    def test_always_square_and_in_frame(self, x, y, w, h):
        window = build_crop_window([BBox(x, y, w, h)], (1200, 1000))
        assert window.side <= 1000
        assert 0 <= window.x and window.x + window.side <= 1200 + 1e-9
        assert 0 <= window.y and window.y + window.side <= 1000 + 1e-9

    def test_contains_scaled_horizontal_extent_when_it_fits(self):
        rng = np.random.default_rng(27)
        for _ in range(200):
            boxes = [
                BBox(
                    float(rng.uniform(100, 700)),
                    float(rng.uniform(100, 700)),
                    float(rng.uniform(5, 100)),
                    float(rng.uniform(5, 100)),
                )
                for _ in range(int(rng.integers(1, 5)))
            ]
            window = build_crop_window(boxes, (2000, 2000))
            x0 = min(b.x for b in boxes)
            x1 = max(b.x + b.w for b in boxes)
            cx = (x0 + x1) / 2
            half = (x1 - x0) * 1.3 / 2
            if half * 2 <= 2000:
                assert window.x <= cx - half + 1e-9
                assert cx + half <= window.x + window.side + 1e-9


def track_with_coverage(guest_frames_present, host_frames_present, t1=100,
                        guest_area=100.0, host_area=100.0):
    """IdentityTrack over [t1-64, t1+81) with exact per-role frame counts."""
    track = IdentityTrack(clip_id="clip")
    side_g = guest_area ** 0.5
    side_h = host_area ** 0.5
    for i, frame in enumerate(range(t1 - GUEST_FRAMES, t1)):
        entries = []
        if i < guest_frames_present:
            entries.append(Assignment(2, BBox(10, 10, side_g, side_g), "guest_0"))
        track.assignments[frame] = tuple(entries)
    for i, frame in enumerate(range(t1, t1 + HOST_FRAMES)):
        entries = []
        if i < host_frames_present:
            entries.append(Assignment(1, BBox(500, 10, side_h, side_h), "host"))
        track.assignments[frame] = tuple(entries)
    return track


class TestFilterPair:
    def test_threshold_arithmetic_accept(self):
        track = track_with_coverage(45, 69, host_area=300.0)
        decision = filter_pair(track, 100, 0, 300)
        assert decision.accepted
        assert decision.guest_coverage == pytest.approx(45 / 64)
        assert decision.host_coverage == pytest.approx(69 / 81)
        assert decision.area_ratio == pytest.approx(3.0)

    def test_guest_coverage_boundary(self):
        accept = filter_pair(track_with_coverage(45, 81), 100, 0, 300)
        reject = filter_pair(track_with_coverage(44, 81), 100, 0, 300)
        assert accept.accepted
        assert not reject.accepted and reject.reasons == ("guest-coverage",)

    def test_host_coverage_boundary(self):
        accept = filter_pair(track_with_coverage(64, 69), 100, 0, 300)
        reject = filter_pair(track_with_coverage(64, 68), 100, 0, 300)
        assert accept.accepted
        assert not reject.accepted and reject.reasons == ("host-coverage",)

    def test_area_ratio_boundary(self):
        at_limit = filter_pair(track_with_coverage(64, 81, host_area=1000.0), 100, 0, 300)
        over = filter_pair(track_with_coverage(64, 81, host_area=1100.0), 100, 0, 300)
        assert at_limit.accepted  # exactly 10:1 passes
        assert not over.accepted and over.reasons == ("area-ratio",)

    def test_all_failures_listed(self):
        decision = filter_pair(track_with_coverage(10, 10, host_area=2000.0), 100, 0, 300)
        assert set(decision.reasons) == {"guest-coverage", "host-coverage", "area-ratio"}

    def test_window_out_of_bounds_names_window(self):
        track = track_with_coverage(64, 81)
        with pytest.raises(ValidationError, match="guest window"):
            filter_pair(track, 50, 0, 300)
        with pytest.raises(ValidationError, match="host window"):
            filter_pair(track, 100, 0, 150)

    def test_monotone_in_coverage(self):
        # adding covered frames can only flip reject -> accept
        previous_accepted = False
        for guest_present in range(40, 65):
            decision = filter_pair(track_with_coverage(guest_present, 81), 100, 0, 300)
            if previous_accepted:
                assert decision.accepted
            previous_accepted = decision.accepted


class TestDerivePairAreaSource:
    def wandering_guest_track(self):
        # tiny guest face roaming widely vs a big static host face: the raw
        # face-area ratio is extreme while the crop windows end up comparable
        track = IdentityTrack(clip_id="clip")
        for i, frame in enumerate(range(100 - GUEST_FRAMES, 100)):
            x = 10.0 + (i % 32) * 12.0
            track.assignments[frame] = (Assignment(2, BBox(x, 40.0 + (i % 2) * 150, 10, 10), "guest_0"),)
        for frame in range(100, 100 + HOST_FRAMES):
            track.assignments[frame] = (Assignment(1, BBox(600, 100, 60, 60), "host"),)
        return track

    def test_face_and_crop_modes_disagree_on_designed_geometry(self):
        track = self.wandering_guest_track()
        face_mode = derive_pair(track, 100, 0, 300, EPISODE, max_area_ratio=10.0, area_source="face")
        assert isinstance(face_mode, PairRejection)
        assert face_mode.reasons == ("area-ratio",)
        crop_mode = derive_pair(track, 100, 0, 300, EPISODE, max_area_ratio=10.0, area_source="crop")
        assert not isinstance(crop_mode, PairRejection)

    def test_crop_mode_rejects_extreme_window_imbalance(self):
        track = track_with_coverage(64, 81, guest_area=100.0, host_area=3600.0)
        crop_mode = derive_pair(track, 100, 0, 300, EPISODE, max_area_ratio=10.0, area_source="crop")
        assert isinstance(crop_mode, PairRejection)
        assert crop_mode.reasons == ("area-ratio",)


class TestRenderPlanning:
    def make_pair(self, gap_mask=None):
        gap = gap_mask or tuple(False for _ in range(GUEST_FRAMES))
        return InteractionPair(
            pair_id="clip-p100",
            clip_id="clip",
            guest_window=(36, 100),
            host_window=(100, 181),
            guest_crop=CropWindow(10.0, 20.0, 128.0),
            host_crop=CropWindow(500.0, 20.0, 130.0),
            guest_coverage=1.0,
            host_coverage=1.0,
            gap_mask=gap,
        )

    def test_fully_visible_guest_has_empty_blackout(self):
        plan = plan_render(self.make_pair(), EPISODE)
        assert plan.outputs[0].blackout == ()

    def test_missing_frames_become_blackout_list(self):
        gap = tuple(10 <= i <= 14 for i in range(GUEST_FRAMES))
        plan = plan_render(self.make_pair(gap), EPISODE)
        assert plan.outputs[0].blackout == (10, 11, 12, 13, 14)
        assert plan.outputs[1].blackout == ()

    def test_plan_carries_fixed_encode_parameters(self):
        plan = plan_render(self.make_pair(), EPISODE)
        assert plan.fps == 25
        assert plan.crf == 18
        assert plan.video_codec == "h264"
        assert plan.audio_rate_hz == 16000
        assert plan.audio_channels == 1
        assert [o.role for o in plan.outputs] == ["guest", "host"]

    def test_plan_round_trip(self, tmp_path):
        gap = tuple(i in (3, 4, 9) for i in range(GUEST_FRAMES))
        plan = plan_render(self.make_pair(gap), EPISODE)
        save_render_plan(plan, tmp_path / "p.plan")
        assert load_render_plan(tmp_path / "p.plan") == plan

    def test_pair_round_trip(self, tmp_path):
        pair = self.make_pair(tuple(i == 0 for i in range(GUEST_FRAMES)))
        save_pair(pair, tmp_path / "p.pair")
        loaded = load_pair(tmp_path / "p.pair")
        assert loaded == pair

    def test_run_render_commands_with_injected_runner(self):
        plan = plan_render(self.make_pair(), EPISODE)
        commands = render_commands(plan, "/data")
        seen = []

        def runner(command):
            seen.append(command)
            return 0

        codes = run_render_commands(commands, workers=2, runner=runner)
        assert codes == [0, 0]
        assert sorted(seen) == sorted(commands)

    def test_render_commands_echo_plan_parameters(self):
        gap = tuple(10 <= i <= 12 for i in range(GUEST_FRAMES))
        plan = plan_render(self.make_pair(gap), EPISODE)
        guest_cmd, host_cmd = render_commands(plan, "/data")
        assert "-crf 18" in guest_cmd and "-ar 16000 -ac 1" in guest_cmd
        assert "fps=25" in guest_cmd
        assert "drawbox=c=black:t=fill:enable='between(n,10,12)'" in guest_cmd
        assert "drawbox" not in host_cmd
        assert "/data/media/ep.mp4" in guest_cmd
        assert "trim=start_frame=36:end_frame=100" in guest_cmd
