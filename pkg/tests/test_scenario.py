import math

import numpy as np
import pytest

from lanegeo.lanes import InsufficientData, detect_lanes, estimate_width
from lanegeo.losses import loss_total
from lanegeo.metanet import SceneFeatures
from lanegeo.scenario import (
    LaneSpec,
    SceneSpec,
    TrafficSpec,
    benchmark_scenes,
    extract_features,
    generate_tracks,
    oracle_params,
    reference_model,
)

SMALL_GRID = {
    "smoothing": [5.0, 20.0],
    "angle_threshold": [0.5],
    "bin_count": [32],
    "peak_prominence": [0.05, 0.2],
}


def two_lane_spec(tracks_per_lane=40, noise_sigma=None, seed=0):
    lanes = tuple(
        LaneSpec(control_points=((x, 0.0), (x, 50.0)), width=3.5) for x in (0.0, 3.7)
    )
    return SceneSpec(
        scene_id="test-two-lane",
        groups=(lanes,),
        traffic=TrafficSpec(
            tracks_per_lane=tracks_per_lane,
            samples_per_track=60,
            noise_sigma=noise_sigma,
        ),
        seed=seed,
    )


class TestSceneSpec:
    def test_width_range_enforced(self):
        with pytest.raises(ValueError):
            SceneSpec(
                scene_id="bad",
                groups=((LaneSpec(((0, 0), (0, 10)), width=2.0),),),
            )

    def test_separation_enforced(self):
        lanes = (
            LaneSpec(((0.0, 0.0), (0.0, 10.0)), width=3.5),
            LaneSpec(((1.0, 0.0), (1.0, 10.0)), width=3.5),
        )
        with pytest.raises(ValueError):
            SceneSpec(scene_id="bad", groups=(lanes,))

    def test_json_round_trip(self, tmp_path):
        spec = two_lane_spec()
        path = tmp_path / "scene.json"
        spec.save(path)
        assert SceneSpec.load(path) == spec


class TestGenerateTracks:
    def test_zero_noise_tracks_on_centerline(self):
        spec = two_lane_spec(tracks_per_lane=3, noise_sigma=0.0)
        tracks = generate_tracks(spec)
        for tr in tracks:
            x0 = 0.0 if ":l0:" in tr.track_id else 3.7
            assert tr.xy[:, 0] == pytest.approx(np.full(len(tr.xy), x0))

    def test_same_seed_identical(self):
        a = generate_tracks(two_lane_spec(seed=5))
        b = generate_tracks(two_lane_spec(seed=5))
        for ta, tb in zip(a, b):
            assert ta.track_id == tb.track_id
            assert np.array_equal(ta.xy, tb.xy)

    def test_width_estimator_consistency(self):
        # residual scatter is sigma = width/2, so the 2-sigma estimator is
        # unbiased for the declared width
        spec = two_lane_spec(tracks_per_lane=17)  # 17 * 60 > 1000 samples
        tracks = [tr for tr in generate_tracks(spec) if ":l0:" in tr.track_id]
        residuals = np.concatenate([tr.xy[:, 0] for tr in tracks])
        assert estimate_width(residuals) == pytest.approx(3.5, rel=0.05)

    def test_track_count(self):
        spec = two_lane_spec(tracks_per_lane=7)
        assert len(generate_tracks(spec)) == 14


class TestReferenceModel:
    def test_self_loss_zero(self):
        ref = reference_model(two_lane_spec())
        assert loss_total(ref, ref).total == 0.0

    def test_lane_count_matches_spec(self):
        ref = reference_model(two_lane_spec())
        assert len(ref.lanes) == 2
        assert ref.lane_count_per_group == {0: 2}

    def test_boundary_offsets(self):
        ref = reference_model(two_lane_spec())
        lane = ref.lanes[0]
        assert lane.left_boundary.pts[:, 0] == pytest.approx(np.full(64, -1.75))
        assert lane.right_boundary.pts[:, 0] == pytest.approx(np.full(64, 1.75))


class TestExtractFeatures:
    def test_uniform_speed(self):
        spec = two_lane_spec(tracks_per_lane=3, noise_sigma=0.0)
        spec = SceneSpec(
            scene_id=spec.scene_id,
            groups=spec.groups,
            traffic=TrafficSpec(tracks_per_lane=3, noise_sigma=0.0, speed_range=(14.0, 14.0)),
            seed=0,
        )
        f = extract_features(generate_tracks(spec), hour_of_day=12.0)
        assert f.mean_speed == pytest.approx(14.0)
        assert f.speed_std == pytest.approx(0.0, abs=1e-9)

    def test_hour_encoding(self):
        tracks = generate_tracks(two_lane_spec(tracks_per_lane=3))
        f0 = extract_features(tracks, hour_of_day=0.0)
        f12 = extract_features(tracks, hour_of_day=12.0)
        assert (f0.hour_sin, f0.hour_cos) == pytest.approx((0.0, 1.0))
        assert (f12.hour_sin, f12.hour_cos) == pytest.approx((0.0, -1.0), abs=1e-12)

    def test_matches_independent_recomputation(self):
        tracks = generate_tracks(two_lane_spec(tracks_per_lane=5))
        f = extract_features(tracks, hour_of_day=8.0)
        speeds = [tr.mean_speed for tr in tracks]
        assert f.mean_speed == pytest.approx(np.mean(speeds))
        assert f.speed_std == pytest.approx(np.std(speeds))
        assert f.track_count == len(tracks)

    def test_empty_rejected(self):
        with pytest.raises(InsufficientData):
            extract_features([], hour_of_day=0.0)


class TestOracleParams:
    def test_clean_scene_achieves_zero_lane_num(self):
        spec = two_lane_spec()
        tracks = generate_tracks(spec)
        ref = reference_model(spec)
        theta, achieved = oracle_params(tracks, ref, grid=SMALL_GRID)
        detected = detect_lanes(tracks, theta)
        breakdown = loss_total(detected, ref)
        assert breakdown.lane_num == 0.0
        assert achieved == pytest.approx(breakdown.total)

    def test_single_point_grid(self):
        spec = two_lane_spec()
        tracks = generate_tracks(spec)
        ref = reference_model(spec)
        grid = {
            "smoothing": [5.0],
            "angle_threshold": [0.5],
            "bin_count": [32],
            "peak_prominence": [0.1],
        }
        theta, _ = oracle_params(tracks, ref, grid=grid)
        assert theta.smoothing == 5.0
        assert theta.bin_count == 32

    def test_deterministic(self):
        spec = two_lane_spec()
        tracks = generate_tracks(spec)
        ref = reference_model(spec)
        t1, l1 = oracle_params(tracks, ref, grid=SMALL_GRID)
        t2, l2 = oracle_params(tracks, ref, grid=SMALL_GRID)
        assert t1 == t2 and l1 == l2


class TestBenchmarkScenes:
    def test_split_shape(self):
        seen, holdout = benchmark_scenes()
        assert len(seen) == 4
        assert len(holdout) >= 2
        ids = [s.scene_id for s in seen + holdout]
        assert len(set(ids)) == len(ids)

    def test_lane_counts_span_two_to_four(self):
        seen, _ = benchmark_scenes()
        counts = sorted(sum(len(g) for g in s.groups) for s in seen)
        assert counts[0] == 2 and counts[-1] == 4

    def test_has_curved_and_bidirectional(self):
        seen, holdout = benchmark_scenes()
        multi_group = [s for s in seen if len(s.groups) > 1]
        assert multi_group
        curved = [
            s
            for s in seen + holdout
            if any(len(l.control_points) > 2 for g in s.groups for l in g)
        ]
        assert curved
