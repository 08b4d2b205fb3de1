import json

import numpy as np
import pytest

from _metric_oracle import (
    bf_average_jaccard,
    bf_delta_avg_vis,
    bf_feature_age,
    bf_occlusion_accuracy,
    random_pair,
)
from tapfuse.errors import GridMismatch, ZeroTotalSpeed
from tapfuse.metrics import (
    EvalPair,
    average_jaccard,
    delta_avg_vis,
    evaluate,
    feature_age,
    occlusion_accuracy,
    pca_dispersion,
    smooth_gt,
    speed_weighted_success,
    track_ages,
)
from tapfuse.tracker import TrackSet

THRESHOLDS = (1.0, 2.0, 4.0, 8.0, 16.0)


def perfect_pair(q=3, t=20, image_height=64):
    rng = np.random.default_rng(0)
    times = np.arange(t, dtype=np.int64) * 1000
    pos = rng.uniform(0, image_height, size=(q, t, 2))
    vis = np.ones((q, t), dtype=np.int64)
    ref = TrackSet(times=times, positions=pos.copy(), visibility=vis.copy())
    pred = TrackSet(times=times, positions=pos.copy(), visibility=vis.copy())
    return EvalPair(predicted=pred, reference=ref, image_height=image_height)


class TestPositionMetrics:
    def test_perfect_prediction_scores_one(self):
        pair = perfect_pair()
        assert delta_avg_vis(pair, THRESHOLDS) == 1.0
        assert occlusion_accuracy(pair) == 1.0
        assert average_jaccard(pair, THRESHOLDS) == 1.0
        fa, efa = feature_age(pair)
        assert fa == 1.0 and efa == 1.0

    def test_inverted_visibility_gives_zero_oa(self):
        pair = perfect_pair()
        flipped = TrackSet(times=pair.predicted.times,
                           positions=pair.predicted.positions,
                           visibility=1 - pair.predicted.visibility)
        pair2 = EvalPair(predicted=flipped, reference=pair.reference,
                         image_height=pair.image_height)
        assert occlusion_accuracy(pair2) == 0.0

    def test_normalization_rescales_pixel_errors(self):
        # a 1 px error on a 64 px image is 4 units in 256-normalized space
        times = np.array([0, 1000])
        ref = TrackSet(times=times, positions=np.zeros((1, 2, 2)),
                       visibility=np.ones((1, 2), dtype=np.int64))
        pred_pos = np.zeros((1, 2, 2))
        pred_pos[0, :, 0] = 1.0
        pred = TrackSet(times=times, positions=pred_pos,
                        visibility=np.ones((1, 2), dtype=np.int64))
        pair = EvalPair(predicted=pred, reference=ref, image_height=64)
        assert delta_avg_vis(pair, (4.0,)) == 0.0
        assert delta_avg_vis(pair, (4.1,)) == 1.0

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_brute_force(self, seed):
        pair = random_pair(seed)
        assert delta_avg_vis(pair, THRESHOLDS) == pytest.approx(
            bf_delta_avg_vis(pair, THRESHOLDS), abs=1e-9)
        assert occlusion_accuracy(pair) == pytest.approx(
            bf_occlusion_accuracy(pair), abs=1e-9)
        assert average_jaccard(pair, THRESHOLDS) == pytest.approx(
            bf_average_jaccard(pair, THRESHOLDS), abs=1e-9)
        fa, efa = feature_age(pair, 8.0)
        bfa, befa = bf_feature_age(pair, 8.0)
        assert fa == pytest.approx(bfa, abs=1e-9)
        assert efa == pytest.approx(befa, abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_jaccard_never_exceeds_delta(self, seed):
        pair = random_pair(seed + 100)
        assert average_jaccard(pair, THRESHOLDS) \
            <= delta_avg_vis(pair, THRESHOLDS) + 1e-12

    def test_query_permutation_invariance(self):
        pair = random_pair(7)
        perm = np.random.default_rng(1).permutation(10)
        shuffled = EvalPair(
            predicted=TrackSet(times=pair.predicted.times,
                               positions=pair.predicted.positions[perm],
                               visibility=pair.predicted.visibility[perm]),
            reference=TrackSet(times=pair.reference.times,
                               positions=pair.reference.positions[perm],
                               visibility=pair.reference.visibility[perm]),
            image_height=pair.image_height)
        for fn in (delta_avg_vis, average_jaccard):
            assert fn(pair, THRESHOLDS) == pytest.approx(
                fn(shuffled, THRESHOLDS), abs=1e-12)
        assert occlusion_accuracy(pair) == occlusion_accuracy(shuffled)

    def test_delta_monotone_in_threshold(self):
        pair = random_pair(8)
        vals = [delta_avg_vis(pair, (th,)) for th in THRESHOLDS]
        assert vals == sorted(vals)

    def test_mismatched_grids_rejected(self):
        a, b = perfect_pair(t=20), perfect_pair(t=10)
        with pytest.raises(GridMismatch):
            EvalPair(predicted=a.predicted, reference=b.reference,
                     image_height=64)


class TestAges:
    def drifting_pair(self, t=21, drift_px=1.0):
        times = np.arange(t, dtype=np.int64) * 1000
        ref = TrackSet(times=times, positions=np.zeros((1, t, 2)),
                       visibility=np.ones((1, t), dtype=np.int64))
        pos = np.zeros((1, t, 2))
        pos[0, :, 0] = drift_px * np.arange(t)
        pred = TrackSet(times=times, positions=pos,
                        visibility=np.ones((1, t), dtype=np.int64))
        return EvalPair(predicted=pred, reference=ref, image_height=64)

    def test_linear_drift_age_is_analytic(self):
        # error = step index in px; threshold 8 first exceeded at step 9,
        # so the track survives through step 8 of 20 -> age 0.4
        pair = self.drifting_pair()
        ages = track_ages(pair, err_threshold=8.0)
        assert ages[0] == pytest.approx(8 / 20)

    def test_immediate_failure_counts_zero_and_skews_fa(self):
        t = 5
        times = np.arange(t, dtype=np.int64) * 1000
        ref = TrackSet(times=times, positions=np.zeros((2, t, 2)),
                       visibility=np.ones((2, t), dtype=np.int64))
        pos = np.zeros((2, t, 2))
        pos[1, :, 0] = 100.0  # fails at step 0
        pred = TrackSet(times=times, positions=pos,
                        visibility=np.ones((2, t), dtype=np.int64))
        pair = EvalPair(predicted=pred, reference=ref, image_height=64)
        fa, efa = feature_age(pair, 8.0)
        assert fa == 1.0          # only the surviving track
        assert efa == 0.5         # immediate failure averaged in at 0


class TestSmoothGt:
    def test_spike_replaced_by_midpoint(self):
        pos = np.array([[0.0, 0.0], [1.0, 0.0], [50.0, 50.0], [3.0, 0.0],
                        [4.0, 0.0]])
        out = smooth_gt(pos, image_height=64)
        np.testing.assert_allclose(out[2], [2.0, 0.0])
        np.testing.assert_allclose(out[[0, 1, 3, 4]], pos[[0, 1, 3, 4]])

    def test_gradual_motion_untouched(self):
        pos = np.cumsum(np.full((10, 2), 2.0), axis=0)
        np.testing.assert_array_equal(smooth_gt(pos, 64), pos)

    def test_one_sided_jump_kept(self):
        # a genuine step change (large jump, then small steps) is not a spike
        pos = np.array([[0.0, 0.0], [50.0, 0.0], [51.0, 0.0], [52.0, 0.0]])
        np.testing.assert_array_equal(smooth_gt(pos, 64), pos)

    def test_single_pass_uses_original_neighbors(self):
        pos = np.array([[0.0, 0.0], [50.0, 0.0], [0.0, 50.0], [1.0, 1.0],
                        [2.0, 2.0]])
        out = smooth_gt(pos, image_height=64)
        # both interior spikes interpolate from the *original* neighbors
        np.testing.assert_allclose(out[1], 0.5 * (pos[0] + pos[2]))
        np.testing.assert_allclose(out[2], 0.5 * (pos[1] + pos[3]))

    def test_short_tracks_returned_as_is(self):
        pos = np.array([[0.0, 0.0], [90.0, 90.0]])
        np.testing.assert_array_equal(smooth_gt(pos, 64), pos)


class TestSpeedWeightedSuccess:
    def test_hand_case(self):
        rve = np.array([0.1, 0.5])
        speed = np.array([1.0, 3.0])
        grid = np.linspace(0.0, 1.0, 101)
        curve, auc = speed_weighted_success(rve, speed, grid)
        assert curve[0] == 0.0                       # xi = 0
        assert curve[20] == pytest.approx(0.25)      # xi = 0.2: only rve=0.1
        assert curve[-1] == 1.0                      # xi = 1
        want_curve = np.array([(1.0 * (0.1 < xi) + 3.0 * (0.5 < xi)) / 4.0
                               for xi in grid])
        np.testing.assert_allclose(curve, want_curve)
        assert auc == pytest.approx(np.trapezoid(want_curve, grid))

    def test_default_grid_and_monotonicity(self):
        rng = np.random.default_rng(2)
        rve = rng.uniform(0, 1, 50)
        speed = rng.uniform(0.1, 2.0, 50)
        curve, auc = speed_weighted_success(rve, speed)
        assert len(curve) == 101
        assert np.all(np.diff(curve) >= 0)
        assert 0.0 <= auc <= 1.0

    def test_zero_speed_rejected(self):
        with pytest.raises(ZeroTotalSpeed):
            speed_weighted_success(np.array([0.5]), np.array([0.0]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(GridMismatch):
            speed_weighted_success(np.zeros(3), np.ones(4))


class TestPcaDispersion:
    def test_matches_eigendecomposition(self):
        rng = np.random.default_rng(3)
        feats = rng.normal(size=(6, 40, 8)) * np.array([5, 3, 1, 1, 1, 1, 1, 1])
        proj, means, covs, axes = pca_dispersion(feats, seed=0)
        pooled = feats.reshape(-1, 8)
        center = pooled.mean(axis=0)
        cov = np.cov(pooled - center, rowvar=False)
        evals, evecs = np.linalg.eigh(cov)
        top2 = evecs[:, ::-1][:, :2].T
        for i in range(2):
            assert abs(axes[i] @ top2[i]) == pytest.approx(1.0, abs=1e-8)
        want = (feats - center) @ top2.T
        sign = np.sign(np.sum(axes * top2, axis=1))
        np.testing.assert_allclose(proj, want * sign, atol=1e-7)

    def test_projection_statistics(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(4, 30, 6))
        proj, means, covs, _ = pca_dispersion(feats)
        for qi in range(4):
            np.testing.assert_allclose(means[qi], proj[qi].mean(axis=0),
                                       atol=1e-12)
            np.testing.assert_allclose(covs[qi], np.cov(proj[qi], rowvar=False),
                                       atol=1e-9)

    def test_rank_one_data_zeroes_second_axis(self):
        rng = np.random.default_rng(5)
        direction = np.array([1.0, 2.0, -1.0, 0.5])
        feats = rng.normal(size=(3, 20, 1)) * direction
        _, _, _, axes = pca_dispersion(feats)
        assert abs(axes[0] @ direction / np.linalg.norm(direction)) \
            == pytest.approx(1.0, abs=1e-8)
        np.testing.assert_array_equal(axes[1], 0.0)


class TestReport:
    def test_evaluate_schema(self):
        report = evaluate(random_pair(9), THRESHOLDS, 8.0)
        data = json.loads(report.to_json())
        assert set(data) == {"aj", "delta_avg_vis", "oa", "fa", "efa", "auc_v",
                             "thresholds", "per_threshold", "per_track"}
        assert data["thresholds"] == list(THRESHOLDS)
        assert set(data["per_threshold"]) == {"1", "2", "4", "8", "16"}
        assert len(data["per_track"]) == 10
        csv_lines = report.to_csv().strip().split("\r\n" if "\r" in
                                                  report.to_csv() else "\n")
        assert csv_lines[0].startswith("aj,")
        assert len(csv_lines) == 2

    def test_evaluate_perfect_pair_all_ones(self):
        report = evaluate(perfect_pair(), THRESHOLDS, 8.0)
        assert report.aj == 1.0
        assert report.delta_avg_vis == 1.0
        assert report.oa == 1.0
        assert report.fa == 1.0 and report.efa == 1.0
