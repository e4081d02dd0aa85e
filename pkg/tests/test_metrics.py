import numpy as np
import pytest

from lift3d.errors import DimensionMismatch, MissingAzimuth
from lift3d.geometry import BBox
from lift3d.metrics import (
    ANGLE_TOL,
    AAVP_GRID,
    GTKeypoint,
    GroundTruthObject,
    ScoredPrediction,
    aavp,
    app,
    avp_binned,
    gt_keypoints,
    match_and_pr,
    seg_accuracy,
    viewpoint_bin,
)
from lift3d.spatial import KeypointCandidate

from oracles import aavp_oracle, ap_oracle, gt_keypoint_dicts, iou_affinity, keypoint_affinity, \
    micro_dataset, seg_oracle, vp_bin
from scenes import micro_to_lib

GT = GroundTruthObject("im", "car", BBox(0, 0, 10, 10), azimuth=0.0)


def pred(box, score=1.0, az=0.0, image="im"):
    return ScoredPrediction(image, "car", BBox(*box), score, az)


class TestMatchAndPR:
    def test_perfect(self):
        # IoU 0.8
        assert match_and_pr([pred((0, 0, 10, 8))], [GT]).ap == 1.0

    def test_below_threshold(self):
        assert match_and_pr([pred((0, 0, 4, 10))], [GT]).ap == 0.0

    def test_duplicate_is_fp_after_perfect_hit(self):
        curve = match_and_pr([pred((0, 0, 10, 10), 0.9), pred((0, 0, 10, 9), 0.8)], [GT])
        assert curve.tp.tolist() == [True, False]
        assert curve.ap == 1.0

    def test_other_image_never_matches(self):
        assert match_and_pr([pred((0, 0, 10, 10), image="other")], [GT]).ap == 0.0

    def test_no_ground_truth(self):
        assert match_and_pr([pred((0, 0, 10, 10))], []).ap == 0.0

    def test_difficult_excluded(self):
        hard = GroundTruthObject("im", "car", BBox(20, 20, 30, 30), difficult=True)
        curve = match_and_pr([pred((0, 0, 10, 10)), pred((20, 20, 30, 30), 0.5)], [GT, hard])
        assert curve.n_gt == 1 and curve.tp.tolist() == [True, False]

    def test_predicate_consumes_gt(self):
        a = pred((0, 0, 10, 10), 0.9, az=100)
        b = pred((0, 0, 10, 10), 0.8, az=0)
        curve = match_and_pr([a, b], [GT], lambda p, g: p.azimuth == g.azimuth)
        # the first claims the box but fails the predicate; the second finds nothing left
        assert curve.tp.tolist() == [False, False]

    def test_equal_score_duplicates_one_tp(self):
        boxes = [(0, 0, 10, 10), (0, 0, 10, 9), (1, 0, 10, 10)]
        for perm in ([0, 1, 2], [2, 0, 1], [1, 2, 0]):
            curve = match_and_pr([pred(boxes[i], 0.5) for i in perm], [GT])
            assert curve.tp.tolist() == [True, False, False]

    def test_monotone_score_transform(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            preds, gts, _ = micro_dataset(rng)
            lp, lg, _ = micro_to_lib(preds, gts, [])
            moved = [ScoredPrediction(p.image_id, p.cls, p.bbox, float(np.exp(3 * p.score) - 7), p.azimuth)
                     for p in lp]
            assert match_and_pr(lp, lg).ap == match_and_pr(moved, lg).ap

    def test_eleven_point_mode(self):
        other = GroundTruthObject("im", "car", BBox(50, 50, 60, 60))
        curve = match_and_pr([pred((0, 0, 10, 10))], [GT, other], ap_mode="11pt")
        assert curve.ap == pytest.approx(6 / 11)
        assert match_and_pr([pred((0, 0, 10, 10))], [GT, other]).ap == 0.5


class TestViewpoint:
    @pytest.mark.parametrize("az,expected", [(0, 0), (10, 0), (-45, 0), (44.999, 0), (45, 1), (90, 1),
                                             (314.9, 3), (315, 0), (359.9, 0)])
    def test_bins_centered_on_multiples(self, az, expected):
        assert viewpoint_bin(az, 4) == expected

    def test_same_bin_tp(self):
        assert avp_binned([pred((0, 0, 10, 10), az=10)], [GT], 4).ap == 1.0

    def test_other_bin_fp(self):
        assert avp_binned([pred((0, 0, 10, 10), az=90)], [GT], 4).ap == 0.0

    def test_missing_azimuth(self):
        with pytest.raises(MissingAzimuth):
            avp_binned([pred((0, 0, 10, 10), az=None)], [GT], 4)
        with pytest.raises(MissingAzimuth):
            aavp([pred((0, 0, 10, 10), az=None)], [GT])


class TestAAVP:
    def test_exact_azimuths(self):
        gts = [GT, GroundTruthObject("im", "car", BBox(50, 50, 60, 60), azimuth=123.0)]
        preds = [pred((0, 0, 10, 10), 0.9, 0.0), pred((50, 50, 60, 60), 0.3, 123.0), pred((80, 80, 90, 90), 0.5)]
        ap = match_and_pr(preds, gts).ap
        _, values, mean = aavp(preds, gts)
        assert np.all(values == ap) and mean == ap

    def test_single_error_of_thirty(self):
        _, values, mean = aavp([pred((0, 0, 10, 10), az=30)], [GT])
        assert np.all(values[:30] == 0) and np.all(values[30:] == 1)
        assert mean == pytest.approx(151 / 181, abs=1e-15)

    def test_default_grid(self):
        assert len(AAVP_GRID) == 181 and AAVP_GRID[0] == 0 and AAVP_GRID[-1] == 180

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            aavp([pred((0, 0, 10, 10))], [GT], grid=[0, 200])

    def test_structure_random(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            preds, gts, _ = micro_dataset(rng)
            lp, lg, _ = micro_to_lib(preds, gts, [])
            ap = match_and_pr(lp, lg).ap
            _, values, _ = aavp(lp, lg)
            assert np.all(np.diff(values) >= 0)
            assert values[-1] == ap
            for V in (4, 8, 16, 24):
                assert avp_binned(lp, lg, V).ap <= ap


class TestOracleEquivalence:
    def test_ap_family(self):
        rng = np.random.default_rng(2)
        for _ in range(150):
            preds, gts, kps = micro_dataset(rng)
            lp, lg, lk = micro_to_lib(preds, gts, kps)
            easy = [g for g in gts if not g["difficult"]]
            assert abs(match_and_pr(lp, lg).ap - ap_oracle(preds, easy, iou_affinity())) <= 1e-12
            V = int(rng.choice([4, 8, 16, 24]))
            want = ap_oracle(preds, easy, iou_affinity(),
                             lambda p, g: vp_bin(p["azimuth"], V) == vp_bin(g["azimuth"], V))
            assert abs(avp_binned(lp, lg, V).ap - want) <= 1e-12
            _, values, mean = aavp(lp, lg)
            want_values, want_mean = aavp_oracle(preds, easy, range(181), ANGLE_TOL)
            assert np.max(np.abs(values - want_values), initial=0) <= 1e-12
            assert abs(mean - want_mean) <= 1e-12
            curves = app(lk, gt_keypoints(lg))
            gk = gt_keypoint_dicts(gts)
            for name, curve in curves.items():
                want = ap_oracle([k for k in kps if k["name"] == name],
                                 [g for g in gk if g["name"] == name], keypoint_affinity(100, 25))
                assert abs(curve.ap - want) <= 1e-12


class TestAPP:
    def kp(self, x, y, score=1.0, name="wheel"):
        return KeypointCandidate(name, x, y, score, "im")

    def test_radius_scales_with_height(self):
        gt = [GTKeypoint("im", "wheel", 0.0, 0.0, 200.0)]
        assert app([self.kp(50, 0)], gt)["wheel"].ap == 1.0
        assert app([self.kp(51, 0)], gt)["wheel"].ap == 0.0
        assert app([self.kp(30, 40)], gt)["wheel"].ap == 1.0

    def test_exact_hit_any_p(self):
        gt = [GTKeypoint("im", "wheel", 5.0, 7.0, 10.0)]
        assert app([self.kp(5, 7)], gt, P=1e-9)["wheel"].ap == 1.0

    def test_nearest_unclaimed(self):
        gt = [GTKeypoint("im", "wheel", 0.0, 0.0, 100.0), GTKeypoint("im", "wheel", 10.0, 0.0, 100.0)]
        curve = app([self.kp(9, 0, 0.9), self.kp(1, 0, 0.8)], gt)["wheel"]
        assert curve.tp.tolist() == [True, True]

    def test_types_do_not_mix(self):
        gt = [GTKeypoint("im", "wheel", 0.0, 0.0, 100.0)]
        curves = app([self.kp(0, 0, name="light")], gt)
        assert curves["wheel"].ap == 0.0 and curves["light"].ap == 0.0

    def test_invisible_keypoints_skipped(self):
        g = GroundTruthObject("im", "car", BBox(0, 0, 10, 20), keypoints={"a": (1, 1, True), "b": (2, 2, False)})
        assert [(k.name, k.object_height) for k in gt_keypoints([g])] == [("a", 20.0)]


class TestSegmentation:
    def test_identity(self):
        m = np.random.default_rng(3).random((20, 30)) > 0.5
        assert seg_accuracy(m, m, BBox(2, 3, 25, 15)) == 1.0

    def test_half_box(self):
        gt = np.zeros((10, 10), dtype=bool)
        gt[:, :5] = True
        # pixel centers 0..9 lie inside the box
        assert seg_accuracy(np.zeros_like(gt), gt, BBox(0, 0, 9, 9)) == 0.5

    def test_matches_pixel_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            pred_m, gt_m = rng.random((64, 64)) > 0.5, rng.random((64, 64)) > 0.3
            x0, y0 = rng.uniform(0, 40, 2)
            box = BBox(x0, y0, x0 + rng.uniform(2, 23), y0 + rng.uniform(2, 23))
            assert seg_accuracy(pred_m, gt_m, box) == seg_oracle(pred_m, gt_m, box.as_list())

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            seg_accuracy(np.zeros((4, 4)), np.zeros((4, 5)), BBox(0, 0, 3, 3))
