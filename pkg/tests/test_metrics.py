"""OKS, average precision, and PCKh against loop and brute-force oracles."""

from __future__ import annotations

import logging

import numpy as np
import pytest

from oracles import ap_interp_loop, exhaustive_match_flags, oks_loop
from rsnlab.codec import KeypointSet, load_skeleton
from rsnlab.errors import DataError
from rsnlab.metrics import (
    OKS_THRESHOLDS,
    EvalReport,
    PoseAnnotation,
    PosePrediction,
    average_precision,
    oks,
    pckh,
)


def kps(xy, vis=2.0, score=1.0, bbox=(0.0, 0.0, 100.0, 100.0)):
    xy = np.asarray(xy, dtype=np.float64)
    vis = np.broadcast_to(np.asarray(vis, dtype=np.float64), len(xy))
    score = np.broadcast_to(np.asarray(score, dtype=np.float64), len(xy))
    return KeypointSet(np.column_stack([xy, score, vis]), bbox=bbox)


def make_ap_case(rng, k_count=5, max_each=6):
    """A small multi-pose matching problem with spread-out OKS values."""
    k = np.full(k_count, 0.1)
    n_gt = int(rng.integers(1, max_each + 1))
    n_pred = int(rng.integers(0, max_each + 1))
    gts, preds = [], []
    centers = rng.uniform(100, 900, size=(max(n_gt, n_pred), 2))
    for g in range(n_gt):
        xy = centers[g] + rng.uniform(-40, 40, size=(k_count, 2))
        gts.append(PoseAnnotation(kps(xy), area=10_000.0, image_id=g % 2, id=g))
    for p in range(n_pred):
        base = centers[p % n_gt] + rng.uniform(-40, 40, size=(k_count, 2))
        noise = rng.uniform(2, 30) * rng.standard_normal((k_count, 2))
        preds.append(PosePrediction(kps(base + noise), score=float(rng.uniform(0.1, 1.0)),
                                    image_id=(p % n_gt) % 2, id=p))
    return preds, gts, k


def oracle_ap_values(preds, gts, k, thresholds=OKS_THRESHOLDS):
    """Protocol AP recomputed with the brute-force matcher and loop AP."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, preds[i].id))
    usable = [g for g in gts if not g.iscrowd]
    images = {p.image_id for p in preds} | {g.image_id for g in usable}
    values = []
    for t in thresholds:
        flags = [False] * len(preds)
        for image in images:
            ranks = [r for r, i in enumerate(order) if preds[i].image_id == image]
            img_gts = sorted((g for g in usable if g.image_id == image),
                             key=lambda g: g.id)
            table = np.array([
                [oks_loop(preds[order[r]].keypoints.xy, g.keypoints.xy,
                          g.keypoints.visibility, g.area, k) for g in img_gts]
                for r in ranks]).reshape(len(ranks), len(img_gts))
            for r, flag in zip(ranks, exhaustive_match_flags(table, t)):
                flags[r] = flag
        values.append(ap_interp_loop(flags, len(usable)))
    return values


class TestOks:
    def test_identical_poses_score_one(self):
        sk = load_skeleton("coco")
        xy = np.random.default_rng(0).uniform(0, 200, size=(17, 2))
        assert oks(kps(xy), kps(xy), area=5000.0, k=sk.oks_k) == 1.0

    def test_distance_of_s_times_k_gives_exp_half(self):
        k = [0.2]
        s = 30.0
        gt = kps([[50.0, 50.0]])
        pred = kps([[50.0 + s * 0.2, 50.0]])
        assert oks(pred, gt, area=s * s, k=k) == pytest.approx(np.exp(-0.5), abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        sk = load_skeleton("coco")
        gt_xy = rng.uniform(0, 300, size=(17, 2))
        pred_xy = gt_xy + rng.normal(0, 12, size=(17, 2))
        vis = rng.integers(0, 3, size=17).astype(float)
        vis[0] = 2.0
        got = oks(kps(pred_xy), kps(gt_xy, vis=vis), area=9000.0, k=sk.oks_k)
        want = oks_loop(pred_xy, gt_xy, vis, 9000.0, sk.oks_k)
        assert got == pytest.approx(want, abs=1e-12)

    def test_unlabeled_joints_do_not_contribute(self):
        k = [0.1, 0.1]
        gt = kps([[10.0, 10.0], [90.0, 90.0]], vis=[2.0, 0.0])
        near = oks(kps([[10.0, 10.0], [0.0, 0.0]]), gt, area=400.0, k=k)
        far = oks(kps([[10.0, 10.0], [999.0, 999.0]]), gt, area=400.0, k=k)
        assert near == far == 1.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(1)
        k = np.full(4, 0.15)
        gt_xy = rng.uniform(0, 50, size=(4, 2))
        pred_xy = gt_xy + rng.normal(0, 3, size=(4, 2))
        base = oks(kps(pred_xy), kps(gt_xy), area=900.0, k=k)
        shifted = oks(kps(pred_xy + 77.5), kps(gt_xy + 77.5), area=900.0, k=k)
        assert shifted == pytest.approx(base, abs=1e-12)

    def test_zero_area_rejected(self):
        with pytest.raises(DataError, match="area"):
            oks(kps([[0.0, 0.0]]), kps([[0.0, 0.0]]), area=0.0, k=[0.1])

    def test_all_unlabeled_rejected(self):
        with pytest.raises(DataError, match="labeled"):
            oks(kps([[0.0, 0.0]]), kps([[0.0, 0.0]], vis=0.0), area=10.0, k=[0.1])

    def test_mismatched_constants_rejected(self):
        with pytest.raises(DataError, match="constants"):
            oks(kps([[0.0, 0.0]]), kps([[0.0, 0.0]]), area=10.0, k=[0.1, 0.2])


class TestEvalReport:
    def test_mean_is_arithmetic(self):
        report = EvalReport(kind="x", components=(("a", 0.5), ("b", 1.0)))
        assert report.mean == pytest.approx(0.75)
        assert report["a"] == 0.5

    def test_out_of_range_value_rejected(self):
        with pytest.raises(DataError, match="0, 1"):
            EvalReport(kind="x", components=(("a", 1.5),))

    def test_duplicate_labels_rejected(self):
        with pytest.raises(DataError, match="unique"):
            EvalReport(kind="x", components=(("a", 0.5), ("a", 0.6)))

    def test_empty_report_rejected(self):
        with pytest.raises(DataError, match="component"):
            EvalReport(kind="x", components=())

    def test_lines_cover_components_and_mean(self):
        report = EvalReport(kind="x", components=(("a", 0.5),), skipped=2)
        assert report.lines() == ["a: 0.5000", "mean: 0.5000", "skipped: 2"]


class TestAveragePrecision:
    def test_perfect_predictions_score_one_everywhere(self):
        rng = np.random.default_rng(2)
        k = np.full(5, 0.1)
        gts, preds = [], []
        for i in range(4):
            xy = rng.uniform(0, 200, size=(5, 2))
            gts.append(PoseAnnotation(kps(xy), area=4000.0, image_id=i % 2, id=i))
            preds.append(PosePrediction(kps(xy), score=float(rng.uniform(0.2, 1.0)),
                                        image_id=i % 2, id=i))
        report = average_precision(preds, gts, k)
        assert all(value == 1.0 for _, value in report.components)
        assert report.mean == 1.0

    def test_no_predictions_scores_zero(self):
        gt = PoseAnnotation(kps([[1.0, 2.0]]), area=100.0)
        report = average_precision([], [gt], k=[0.1])
        assert all(value == 0.0 for _, value in report.components)

    def test_vacuous_cases_without_ground_truth(self):
        assert average_precision([], [], k=[0.1]).mean == 1.0
        stray = PosePrediction(kps([[1.0, 1.0]]), score=0.5)
        assert average_precision([stray], [], k=[0.1]).mean == 0.0

    def test_half_matched_hand_computed_value(self):
        k = [0.1]
        gts = [PoseAnnotation(kps([[10.0, 10.0]]), area=100.0, id=0),
               PoseAnnotation(kps([[50.0, 50.0]]), area=100.0, id=1)]
        preds = [PosePrediction(kps([[10.0, 10.0]]), score=0.9, id=0),
                 PosePrediction(kps([[500.0, 500.0]]), score=0.8, id=1)]
        report = average_precision(preds, gts, k)
        # Flags (TP, FP): precision 1 up to recall 0.5, then nothing.
        assert all(value == pytest.approx(51 / 101) for _, value in report.components)

    def test_greedy_prefers_the_higher_oks_candidate(self):
        k = [0.1]
        gts = [PoseAnnotation(kps([[0.0, 0.0]]), area=10_000.0, id=0),
               PoseAnnotation(kps([[6.0, 0.0]]), area=10_000.0, id=1)]
        preds = [PosePrediction(kps([[5.0, 0.0]]), score=0.9, id=0),
                 PosePrediction(kps([[0.0, 0.0]]), score=0.1, id=1)]
        report = average_precision(preds, gts, k, thresholds=(0.5,))
        # Rank 1 takes gt 1 (d=1) over gt 0 (d=5); rank 2 still matches gt 0.
        assert report["ap@0.50"] == 1.0

    def test_thresholds_are_monotone(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            preds, gts, k = make_ap_case(rng)
            values = [v for _, v in average_precision(preds, gts, k).components]
            assert all(a >= b for a, b in zip(values, values[1:]))

    def test_prediction_order_is_irrelevant(self):
        rng = np.random.default_rng(4)
        preds, gts, k = make_ap_case(rng)
        want = average_precision(preds, gts, k)
        perm = [preds[i] for i in rng.permutation(len(preds))]
        assert average_precision(perm, gts, k) == want

    def test_equal_scores_tie_break_by_id(self):
        k = [0.1]
        gts = [PoseAnnotation(kps([[0.0, 0.0]]), area=100.0, id=0)]
        preds = [PosePrediction(kps([[0.0, 0.0]]), score=0.5, id=1),
                 PosePrediction(kps([[900.0, 900.0]]), score=0.5, id=0)]
        report = average_precision(preds, gts, k, thresholds=(0.5,))
        # The lower id ranks first and misses, so the flag sequence is
        # (FP, TP): precision never exceeds 0.5 at any recall.
        assert report["ap@0.50"] == pytest.approx(0.5, abs=1e-12)

    def test_matching_stays_within_the_image(self):
        k = [0.1]
        gts = [PoseAnnotation(kps([[0.0, 0.0]]), area=100.0, image_id=0, id=0)]
        preds = [PosePrediction(kps([[0.0, 0.0]]), score=0.9, image_id=1, id=0)]
        report = average_precision(preds, gts, k)
        assert report.mean == 0.0

    def test_crowd_annotations_are_ignored_with_warning(self, caplog):
        k = [0.1]
        gts = [PoseAnnotation(kps([[0.0, 0.0]]), area=100.0, id=0),
               PoseAnnotation(kps([[90.0, 90.0]]), area=100.0, id=1, iscrowd=True)]
        preds = [PosePrediction(kps([[0.0, 0.0]]), score=0.9, id=0)]
        with caplog.at_level(logging.WARNING, logger="rsnlab.metrics"):
            report = average_precision(preds, gts, k)
        assert report.mean == 1.0
        assert any("crowd" in record.message for record in caplog.records)

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_exhaustive_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        preds, gts, k = make_ap_case(rng)
        got = [value for _, value in average_precision(preds, gts, k).components]
        want = oracle_ap_values(preds, gts, k)
        assert got == pytest.approx(want, abs=1e-12)


class TestPckh:
    def test_identical_poses_are_fully_correct(self):
        rng = np.random.default_rng(5)
        xy = rng.uniform(0, 100, size=(4, 2))
        gt = PoseAnnotation(kps(xy), head_length=10.0)
        report = pckh([kps(xy)], [gt])
        assert all(value == 1.0 for _, value in report.components)
        assert report.skipped == 0

    def test_boundary_distance_counts_as_correct(self):
        gt = PoseAnnotation(kps([[10.0, 10.0]]), head_length=2.0)
        exact = pckh([kps([[11.0, 10.0]])], [gt])
        beyond = pckh([kps([[11.0000001, 10.0]])], [gt])
        assert exact.components[0][1] == 1.0
        assert beyond.components[0][1] == 0.0

    def test_missing_head_box_is_skipped_and_counted(self):
        gts = [PoseAnnotation(kps([[0.0, 0.0]]), head_length=None),
               PoseAnnotation(kps([[0.0, 0.0]]), head_length=4.0)]
        preds = [kps([[100.0, 100.0]]), kps([[0.0, 0.0]])]
        report = pckh(preds, gts)
        assert report.skipped == 1
        assert report.components[0][1] == 1.0  # the miss was in the skipped pair

    def test_nonpositive_head_rejected(self):
        gt = PoseAnnotation(kps([[0.0, 0.0]]), head_length=0.0)
        with pytest.raises(DataError, match="head"):
            pckh([kps([[0.0, 0.0]])], [gt])

    def test_unlabeled_joints_are_excluded(self):
        gt = PoseAnnotation(kps([[0.0, 0.0], [5.0, 5.0]], vis=[2.0, 0.0]),
                            head_length=2.0)
        report = pckh([kps([[0.0, 0.0], [99.0, 99.0]])], [gt],
                      joint_names=["a", "b"])
        assert report.components == (("a", 1.0),)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(6)
        n, joints = 20, 6
        preds, gts = [], []
        for _ in range(n):
            xy = rng.uniform(0, 200, size=(joints, 2))
            vis = rng.integers(0, 3, size=joints).astype(float)
            head = float(rng.uniform(5, 20))
            gts.append(PoseAnnotation(kps(xy, vis=vis), head_length=head))
            preds.append(kps(xy + rng.normal(0, 6, size=(joints, 2))))
        report = pckh(preds, gts)

        correct = np.zeros(joints)
        labeled = np.zeros(joints)
        for pred, gt in zip(preds, gts):
            for j in range(joints):
                if gt.keypoints.visibility[j] <= 0:
                    continue
                labeled[j] += 1
                dx = pred.xy[j, 0] - gt.keypoints.xy[j, 0]
                dy = pred.xy[j, 1] - gt.keypoints.xy[j, 1]
                if (dx * dx + dy * dy) ** 0.5 <= 0.5 * gt.head_length:
                    correct[j] += 1
        for label, value in report.components:
            j = int(label[1:])
            assert value == pytest.approx(correct[j] / labeled[j], abs=1e-12)

    def test_sample_count_mismatch_rejected(self):
        with pytest.raises(DataError, match="predictions"):
            pckh([kps([[0.0, 0.0]])], [])

    def test_threshold_zero_requires_exact_hits(self):
        gt = PoseAnnotation(kps([[3.0, 4.0]]), head_length=5.0)
        assert pckh([kps([[3.0, 4.0]])], [gt], threshold=0.0).mean == 1.0
        assert pckh([kps([[3.0, 4.1]])], [gt], threshold=0.0).mean == 0.0
