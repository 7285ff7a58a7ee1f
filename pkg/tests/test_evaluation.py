"""Tests for matching, average precision, and the report table."""

import json

import numpy as np
import pytest

from votebox.cloudio import LabeledBox
from votebox.evaluation import (
    DIFFICULTIES,
    METRICS,
    PUBLISHED_REFERENCE,
    REFERENCE_NOTE,
    EvalConfig,
    MatchResult,
    ReportTable,
    UndefinedAPError,
    average_precision,
    default_eval_grid,
    difficulty_bin,
    match,
    report,
)
from votebox.geometry import Box3D, Proposal


def det(box, score):
    return Proposal(box=box, score=score, class_probs=(1.0,), source_anchor=-1)


def car(x, y, yaw=0.0):
    return Box3D((x, y, -1.0), (3.9, 1.6, 1.56), yaw)


def annotated(box, height_px, occlusion, truncation):
    return LabeledBox(
        box=box, height_px=height_px, occlusion=occlusion, truncation=truncation
    )


class TestDifficultyBin:
    def test_plain_box_is_all(self):
        assert difficulty_bin(car(10, 0)) == "all"
        assert difficulty_bin(LabeledBox(box=car(10, 0))) == "all"

    def test_rule_tiers(self):
        b = car(10, 0)
        assert difficulty_bin(annotated(b, 45.0, 0, 0.10)) == "easy"
        assert difficulty_bin(annotated(b, 30.0, 1, 0.20)) == "moderate"
        assert difficulty_bin(annotated(b, 26.0, 2, 0.40)) == "hard"
        assert difficulty_bin(annotated(b, 10.0, 0, 0.0)) == "ignored"
        assert difficulty_bin(annotated(b, 45.0, 2, 0.60)) == "ignored"

    def test_boundaries_inclusive(self):
        b = car(10, 0)
        assert difficulty_bin(annotated(b, 40.0, 0, 0.15)) == "easy"
        assert difficulty_bin(annotated(b, 40.0, 0, 0.151)) == "moderate"
        assert difficulty_bin(annotated(b, 25.0, 1, 0.30)) == "moderate"
        assert difficulty_bin(annotated(b, 25.0, 2, 0.50)) == "hard"


class TestEvalConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(iou_threshold=0.0)
        with pytest.raises(ValueError):
            EvalConfig(iou_threshold=1.5)
        with pytest.raises(ValueError):
            EvalConfig(metric="ap_sideview")
        with pytest.raises(ValueError):
            EvalConfig(difficulty="extreme")
        with pytest.raises(ValueError):
            EvalConfig(interpolation=25)

    def test_grid_cross_product(self):
        grid = default_eval_grid()
        assert len(grid) == 18
        assert grid[0].metric == "ap_2d" and grid[0].iou_threshold == 0.3
        assert [c.difficulty for c in grid[:3]] == ["easy", "moderate", "hard"]
        assert {c.metric for c in grid} == set(METRICS)


CFG = EvalConfig(iou_threshold=0.5, metric="ap_3d", difficulty="all")


class TestMatch:
    def test_perfect_detections(self):
        truths = [car(10, 0), car(18, 4), car(24, -5)]
        dets = [det(t, 0.9 - 0.1 * i) for i, t in enumerate(truths)]
        result = match(dets, truths, CFG)
        assert result.det_flags == ("tp", "tp", "tp")
        assert result.det_matched == (0, 1, 2)
        assert result.truth_matched == (True, True, True)
        assert result.n_eligible == 3

    def test_greedy_score_order_takes_truth_once(self):
        truth = [car(10, 0)]
        dets = [det(car(10, 0), 0.4), det(car(10, 0), 0.9)]
        result = match(dets, truth, CFG)
        # The higher-scoring detection wins the truth even though it comes
        # second in input order; flags stay in input order.
        assert result.det_flags == ("fp", "tp")
        assert result.det_matched == (-1, 0)

    def test_ignored_truth_absorbs_detection(self):
        truths = [annotated(car(10, 0), 10.0, 0, 0.0)]
        result = match([det(car(10, 0), 0.9)], truths, EvalConfig(difficulty="easy"))
        assert result.det_flags == ("ignored",)
        assert result.n_eligible == 0

    def test_eligibility_nests_by_difficulty(self):
        truths = [
            annotated(car(10, 0), 45.0, 0, 0.0),   # easy
            annotated(car(18, 4), 30.0, 1, 0.2),   # moderate
        ]
        easy = match([], truths, EvalConfig(difficulty="easy"))
        moderate = match([], truths, EvalConfig(difficulty="moderate"))
        assert easy.n_eligible == 1
        assert moderate.n_eligible == 2

    def test_below_threshold_is_fp(self):
        truth = [car(10, 0)]
        shifted = det(Box3D((13.0, 0.0, -1.0), (3.9, 1.6, 1.56), 0.0), 0.9)
        result = match([shifted], truth, CFG)
        assert result.det_flags == ("fp",)
        assert result.truth_matched == (False,)

    def test_metric_2d_uses_map_rect_overlap(self):
        # Same footprint shifted only in z: BEV IoU is 1 but 3D IoU is 0;
        # the image-plane rects still overlap heavily.
        truth = [car(10, 0)]
        lifted = det(Box3D((10.0, 0.0, 1.0), (3.9, 1.6, 1.56), 0.0), 0.9)
        flags_3d = match([lifted], truth, CFG).det_flags
        flags_bev = match([lifted], truth, EvalConfig(metric="ap_bird")).det_flags
        assert flags_3d == ("fp",)
        assert flags_bev == ("tp",)


def exhaustive_ap(results, cfg):
    """Independent AP oracle: scan every prefix of the pooled ranked list."""
    n_truths = sum(r.n_eligible for r in results)
    pooled = []
    for scene_i, r in enumerate(results):
        for det_i, (score, flag) in enumerate(zip(r.det_scores, r.det_flags)):
            if flag != "ignored":
                pooled.append((-score, scene_i, det_i, flag))
    pooled.sort()
    flags = [flag for *_, flag in pooled]
    if cfg.interpolation == 11:
        samples = [i / 10 for i in range(11)]
    else:
        samples = [i / 40 for i in range(1, 41)]
    total = 0.0
    for r_sample in samples:
        best = 0.0
        for k in range(1, len(flags) + 1):
            tp = flags[:k].count("tp")
            if tp / n_truths >= r_sample:
                best = max(best, tp / k)
        total += best
    return total / len(samples)


def synthetic_result(rng, n_truths, n_dets):
    flags = tuple(rng.choice(["tp", "fp"]) for _ in range(n_dets))
    while flags.count("tp") > n_truths:  # cannot have more TPs than truths
        flags = tuple(rng.choice(["tp", "fp"]) for _ in range(n_dets))
    scores = tuple(float(s) for s in rng.uniform(0.01, 1.0, size=n_dets))
    return MatchResult(
        det_scores=scores,
        det_flags=flags,
        det_matched=tuple(-1 for _ in flags),
        truth_matched=tuple(False for _ in range(n_truths)),
        n_eligible=n_truths,
    )


class TestAveragePrecision:
    def test_hand_case(self):
        # Three truths; ranked detections TP, FP, TP, TP. Interpolated
        # precision is 1 up to recall 1/3 and 3/4 beyond, so the 11-point
        # mean is (4 * 1 + 7 * 0.75) / 11.
        truths = [car(10, 0), car(18, 4), car(24, -5)]
        dets = [
            det(truths[0], 0.9),
            det(car(30.0, 10.0), 0.8),
            det(truths[1], 0.7),
            det(truths[2], 0.6),
        ]
        ap = average_precision(match(dets, truths, CFG), CFG)
        assert ap == 9.25 / 11
        assert ap == 0.8409090909090909

    def test_matches_exhaustive_prefix_scan(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n_truths = int(rng.integers(1, 6))
            results = [
                synthetic_result(rng, n_truths, int(rng.integers(0, 13)))
            ]
            if trial % 3 == 0:  # sometimes pool a second scene
                results.append(synthetic_result(rng, int(rng.integers(1, 4)), 5))
            cfg = EvalConfig(interpolation=11 if trial % 2 else 40)
            assert average_precision(results, cfg) == exhaustive_ap(results, cfg)

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(5)
        truths = [car(10, 0), car(18, 5), car(26, -4, yaw=0.4)]
        dets = []
        for i, t in enumerate(truths):
            jittered = Box3D(
                (t.center[0] + rng.uniform(-1, 1), t.center[1] + rng.uniform(-1, 1), -1.0),
                t.scale,
                t.yaw + rng.uniform(-0.2, 0.2),
            )
            dets.append(det(jittered, 0.9 - 0.1 * i))
        loose = average_precision(match(dets, truths, EvalConfig(iou_threshold=0.3)), CFG)
        tight = average_precision(match(dets, truths, EvalConfig(iou_threshold=0.7)), CFG)
        assert tight <= loose

    def test_duplicates_never_raise_ap(self):
        truths = [car(10, 0), car(18, 4)]
        dets = [det(truths[0], 0.9), det(car(30, 10), 0.5)]
        base = average_precision(match(dets, truths, CFG), CFG)
        doubled = dets + [det(d.box, d.score * 0.5) for d in dets]
        dup = average_precision(match(doubled, truths, CFG), CFG)
        assert dup <= base

    def test_pooling_across_scenes(self):
        # One TP-only scene and one FP-only scene pool into a single curve.
        r1 = MatchResult((0.9,), ("tp",), (0,), (True,), 1)
        r2 = MatchResult((0.8,), ("fp",), (-1,), (False,), 1)
        ap = average_precision([r1, r2], CFG)
        # Curve: (0.5, 1.0) then (0.5, 0.5); recall never reaches 1.
        assert ap == pytest.approx(6 * 1.0 / 11)

    def test_undefined_without_eligible_truths(self):
        empty = match([det(car(10, 0), 0.9)], [], CFG)
        with pytest.raises(UndefinedAPError):
            average_precision(empty, CFG)
        ignored_only = match(
            [], [annotated(car(10, 0), 5.0, 2, 0.9)], EvalConfig(difficulty="easy")
        )
        with pytest.raises(UndefinedAPError):
            average_precision(ignored_only, EvalConfig(difficulty="easy"))

    def test_single_perfect_detection(self):
        truths = [car(10, 0)]
        result = match([det(truths[0], 1.0)], truths, CFG)
        assert average_precision(result, CFG) == 1.0
        assert average_precision(result, EvalConfig(interpolation=40)) == 1.0


class TestReport:
    def perfect_scene(self):
        truths = [car(10, 0), car(18, 4), car(24, -5)]
        dets = [det(t, 1.0) for t in truths]
        return dets, truths

    def test_perfect_run_is_all_ones(self):
        table = report([self.perfect_scene()], default_eval_grid())
        assert len(table.rows) == 18
        assert all(row["ap"] == 1.0 for row in table.rows)

    def test_csv_round_trips_exact_floats(self):
        table = report([self.perfect_scene()], default_eval_grid())
        lines = table.to_csv().splitlines()
        assert lines[0] == "metric,iou,difficulty,ap"
        assert len(lines) == 19
        for line, row in zip(lines[1:], table.rows):
            metric, iou, difficulty, ap = line.split(",")
            assert metric == row["metric"]
            assert float(iou) == row["iou"]
            assert difficulty == row["difficulty"]
            assert float(ap) == row["ap"]

    def test_json_structure(self):
        table = report([self.perfect_scene()], default_eval_grid()[:2])
        data = json.loads(table.to_json())
        assert set(data) == {"rows", "reference"}
        assert data["reference"]["note"] == REFERENCE_NOTE
        assert data["rows"] == list(table.rows)
        assert data["reference"]["entries"] == list(PUBLISHED_REFERENCE)

    def test_undefined_cells_report_zero(self):
        scene = ([det(car(10, 0), 0.9)], [])
        table = report([scene], default_eval_grid())
        assert all(row["ap"] == 0.0 for row in table.rows)

    def test_reference_block_shape(self):
        assert len(PUBLISHED_REFERENCE) == 16
        for entry in PUBLISHED_REFERENCE:
            assert set(entry) == {"method", "iou", "metric", "easy", "moderate", "hard"}
            assert entry["metric"] in METRICS
            assert entry["iou"] in (0.3, 0.5)
        assert "all" in DIFFICULTIES
