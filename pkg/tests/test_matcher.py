import itertools

import numpy as np
import pytest

from models.matching import NO_MATCH
from models.scene import GroundTruth
from services.matcher import cascade_thresholds, match, sample
from utils.box_ops import iou_matrix


def _gt(boxes, classes=None) -> GroundTruth:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.zeros(len(boxes), dtype=np.int64) if classes is None else classes
    return GroundTruth(image_id=0, boxes=boxes, classes=classes)


def _fake_match(num_pos: int, num_neg: int):
    """MatchResult mit num_pos positiven und num_neg negativen Proposals."""
    gt = _gt([[0, 0, 10, 10]])
    boxes = [[0, 0, 10, 10]] * num_pos + [[50, 50, 60, 60]] * num_neg
    return match(np.asarray(boxes, dtype=np.float64).reshape(-1, 4), gt, 0.5, 1)


class TestMatch:
    def test_identical_box_is_positive(self):
        result = match([[0, 0, 10, 10]], _gt([[0, 0, 10, 10]], [2]), 0.5, 3)
        assert result.positive[0]
        assert result.max_iou[0] == 1.0
        assert result.class_targets[0] == 2

    def test_argmax_picks_higher_iou(self):
        # IoU 0.6 zur ersten, 0.7 zur zweiten GT
        proposal = [[0, 0, 10, 10]]
        gts = _gt([[0, 0, 10, 6], [0, 0, 10, 7]], [0, 1])
        result = match(proposal, gts, 0.5, 2)
        np.testing.assert_allclose(iou_matrix(proposal, gts.boxes), [[0.6, 0.7]])
        assert result.matched_gt[0] == 1
        assert result.positive[0]
        assert result.class_targets[0] == 1

    def test_threshold_is_inclusive(self):
        gts = _gt([[0, 0, 10, 10]])
        result = match([[0, 0, 10, 4.9], [0, 0, 10, 5]], gts, 0.5, 1)
        np.testing.assert_allclose(result.max_iou, [0.49, 0.5])
        np.testing.assert_array_equal(result.positive, [False, True])
        np.testing.assert_array_equal(result.class_targets, [1, 0])

    def test_ties_pick_smallest_gt_index(self):
        gts = _gt([[0, 0, 10, 10], [0, 0, 10, 10]], [1, 0])
        result = match([[0, 0, 10, 10]], gts, 0.5, 2)
        assert result.matched_gt[0] == 0

    def test_no_gt(self):
        result = match([[0, 0, 1, 1]], _gt(np.zeros((0, 4))), 0.5, 2)
        assert result.matched_gt[0] == NO_MATCH
        assert not result.positive[0]
        assert result.class_targets[0] == 2

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            match([[0, 0, 1, 1]], _gt([[0, 0, 1, 1]]), 0.0, 1)

    def test_brute_force_equivalence(self):
        rng = np.random.default_rng(42)
        for n, m in itertools.product(range(0, 21, 4), range(0, 6)):
            xy = rng.integers(0, 20, size=(n, 2))
            props = np.concatenate([xy, xy + rng.integers(1, 10, size=(n, 2))], axis=1).astype(float)
            gxy = rng.integers(0, 20, size=(m, 2))
            gboxes = np.concatenate([gxy, gxy + rng.integers(1, 10, size=(m, 2))], axis=1).astype(float)
            gt = _gt(gboxes, rng.integers(0, 3, size=m))
            result = match(props, gt, 0.5, 3)
            for i in range(n):
                ious = [iou_matrix(props[i : i + 1], gboxes[j : j + 1])[0, 0] for j in range(m)]
                best = max(ious, default=0.0)
                assert result.max_iou[i] == best
                expected_class = gt.classes[ious.index(best)] if m and best >= 0.5 else 3
                assert result.class_targets[i] == expected_class


class TestSample:
    def test_quota(self):
        batch = sample(_fake_match(10, 100), 8, 0.25, np.random.default_rng(0))
        assert len(batch) == 8
        assert batch.num_positive == 2
        np.testing.assert_array_equal(batch.positive, [True] * 2 + [False] * 6)

    def test_no_positives(self):
        batch = sample(_fake_match(0, 20), 8, 0.25, np.random.default_rng(0))
        assert len(batch) == 8
        assert batch.num_positive == 0

    def test_small_pool_returns_everything(self):
        batch = sample(_fake_match(3, 4), 64, 0.25, np.random.default_rng(0))
        assert sorted(batch.indices.tolist()) == list(range(7))

    def test_positives_fill_missing_negatives(self):
        batch = sample(_fake_match(10, 2), 8, 0.25, np.random.default_rng(0))
        assert len(batch) == 8
        assert batch.num_positive == 6

    def test_targets_follow_indices(self):
        result = _fake_match(5, 5)
        batch = sample(result, 6, 0.5, np.random.default_rng(1))
        np.testing.assert_array_equal(batch.class_targets, result.class_targets[batch.indices])
        np.testing.assert_array_equal(batch.iou_targets, result.max_iou[batch.indices])
        np.testing.assert_allclose(batch.delta_targets, 0.0)

    def test_same_rng_same_batch(self):
        result = _fake_match(10, 100)
        a = sample(result, 16, 0.25, np.random.default_rng(5))
        b = sample(result, 16, 0.25, np.random.default_rng(5))
        np.testing.assert_array_equal(a.indices, b.indices)


class TestCascadeThresholds:
    def test_baseline(self):
        assert cascade_thresholds("baseline") == (0.5, 0.6, 0.7)

    def test_apdi(self):
        assert cascade_thresholds("apdi") == (0.5, 0.65, 0.8)

    @pytest.mark.parametrize("mode", ["baseline", "apdi"])
    def test_strictly_increasing(self, mode):
        thresholds = cascade_thresholds(mode)
        assert all(a < b for a, b in zip(thresholds, thresholds[1:]))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            cascade_thresholds("steep")
