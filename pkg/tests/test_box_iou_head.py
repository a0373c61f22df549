"""Tests für die Numerik des Box-IoU-Heads."""

import math

import numpy as np
import pytest

from conftest import random_head
from models.head import HeadGradients, HeadModel
from services import box_iou_head
from services.box_iou_head import HeadBatch
from utils.errors import SchemaError


def _random_batch(model: HeadModel, rng: np.random.Generator, n: int = 12) -> HeadBatch:
    d = model.feature_dim
    features = np.concatenate([rng.normal(size=(n, d - 1)), np.ones((n, 1))], axis=1)
    return HeadBatch(
        cls_features=features,
        cls_targets=rng.integers(0, model.num_classes + 1, size=n),
        reg_features=features[: n // 2],
        reg_targets=rng.normal(size=(n // 2, 4)),
        iou_features=features[n // 3 :],
        iou_targets=rng.uniform(0.3, 1.0, size=n - n // 3),
    )


def _total(model: HeadModel, batch: HeadBatch) -> float:
    report, _ = box_iou_head.loss_and_gradients(model, batch)
    return report.total


class TestForward:
    def test_zero_model_outputs(self):
        model = HeadModel.zeros(num_classes=2, channels=1, grid_size=2)
        out = box_iou_head.forward(model, np.ones((4, model.feature_dim)))
        np.testing.assert_allclose(out.probs, 1.0 / 3.0)
        np.testing.assert_array_equal(out.deltas, 0.0)
        np.testing.assert_allclose(out.iou_scores, 0.5)

    def test_probabilities_sum_to_one(self):
        model = random_head(scale=5.0)
        rng = np.random.default_rng(42)
        out = box_iou_head.forward(model, rng.normal(size=(20, model.feature_dim)))
        np.testing.assert_allclose(out.probs.sum(axis=1), 1.0)
        assert np.all((out.iou_scores > 0) & (out.iou_scores < 1))

    def test_dimension_mismatch(self):
        model = HeadModel.zeros(2, 1, 2)
        with pytest.raises(ValueError):
            box_iou_head.forward(model, np.ones((1, model.feature_dim + 1)))

    def test_sigmoid_is_stable(self):
        values = box_iou_head.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose(values, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(values))


class TestLosses:
    def test_uniform_cross_entropy(self):
        assert box_iou_head.loss_cls(np.full((4, 3), 1.0 / 3.0), [0, 1, 2, 0]) == pytest.approx(math.log(3.0))

    def test_bce_at_half(self):
        assert box_iou_head.loss_iou([0.0], [1.0]) == pytest.approx(math.log(2.0))

    def test_bce_finite_for_extreme_logits(self):
        assert math.isfinite(box_iou_head.loss_iou([1e4, -1e4], [0.0, 1.0]))

    def test_perfect_regression(self):
        deltas = np.arange(8.0).reshape(2, 4)
        assert box_iou_head.loss_reg(deltas, deltas) == 0.0

    def test_empty_sets_contribute_nothing(self):
        assert box_iou_head.loss_reg(np.zeros((0, 4)), np.zeros((0, 4))) == 0.0
        assert box_iou_head.loss_iou([], []) == 0.0

    def test_targets_out_of_range(self):
        with pytest.raises(ValueError):
            box_iou_head.loss_cls(np.full((1, 3), 1.0 / 3.0), [3])
        with pytest.raises(ValueError):
            box_iou_head.loss_iou([0.0], [1.5])

    def test_loss_weights(self):
        model = random_head()
        batch = _random_batch(model, np.random.default_rng(1))
        report, _ = box_iou_head.loss_and_gradients(model, batch, (1.0, 2.0, 0.0))
        assert report.total == pytest.approx(report.loss_cls + 2.0 * report.loss_reg)
        assert report.num_cls == 12 and report.num_reg == 6 and report.num_iou == 8


class TestGradients:
    def test_matches_central_differences(self):
        rng = np.random.default_rng(42)
        eps = 1e-6
        for instance in range(100):
            model = random_head(num_classes=2, channels=1, grid_size=1, seed=instance, scale=0.5)
            batch = _random_batch(model, rng)
            _, grads = box_iou_head.loss_and_gradients(model, batch)
            for name in ("w_cls", "w_reg", "w_iou"):
                analytic = getattr(grads, name)
                numeric = np.zeros_like(analytic)
                for idx in np.ndindex(analytic.shape):
                    plus = model.copy()
                    minus = model.copy()
                    getattr(plus, name)[idx] += eps
                    getattr(minus, name)[idx] -= eps
                    numeric[idx] = (_total(plus, batch) - _total(minus, batch)) / (2 * eps)
                np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6)

    def test_zero_learning_rate_keeps_model(self):
        model = random_head()
        _, grads = box_iou_head.loss_and_gradients(model, _random_batch(model, np.random.default_rng(0)))
        updated = box_iou_head.sgd_step(model, grads, lr=0.0)
        assert updated.fingerprint() == model.fingerprint()

    def test_step_reduces_loss(self):
        model = random_head()
        batch = _random_batch(model, np.random.default_rng(3))
        before, grads = box_iou_head.loss_and_gradients(model, batch)
        after, _ = box_iou_head.loss_and_gradients(box_iou_head.sgd_step(model, grads, lr=0.01), batch)
        assert after.total < before.total

    def test_sgd_does_not_mutate_input(self):
        model = random_head()
        fingerprint = model.fingerprint()
        grads = HeadGradients(np.ones_like(model.w_cls), np.ones_like(model.w_reg), np.ones_like(model.w_iou))
        box_iou_head.sgd_step(model, grads, lr=0.5, weight_decay=0.1)
        assert model.fingerprint() == fingerprint


class TestRidge:
    def test_exact_linear_targets(self):
        rng = np.random.default_rng(42)
        features = rng.normal(size=(60, 9))
        w_true = rng.normal(size=(4, 9))
        w_fit = box_iou_head.fit_reg_ridge(features, features @ w_true.T, lam=0.0)
        assert np.max(np.abs(features @ w_fit.T - features @ w_true.T)) < 1e-8

    def test_stationary_point(self):
        rng = np.random.default_rng(7)
        features = rng.normal(size=(30, 5))
        targets = rng.normal(size=(30, 4))
        lam = 0.5
        w = box_iou_head.fit_reg_ridge(features, targets, lam)
        gradient = 2 * (features @ w.T - targets).T @ features + 2 * lam * w
        np.testing.assert_allclose(gradient, 0.0, atol=1e-9)

    def test_rank_deficient_without_lambda(self):
        features = np.ones((10, 3))
        with pytest.raises(ValueError, match="lambda"):
            box_iou_head.fit_reg_ridge(features, np.zeros((10, 4)), lam=0.0)


class TestCheckpoint:
    def test_roundtrip_is_exact(self, tmp_path):
        heads = [random_head(seed=s) for s in range(3)]
        path = box_iou_head.save_checkpoint(tmp_path / "model.json", heads, {"iterations": 5})
        loaded, metadata = box_iou_head.load_checkpoint(path)
        assert [h.fingerprint() for h in loaded] == [h.fingerprint() for h in heads]
        assert metadata == {"iterations": 5}

    def test_wrong_schema(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"schema": "other", "heads": []}', encoding="utf-8")
        with pytest.raises(SchemaError):
            box_iou_head.load_checkpoint(path)

    def test_frozen_blocks_writes(self):
        model = random_head()
        with model.frozen():
            with model.frozen():
                pass
            with pytest.raises(ValueError):
                model.w_reg[0, 0] = 1.0
        model.w_reg[0, 0] = 1.0
        assert model.w_reg[0, 0] == 1.0
