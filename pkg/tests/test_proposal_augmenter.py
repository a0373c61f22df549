"""Tests für Proposal-Augmentierung, Verteilung auf die Zweige, Training und IBBR."""

import itertools

import numpy as np
import pytest

from conftest import random_head
from models.config import IoUTargetSource, TrainConfig, TrainMode
from models.head import HeadModel
from models.proposals import AugmentedProposals, ProposalSet, Provenance
from models.scene import GroundTruth
from services.matcher import cascade_thresholds
from services.proposal_augmenter import (
    _standard_batch,
    augment_proposals,
    augmentation_statistics,
    cascade_train_step,
    ibbr_refine,
    refine_boxes,
    route_training_samples,
    train_step,
)
from services.synthetic_dataset import SyntheticDataset
from utils.box_ops import encode_boxes, iou_matrix
from utils.roi_pooling import FeatureExtractor

UNIT_GT = GroundTruth(image_id=0, boxes=[[0.0, 0.0, 10.0, 10.0]], classes=[0], image_size=(40, 40))


def _augmented(heights, provenance) -> AugmentedProposals:
    """Handgebaute augmentierte Proposals: Box (0, 0, 10, h) hat IoU h/10 zur GT."""
    boxes = np.array([[0.0, 0.0, 10.0, h] for h in heights])
    ious = iou_matrix(boxes, UNIT_GT.boxes)[:, 0]
    return AugmentedProposals(
        image_id=0,
        boxes=boxes,
        provenance=list(provenance),
        max_ious=ious,
        matched_gt=np.zeros(len(boxes), dtype=np.int64),
        source_index=np.arange(len(boxes)),
    )


def _train_config(**overrides) -> TrainConfig:
    values = dict(batch_size_per_image=64, grid_size=2, base_lr=0.1, lr_steps=(), images_per_batch=2)
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def samples(small_config):
    return SyntheticDataset(small_config).samples(range(3))


class TestAugmentProposals:
    originals = ProposalSet(image_id=0, boxes=[[0, 0, 10, 6], [0, 0, 10, 4], [0, 0, 10, 7]])

    def test_cardinality_and_order(self, gradient_image):
        model = random_head(channels=1)
        aug = augment_proposals(self.originals, UNIT_GT, model, gradient_image)
        assert len(aug) == 5
        assert aug.provenance == [Provenance.POSITIVE_ORIGINAL] * 2 + [Provenance.REFINED] * 3
        np.testing.assert_array_equal(aug.boxes[:2], self.originals.boxes[[0, 2]])
        np.testing.assert_array_equal(aug.source_index, [0, 2, 0, 1, 2])
        np.testing.assert_allclose(aug.boxes[2:], refine_boxes(model, gradient_image, self.originals.boxes))
        np.testing.assert_allclose(aug.max_ious, iou_matrix(aug.boxes, UNIT_GT.boxes).max(axis=1))

    def test_zero_refiner_duplicates_originals(self, gradient_image):
        model = HeadModel.zeros(num_classes=2, channels=1, grid_size=2)
        aug = augment_proposals(self.originals, UNIT_GT, model, gradient_image)
        np.testing.assert_allclose(aug.refined_boxes(), self.originals.boxes)
        assert aug.num_positive_originals == 2

    def test_model_is_not_modified(self, gradient_image):
        model = random_head(channels=1)
        fingerprint = model.fingerprint()
        augment_proposals(self.originals, UNIT_GT, model, gradient_image)
        assert model.fingerprint() == fingerprint
        assert model.w_reg.flags.writeable

    def test_empty_originals(self, gradient_image):
        aug = augment_proposals(ProposalSet(image_id=0), UNIT_GT, random_head(channels=1), gradient_image)
        assert len(aug) == 0

    def test_dimension_mismatch(self, gradient_image):
        with pytest.raises(ValueError):
            augment_proposals(self.originals, UNIT_GT, random_head(channels=3), gradient_image)

    def test_dump_form_keeps_provenance(self, gradient_image):
        aug = augment_proposals(self.originals, UNIT_GT, random_head(channels=1), gradient_image)
        proposal_set = aug.to_proposal_set()
        assert proposal_set.scores is None
        assert proposal_set.provenance == aug.provenance


class TestRouting:
    def test_crafted_cases(self):
        aug = _augmented(
            [9.0, 4.0, 2.9, 6.0, 5.0],
            [
                Provenance.POSITIVE_ORIGINAL,
                Provenance.REFINED,
                Provenance.REFINED,
                Provenance.REFINED,
                Provenance.POSITIVE_ORIGINAL,
            ],
        )
        routed = route_training_samples(aug, UNIT_GT)
        np.testing.assert_array_equal(routed.cls_indices, [1, 2, 3])
        np.testing.assert_array_equal(routed.reg_indices, [0, 3, 4])
        np.testing.assert_array_equal(routed.iou_indices, [0, 1, 3, 4])
        np.testing.assert_allclose(routed.iou_targets, [0.9, 0.4, 0.6, 0.5])
        np.testing.assert_allclose(
            routed.reg_targets, encode_boxes(aug.boxes[[0, 3, 4]], np.repeat(UNIT_GT.boxes, 3, axis=0))
        )

    def test_rule_table_exhaustive(self):
        heights = [1.0, 2.9, 3.0, 4.9, 5.0, 8.0, 10.0]
        provenances = [Provenance.POSITIVE_ORIGINAL, Provenance.REFINED]
        cases = list(itertools.product(provenances, heights))
        aug = _augmented([h for _, h in cases], [p for p, _ in cases])
        for source in IoUTargetSource:
            routed = route_training_samples(aug, UNIT_GT, iou_source=source)
            for i, (provenance, height) in enumerate(cases):
                refined = provenance == Provenance.REFINED
                assert (i in routed.cls_indices) == refined
                assert (i in routed.reg_indices) == (height >= 5.0)
                in_iou = height >= 3.0 and (refined or source == IoUTargetSource.AUGMENTED)
                assert (i in routed.iou_indices) == in_iou


class TestTrainStep:
    def test_zero_learning_rate(self, samples):
        model = random_head(channels=3, seed=1)
        config = _train_config(base_lr=0.0, mode=TrainMode.APDI_BOX_IOU)
        updated, report = train_step(model, samples, config, np.random.default_rng(0))
        assert updated.fingerprint() == model.fingerprint()
        assert np.isfinite(report.total)
        assert report.num_iou > 0

    @pytest.mark.parametrize("mode", list(TrainMode))
    def test_deterministic(self, samples, mode):
        model = random_head(channels=3, seed=2)
        config = _train_config(mode=mode)
        first = train_step(model, samples, config, np.random.default_rng(9))
        second = train_step(model, samples, config, np.random.default_rng(9))
        assert first[1] == second[1]
        assert first[0].fingerprint() == second[0].fingerprint()

    def test_workers_do_not_change_result(self, samples):
        model = random_head(channels=3, seed=3)
        config = _train_config(mode=TrainMode.APDI)
        serial = train_step(model, samples, config, np.random.default_rng(4), workers=1)
        parallel = train_step(model, samples, config, np.random.default_rng(4), workers=3)
        assert serial[0].fingerprint() == parallel[0].fingerprint()

    def test_zero_refiner_classification_matches_baseline(self, samples):
        model = HeadModel.initialize(2, 3, 2, np.random.default_rng(5), init_std=0.1)
        baseline = train_step(model, samples, _train_config(mode=TrainMode.BASELINE), np.random.default_rng(6))[1]
        apdi = train_step(model, samples, _train_config(mode=TrainMode.APDI), np.random.default_rng(6))[1]
        assert apdi.num_cls == baseline.num_cls
        assert apdi.loss_cls == pytest.approx(baseline.loss_cls, rel=1e-9)
        assert apdi.num_reg >= baseline.num_reg

    def test_iou_branch_only_with_box_iou_modes(self, samples):
        model = random_head(channels=3)
        _, plain = train_step(model, samples, _train_config(mode=TrainMode.APDI), np.random.default_rng(0))
        assert plain.num_iou == 0 and plain.loss_iou == 0.0
        _, with_iou = train_step(model, samples, _train_config(mode=TrainMode.BOX_IOU), np.random.default_rng(0))
        assert with_iou.num_iou > 0

    @pytest.mark.parametrize("mode", [TrainMode.BOX_IOU, TrainMode.APDI_BOX_IOU])
    def test_background_boxes_join_iou_branch(self, samples, mode):
        model = HeadModel.zeros(2, 3, 2)
        without = _train_config(mode=mode, iou_background_per_image=0)
        with_background = _train_config(mode=mode, iou_background_per_image=2)
        _, plain = train_step(model, samples, without, np.random.default_rng(0))
        _, mixed = train_step(model, samples, with_background, np.random.default_rng(0))
        assert plain.num_iou < mixed.num_iou <= plain.num_iou + 2 * len(samples)

    def test_iou_targets_cover_foreground_and_background(self, samples):
        sample_ = samples[0]
        model = HeadModel.zeros(2, 3, 2)
        config = _train_config(mode=TrainMode.BOX_IOU, iou_background_per_image=50)
        extractor = FeatureExtractor(sample_.image, model.grid_size)
        batch, _ = _standard_batch(
            model, extractor, sample_.proposals.boxes, sample_.gt, config, np.random.default_rng(0), 0.5, True
        )
        ious = iou_matrix(sample_.proposals.boxes, sample_.gt.boxes).max(axis=1)
        assert np.any(ious < config.iou_branch_threshold)
        np.testing.assert_allclose(np.sort(batch.iou_targets), np.sort(ious))

    def test_warmup_delays_augmentation(self, samples):
        model = HeadModel.initialize(2, 3, 2, np.random.default_rng(5), init_std=0.1)
        config = _train_config(mode=TrainMode.APDI, augment_warmup_iterations=10)
        baseline = train_step(model, samples, _train_config(), np.random.default_rng(1), iteration=2)[1]
        warm = train_step(model, samples, config, np.random.default_rng(1), iteration=2)[1]
        assert warm == baseline


class TestCascade:
    def test_requires_three_stages(self, samples):
        heads = [random_head(channels=3)] * 2
        with pytest.raises(ValueError):
            cascade_train_step(heads, samples, _train_config(), np.random.default_rng(0), (0.5, 0.6))

    def test_zero_heads_pass_boxes_through(self, samples):
        heads = [HeadModel.zeros(2, 3, 2) for _ in range(3)]
        _, reports = cascade_train_step(
            heads, samples, _train_config(), np.random.default_rng(0), cascade_thresholds("baseline"), keep_inputs=True
        )
        for stage in (1, 2):
            for before, after in zip(reports[0].input_boxes, reports[stage].input_boxes):
                np.testing.assert_allclose(after, before, atol=1e-12)

    def test_stage_thresholds_and_positive_counts(self, samples):
        heads = [random_head(channels=3, seed=s) for s in range(3)]
        thresholds = cascade_thresholds("apdi")
        updated, reports = cascade_train_step(
            heads, samples, _train_config(), np.random.default_rng(0), thresholds, keep_inputs=True
        )
        assert len(updated) == 3
        assert tuple(r.threshold for r in reports) == (0.5, 0.65, 0.8)
        for report in reports:
            expected = sum(
                int(np.count_nonzero(iou_matrix(boxes, s.gt.boxes).max(axis=1, initial=0.0) >= report.threshold))
                for boxes, s in zip(report.input_boxes, samples)
            )
            assert report.num_positive == expected

    def test_cascade_apdi_deterministic(self, samples):
        heads = [random_head(channels=3, seed=s) for s in range(3)]
        config = _train_config(mode=TrainMode.APDI, cascade=True, cascade_box_iou=True)

        def run(workers: int):
            return cascade_train_step(
                heads, samples, config, np.random.default_rng(2), cascade_thresholds("apdi"), workers=workers
            )

        first, second = run(1), run(2)
        assert [h.fingerprint() for h in first[0]] == [h.fingerprint() for h in second[0]]
        assert all(r.losses.num_iou > 0 for r in first[1])


class TestIBBR:
    def test_single_iteration_equals_refinement(self, gradient_image):
        model = random_head(channels=1)
        proposals = ProposalSet(image_id=1, boxes=[[2, 3, 15, 20], [10, 10, 30, 25]], scores=[0.3, 0.9])
        refined = ibbr_refine(model, proposals, gradient_image, iterations=1)
        np.testing.assert_allclose(refined.boxes, refine_boxes(model, gradient_image, proposals.boxes), atol=1e-12)
        np.testing.assert_array_equal(refined.scores, proposals.scores)
        assert refined.provenance == [Provenance.REFINED] * 2

    def test_two_iterations_compose(self, gradient_image):
        model = random_head(channels=1)
        boxes = np.array([[2.0, 3.0, 15.0, 20.0], [10.0, 10.0, 30.0, 25.0]])
        twice = ibbr_refine(model, ProposalSet(image_id=1, boxes=boxes), gradient_image, iterations=2)
        manual = refine_boxes(model, gradient_image, refine_boxes(model, gradient_image, boxes))
        np.testing.assert_allclose(twice.boxes, manual, atol=1e-12)

    def test_zero_model_is_identity(self, gradient_image):
        model = HeadModel.zeros(2, 1, 2)
        boxes = np.array([[2.5, 3.25, 15.0, 20.75]])
        refined = ibbr_refine(model, ProposalSet(image_id=1, boxes=boxes), gradient_image, iterations=4)
        np.testing.assert_allclose(refined.boxes, boxes, atol=1e-12)

    def test_iterations_must_be_positive(self, gradient_image):
        with pytest.raises(ValueError):
            ibbr_refine(random_head(channels=1), ProposalSet(image_id=1), gradient_image, iterations=0)


class TestAugmentationStatistics:
    def test_zero_refiner_doubles_positives(self, samples):
        stats = augmentation_statistics(samples, HeadModel.zeros(2, 3, 2))
        assert stats["augmented_positives"] == 2 * stats["original_positives"]
        assert stats["augmented_high_iou_fraction"] == pytest.approx(stats["original_high_iou_fraction"])
