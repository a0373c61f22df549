"""APDI: Augmentierung der Proposals durch den Detektor selbst.

Ablauf je Bild:
1. Der RoI-Head verfeinert alle Original-Proposals (nur lesend, ohne Gradient).
2. Positive Originale (IoU >= fg_threshold) werden vor die verfeinerten
   Proposals gehängt.
3. Klassifikation trainiert auf verfeinerten Proposals, Regression auf allen
   augmentierten Proposals mit IoU >= 0.5, der IoU-Zweig auf allen mit
   IoU >= 0.3 und zusätzlich auf einer Stichprobe von Hintergrundboxen.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TypeVar

import numpy as np

from models.config import IoUTargetSource, TrainConfig
from models.head import HeadModel, LossReport
from models.matching import NO_MATCH
from models.proposals import AugmentedProposals, ProposalSet, Provenance
from models.scene import GroundTruth
from services import box_iou_head
from services.box_iou_head import HeadBatch
from services.matcher import match, sample
from utils.box_ops import decode_boxes, encode_boxes, iou_matrix, nonempty_mask
from utils.roi_pooling import FeatureExtractor

logger = logging.getLogger(__name__)

REG_THRESHOLD = 0.5
IOU_BRANCH_THRESHOLD = 0.3

T = TypeVar("T")


@dataclass
class TrainingSample:
    """Ein Trainingsbild mit Ground Truth und Original-Proposals."""

    image: np.ndarray
    gt: GroundTruth
    proposals: ProposalSet


@dataclass
class RoutedSamples:
    """Aufteilung augmentierter Proposals auf die drei Trainingsaufgaben."""

    cls_indices: np.ndarray
    reg_indices: np.ndarray
    reg_targets: np.ndarray
    iou_indices: np.ndarray
    iou_targets: np.ndarray


@dataclass
class CascadeStageReport:
    """Verluste und Positivzahl einer Kaskadenstufe."""

    stage: int
    threshold: float
    losses: LossReport
    num_inputs: int = 0
    num_positive: int = 0
    input_boxes: list[np.ndarray] = field(default_factory=list)


def _extractor_for(model: HeadModel, image) -> FeatureExtractor:
    extractor = image if isinstance(image, FeatureExtractor) else FeatureExtractor(image, model.grid_size)
    if extractor.feature_dim != model.feature_dim:
        raise ValueError(
            f"Merkmalsdimension des Bildes ({extractor.feature_dim}) passt nicht zum Modell ({model.feature_dim})"
        )
    return extractor


def refine_boxes(model: HeadModel, image, boxes: np.ndarray) -> np.ndarray:
    """
    Verfeinert Boxen mit dem Regressionszweig und begrenzt sie auf das Bild.

    Das Modell wird nur gelesen; während der Rechnung sind seine Gewichte
    schreibgeschützt.

    Args:
        model: Der Head
        image: Bild (C, H, W) oder ein FeatureExtractor
        boxes: Boxen (N, 4) mit positiver Fläche

    Returns:
        Verfeinerte Boxen (N, 4)
    """
    extractor = _extractor_for(model, image)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if len(boxes) == 0:
        return boxes.copy()
    with model.frozen():
        output = box_iou_head.forward(model, extractor.pool(boxes))
        return decode_boxes(boxes, output.deltas, model.delta_weights, clip_region=extractor.bounds)


def _max_iou(boxes: np.ndarray, gt: GroundTruth) -> tuple[np.ndarray, np.ndarray]:
    ious = iou_matrix(boxes, gt.boxes)
    if ious.shape[1] == 0 or len(boxes) == 0:
        return np.zeros(len(boxes)), np.full(len(boxes), NO_MATCH, dtype=np.int64)
    matched = np.argmax(ious, axis=1).astype(np.int64)
    max_iou = ious[np.arange(len(boxes)), matched]
    return max_iou, np.where(max_iou > 0, matched, NO_MATCH)


def augment_proposals(
    originals: ProposalSet,
    gt: GroundTruth,
    model: HeadModel,
    image,
    fg_threshold: float = 0.5,
) -> AugmentedProposals:
    """
    Augmentiert Proposals: positive Originale gefolgt von allen verfeinerten.

    Args:
        originals: Original-Proposals des Bildes
        gt: Ground Truth
        model: RoI-Head (nur lesend)
        image: Bild (C, H, W) oder FeatureExtractor
        fg_threshold: Schwelle für positive Originale

    Returns:
        AugmentedProposals mit |Positive| + |Originale| Einträgen
    """
    extractor = _extractor_for(model, image)
    boxes = originals.boxes
    if len(boxes) == 0:
        return AugmentedProposals(
            image_id=originals.image_id,
            boxes=np.zeros((0, 4)),
            provenance=[],
            max_ious=np.zeros(0),
            matched_gt=np.zeros(0, dtype=np.int64),
            source_index=np.zeros(0, dtype=np.int64),
        )

    original_ious, _ = _max_iou(boxes, gt)
    positive_idx = np.flatnonzero(original_ious >= fg_threshold)
    refined = refine_boxes(model, extractor, boxes)

    aug_boxes = np.concatenate([boxes[positive_idx], refined], axis=0)
    provenance = [Provenance.POSITIVE_ORIGINAL] * len(positive_idx) + [Provenance.REFINED] * len(refined)
    max_ious, matched = _max_iou(aug_boxes, gt)
    return AugmentedProposals(
        image_id=originals.image_id,
        boxes=aug_boxes,
        provenance=provenance,
        max_ious=max_ious,
        matched_gt=matched,
        source_index=np.concatenate([positive_idx, np.arange(len(boxes))]).astype(np.int64),
    )


def route_training_samples(
    aug: AugmentedProposals,
    gt: GroundTruth,
    reg_threshold: float = REG_THRESHOLD,
    iou_threshold: float = IOU_BRANCH_THRESHOLD,
    iou_source: IoUTargetSource = IoUTargetSource.AUGMENTED,
    delta_weights=None,
) -> RoutedSamples:
    """
    Verteilt augmentierte Proposals auf Klassifikation, Regression und IoU-Zweig.

    - Klassifikation: nur verfeinerte Proposals (anschließend gesampelt)
    - Regression: alle mit IoU >= reg_threshold, Ziel = Deltas zur zugeordneten GT
    - IoU-Zweig: alle mit IoU >= iou_threshold, Ziel = ihre IoU
    """
    refined = aug.refined_mask
    cls_indices = np.flatnonzero(refined)

    reg_indices = np.flatnonzero(aug.max_ious >= reg_threshold)
    reg_targets = np.zeros((len(reg_indices), 4))
    if len(reg_indices):
        kwargs = {} if delta_weights is None else {"weights": delta_weights}
        reg_targets = encode_boxes(aug.boxes[reg_indices], gt.boxes[aug.matched_gt[reg_indices]], **kwargs)

    iou_mask = aug.max_ious >= iou_threshold
    if IoUTargetSource(iou_source) == IoUTargetSource.REFINED:
        iou_mask &= refined
    iou_indices = np.flatnonzero(iou_mask)
    return RoutedSamples(
        cls_indices=cls_indices,
        reg_indices=reg_indices,
        reg_targets=reg_targets,
        iou_indices=iou_indices,
        iou_targets=aug.max_ious[iou_indices],
    )


def _cap(indices: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if cap <= 0 or len(indices) <= cap:
        return indices
    return np.sort(rng.permutation(indices)[:cap])


def _iou_background(
    max_ious: np.ndarray, candidates: np.ndarray, config: TrainConfig, rng: np.random.Generator
) -> np.ndarray:
    """Hintergrundboxen für den IoU-Zweig: IoU < iou_branch_threshold, höchstens iou_background_per_image."""
    if config.iou_background_per_image == 0:
        return np.zeros(0, dtype=np.int64)
    low = candidates[max_ious[candidates] < config.iou_branch_threshold]
    return _cap(low, config.iou_background_per_image, rng)


def _standard_batch(
    model: HeadModel,
    extractor: FeatureExtractor,
    boxes: np.ndarray,
    gt: GroundTruth,
    config: TrainConfig,
    rng: np.random.Generator,
    threshold: float,
    use_iou: bool,
) -> tuple[HeadBatch, int]:
    """Klassisches Training: Match und Sampling auf den gegebenen Proposals."""
    m = match(boxes, gt, threshold, model.num_classes)
    batch = sample(m, config.batch_size_per_image, config.positive_fraction, rng, model.delta_weights)
    features = extractor.pool(boxes) if len(boxes) else np.zeros((0, model.feature_dim))

    iou_idx = np.zeros(0, dtype=np.int64)
    if use_iou:
        iou_idx = _cap(np.flatnonzero(m.max_iou >= config.iou_branch_threshold), config.routed_cap_per_image, rng)
        background = _iou_background(m.max_iou, np.arange(len(boxes)), config, rng)
        iou_idx = np.concatenate([iou_idx, background]).astype(np.int64)

    head_batch = HeadBatch(
        cls_features=features[batch.indices],
        cls_targets=batch.class_targets,
        reg_features=features[batch.indices[batch.positive]],
        reg_targets=batch.delta_targets[batch.positive],
        iou_features=features[iou_idx],
        iou_targets=m.max_iou[iou_idx],
    )
    return head_batch, m.num_positive


def _augmented_batch(
    model: HeadModel,
    extractor: FeatureExtractor,
    originals: ProposalSet,
    gt: GroundTruth,
    config: TrainConfig,
    rng: np.random.Generator,
    threshold: float,
    use_iou: bool,
) -> tuple[HeadBatch, AugmentedProposals]:
    """APDI-Training: Augmentieren, Verteilen, Klassifikationsmenge sampeln."""
    aug = augment_proposals(originals, gt, model, extractor, threshold)
    routed = route_training_samples(
        aug,
        gt,
        reg_threshold=threshold,
        iou_threshold=config.iou_branch_threshold,
        iou_source=config.iou_target_source,
        delta_weights=model.delta_weights,
    )
    usable = nonempty_mask(aug.boxes)
    cls_candidates = routed.cls_indices[usable[routed.cls_indices]]
    m = match(aug.boxes[cls_candidates], gt, threshold, model.num_classes)
    batch = sample(m, config.batch_size_per_image, config.positive_fraction, rng, model.delta_weights)
    cls_idx = cls_candidates[batch.indices]

    keep_reg = _cap(np.arange(len(routed.reg_indices)), config.routed_cap_per_image, rng)
    reg_idx = routed.reg_indices[keep_reg]
    iou_idx = np.zeros(0, dtype=np.int64)
    iou_targets = np.zeros(0)
    if use_iou:
        keep_iou = _cap(np.arange(len(routed.iou_indices)), config.routed_cap_per_image, rng)
        background = _iou_background(aug.max_ious, cls_candidates, config, rng)
        iou_idx = np.concatenate([routed.iou_indices[keep_iou], background]).astype(np.int64)
        iou_targets = np.concatenate([routed.iou_targets[keep_iou], aug.max_ious[background]])

    needed = np.unique(np.concatenate([cls_idx, reg_idx, iou_idx]).astype(np.int64))
    features = np.zeros((len(aug.boxes), model.feature_dim))
    if len(needed):
        features[needed] = extractor.pool(aug.boxes[needed])

    head_batch = HeadBatch(
        cls_features=features[cls_idx],
        cls_targets=batch.class_targets,
        reg_features=features[reg_idx],
        reg_targets=routed.reg_targets[keep_reg],
        iou_features=features[iou_idx],
        iou_targets=iou_targets,
    )
    return head_batch, aug


def _map_ordered(fn: Callable[..., T], items: Sequence, workers: int) -> list[T]:
    """Parallele Abbildung; die Ergebnisreihenfolge entspricht der Eingabe."""
    if workers <= 1 or len(items) <= 1:
        return [fn(*item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: fn(*item), items))


def _loss_weights(config: TrainConfig, use_iou: bool) -> tuple[float, float, float]:
    return config.cls_loss_weight, config.reg_loss_weight, config.iou_loss_weight if use_iou else 0.0


def train_step(
    model: HeadModel,
    samples: Sequence[TrainingSample],
    config: TrainConfig,
    rng: np.random.Generator,
    iteration: int = 0,
    workers: int = 1,
) -> tuple[HeadModel, LossReport]:
    """
    Ein SGD-Schritt über mehrere Bilder.

    - baseline: Match/Sampling auf Originalen, Klassifikation + Regression
    - apdi: erst augmentieren, dann verteilen
    - box-iou / apdi+box-iou: zusätzlich BCE-Verlust des IoU-Zweigs

    Pro Bild wird ein eigener Zufallsgenerator abgeleitet, sodass das
    Ergebnis nicht von der Anzahl der Worker abhängt.
    """
    use_iou = config.mode.uses_iou
    augment = config.mode.uses_apdi and iteration >= config.augment_warmup_iterations
    child_rngs = rng.spawn(len(samples))

    def build(sample_: TrainingSample, child: np.random.Generator) -> HeadBatch:
        extractor = _extractor_for(model, sample_.image)
        if augment:
            head_batch, _ = _augmented_batch(
                model, extractor, sample_.proposals, sample_.gt, config, child, config.fg_threshold, use_iou
            )
        else:
            head_batch, _ = _standard_batch(
                model, extractor, sample_.proposals.boxes, sample_.gt, config, child, config.fg_threshold, use_iou
            )
        return head_batch

    batches = _map_ordered(build, list(zip(samples, child_rngs)), workers)
    batch = HeadBatch.concatenate(batches, model.feature_dim)
    report, grads = box_iou_head.loss_and_gradients(model, batch, _loss_weights(config, use_iou))
    updated = box_iou_head.sgd_step(model, grads, config.learning_rate(iteration), config.weight_decay)
    return updated, report


def cascade_train_step(
    models: Sequence[HeadModel],
    samples: Sequence[TrainingSample],
    config: TrainConfig,
    rng: np.random.Generator,
    thresholds: Sequence[float],
    iteration: int = 0,
    workers: int = 1,
    keep_inputs: bool = False,
) -> tuple[list[HeadModel], list[CascadeStageReport]]:
    """
    Ein Trainingsschritt der dreistufigen Kaskade.

    Stufe 1 sieht bei APDI die vom ersten Head augmentierten Proposals;
    Stufe i+1 bekommt die von Stufe i verfeinerten Boxen. Jede Stufe matcht
    mit ihrer eigenen IoU-Schwelle.
    """
    if len(models) != 3 or len(thresholds) != 3:
        raise ValueError(f"Kaskade braucht genau 3 Stufen, erhalten: {len(models)}")
    use_iou = config.mode.uses_iou or config.cascade_box_iou
    augment = config.mode.uses_apdi and iteration >= config.augment_warmup_iterations
    child_rngs = rng.spawn(len(samples))

    def build(sample_: TrainingSample, child: np.random.Generator):
        batches: list[HeadBatch] = []
        positives: list[int] = []
        inputs: list[np.ndarray] = []
        boxes = sample_.proposals.boxes
        for stage, (head, threshold) in enumerate(zip(models, thresholds)):
            extractor = _extractor_for(head, sample_.image)
            inputs.append(boxes)
            if stage == 0 and augment:
                originals = ProposalSet(image_id=sample_.gt.image_id, boxes=boxes)
                head_batch, aug = _augmented_batch(
                    head, extractor, originals, sample_.gt, config, child, threshold, use_iou
                )
                refined = aug.refined_boxes()
                positives.append(match(boxes, sample_.gt, threshold, head.num_classes).num_positive)
            else:
                head_batch, num_pos = _standard_batch(
                    head, extractor, boxes, sample_.gt, config, child, threshold, use_iou
                )
                refined = refine_boxes(head, extractor, boxes)
                positives.append(num_pos)
            batches.append(head_batch)
            boxes = refined[nonempty_mask(refined)]
        return batches, positives, inputs

    per_image = _map_ordered(build, list(zip(samples, child_rngs)), workers)

    updated: list[HeadModel] = []
    reports: list[CascadeStageReport] = []
    for stage, (head, threshold) in enumerate(zip(models, thresholds)):
        batch = HeadBatch.concatenate([item[0][stage] for item in per_image], head.feature_dim)
        losses, grads = box_iou_head.loss_and_gradients(head, batch, _loss_weights(config, use_iou))
        updated.append(box_iou_head.sgd_step(head, grads, config.learning_rate(iteration), config.weight_decay))
        stage_inputs = [item[2][stage] for item in per_image]
        reports.append(
            CascadeStageReport(
                stage=stage + 1,
                threshold=float(threshold),
                losses=losses,
                num_inputs=sum(len(b) for b in stage_inputs),
                num_positive=sum(item[1][stage] for item in per_image),
                input_boxes=stage_inputs if keep_inputs else [],
            )
        )
    return updated, reports


def ibbr_refine(model: HeadModel, proposals: ProposalSet, image, iterations: int = 2) -> ProposalSet:
    """
    Iterative Box-Regression (nur Inferenz): wendet die Verfeinerung
    `iterations`-mal hintereinander an.

    Boxen, die nach einem Schritt keine Fläche mehr haben, bleiben stehen.
    """
    if iterations < 1:
        raise ValueError("iterations muss >= 1 sein")
    extractor = _extractor_for(model, image)
    boxes = proposals.boxes.copy()
    for _ in range(iterations):
        movable = nonempty_mask(boxes)
        if np.any(movable):
            boxes[movable] = refine_boxes(model, extractor, boxes[movable])
    return ProposalSet(
        image_id=proposals.image_id,
        boxes=boxes,
        scores=None if proposals.scores is None else proposals.scores.copy(),
        provenance=[Provenance.REFINED] * len(boxes),
    )


def augmentation_statistics(
    samples: Sequence[TrainingSample],
    model: HeadModel,
    fg_threshold: float = 0.5,
    high_iou: float = 0.8,
) -> dict[str, float]:
    """
    Anteil positiver Proposals mit IoU >= high_iou, getrennt für Originale
    und augmentierte Proposals.
    """
    original: list[np.ndarray] = []
    augmented: list[np.ndarray] = []
    for s in samples:
        ious, _ = _max_iou(s.proposals.boxes, s.gt)
        original.append(ious[ious >= fg_threshold])
        aug = augment_proposals(s.proposals, s.gt, model, s.image, fg_threshold)
        augmented.append(aug.max_ious[aug.max_ious >= fg_threshold])
    orig = np.concatenate(original) if original else np.zeros(0)
    augm = np.concatenate(augmented) if augmented else np.zeros(0)
    return {
        "original_positives": float(len(orig)),
        "augmented_positives": float(len(augm)),
        "original_high_iou_fraction": float(np.mean(orig > high_iou)) if len(orig) else 0.0,
        "augmented_high_iou_fraction": float(np.mean(augm > high_iou)) if len(augm) else 0.0,
    }

