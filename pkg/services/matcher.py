"""Zuordnung von Proposals zur Ground Truth und Vorder-/Hintergrund-Sampling."""

import math

import numpy as np

from models.box import as_box_array
from models.matching import NO_MATCH, MatchResult, SampleBatch
from models.scene import GroundTruth
from utils.box_ops import DEFAULT_DELTA_WEIGHTS, encode_boxes, iou_matrix

DEFAULT_BATCH_SIZE_PER_IMAGE = 512
DEFAULT_POSITIVE_FRACTION = 0.25

# IoU-Schwellen der drei Kaskadenstufen
CASCADE_THRESHOLDS: dict[str, tuple[float, float, float]] = {
    "baseline": (0.5, 0.6, 0.7),
    "apdi": (0.5, 0.65, 0.8),
}


def match(proposal_boxes, gt: GroundTruth, fg_threshold: float, num_classes: int) -> MatchResult:
    """
    Ordnet jede Proposal der GT-Box mit maximaler IoU zu.

    Bei gleicher IoU gewinnt der kleinste GT-Index. Positiv ist eine
    Proposal genau dann, wenn max_iou >= fg_threshold.

    Args:
        proposal_boxes: Boxen (N, 4) oder ein ProposalSet
        gt: Ground Truth des Bildes
        fg_threshold: Vordergrund-Schwelle in (0, 1]
        num_classes: K; Hintergrund erhält die Klasse K

    Returns:
        MatchResult
    """
    if not 0 < fg_threshold <= 1:
        raise ValueError(f"fg_threshold muss in (0, 1] liegen: {fg_threshold}")
    boxes = as_box_array(getattr(proposal_boxes, "boxes", proposal_boxes))
    ious = iou_matrix(boxes, gt.boxes)
    n = len(boxes)

    if ious.shape[1] == 0:
        matched = np.full(n, NO_MATCH, dtype=np.int64)
        max_iou = np.zeros(n)
    else:
        matched = np.argmax(ious, axis=1).astype(np.int64)
        max_iou = ious[np.arange(n), matched]
    positive = max_iou >= fg_threshold

    class_targets = np.full(n, num_classes, dtype=np.int64)
    matched_boxes = np.zeros((n, 4))
    if ious.shape[1] > 0 and n > 0:
        class_targets[positive] = gt.classes[matched[positive]]
        has_overlap = max_iou > 0
        matched_boxes[has_overlap] = gt.boxes[matched[has_overlap]]
        matched = np.where(has_overlap, matched, NO_MATCH)

    return MatchResult(
        proposal_boxes=boxes,
        matched_gt=matched,
        max_iou=max_iou,
        positive=positive,
        class_targets=class_targets,
        matched_boxes=matched_boxes,
        background_class=num_classes,
    )


def sample(
    match_result: MatchResult,
    batch_size: int,
    positive_fraction: float,
    rng: np.random.Generator,
    delta_weights=DEFAULT_DELTA_WEIGHTS,
) -> SampleBatch:
    """
    Wählt höchstens ceil(batch_size · positive_fraction) Positive gleichverteilt aus
    und füllt mit Negativen auf. Fehlen Negative, wird mit Positiven aufgefüllt.

    Returns:
        SampleBatch mit Positiven zuerst, danach Negativen
    """
    if not 0 < positive_fraction <= 1:
        raise ValueError(f"positive_fraction muss in (0, 1] liegen: {positive_fraction}")
    pos_idx = np.flatnonzero(match_result.positive)
    neg_idx = np.flatnonzero(~match_result.positive)

    quota = math.ceil(batch_size * positive_fraction)
    n_pos = min(len(pos_idx), quota)
    n_neg = min(len(neg_idx), batch_size - n_pos)
    n_pos = min(len(pos_idx), batch_size - n_neg)

    chosen_pos = rng.permutation(pos_idx)[:n_pos]
    chosen_neg = rng.permutation(neg_idx)[:n_neg]
    indices = np.concatenate([chosen_pos, chosen_neg]).astype(np.int64)

    positive = match_result.positive[indices]
    delta_targets = np.zeros((len(indices), 4))
    if n_pos:
        delta_targets[:n_pos] = encode_boxes(
            match_result.proposal_boxes[chosen_pos],
            match_result.matched_boxes[chosen_pos],
            delta_weights,
        )
    return SampleBatch(
        indices=indices,
        class_targets=match_result.class_targets[indices],
        positive=positive,
        delta_targets=delta_targets,
        iou_targets=match_result.max_iou[indices],
    )


def cascade_thresholds(mode: str) -> tuple[float, float, float]:
    """IoU-Schwellen der drei Kaskadenstufen ('baseline' oder 'apdi')."""
    try:
        return CASCADE_THRESHOLDS[str(mode)]
    except KeyError:
        raise ValueError(f"Unbekannter Schwellenmodus: {mode!r}") from None
