"""Stochastischer Proposal-Generator als Ersatz für ein RPN."""

from typing import Optional

import numpy as np

from models.box import Box
from models.proposals import ProposalSet, Provenance
from models.scene import GroundTruth
from utils.box_ops import clip_boxes, decode_boxes, nonempty_mask

# Jitter im kodierten Raum mit Einheitsgewichten: Sigma ist relativ zur Boxgröße
JITTER_WEIGHTS = (1.0, 1.0, 1.0, 1.0)
SCORE_NOISE = 0.05


def generate_proposals(
    gt: GroundTruth,
    noise_sigma_pos: float,
    negatives_per_image: int,
    rng: np.random.Generator,
    jitters_per_gt: int = 8,
    min_size: float = 1.0,
    negative_size: Optional[tuple[float, float]] = None,
) -> ProposalSet:
    """
    Erzeugt Original-Proposals für ein Bild.

    Für jede GT-Box werden `jitters_per_gt` Kopien erzeugt, indem gaußsche
    Deltas (Standardabweichung `noise_sigma_pos`) auf die GT-Box dekodiert
    werden. Dazu kommen `negatives_per_image` gleichverteilte Zufallsboxen.
    Der Objectness-Score fällt mit der Jitter-Stärke und ist verrauscht.

    Args:
        gt: Ground Truth des Bildes
        noise_sigma_pos: Standardabweichung der Deltas (>= 0)
        negatives_per_image: Anzahl zufälliger Boxen
        rng: Zufallsgenerator
        jitters_per_gt: Kopien pro GT-Box
        min_size: Mindestkantenlänge; Jitter-Kopien werden darauf vergrößert,
            kleinere Zufallsboxen entfallen
        negative_size: (min, max) Kantenlänge der Zufallsboxen

    Returns:
        ProposalSet mit Herkunft 'original'
    """
    if noise_sigma_pos < 0:
        raise ValueError("noise_sigma_pos muss >= 0 sein")
    bounds = gt.bounds or _extent(gt)

    n_gt = len(gt)
    anchors = np.repeat(gt.boxes, jitters_per_gt, axis=0)
    deltas = rng.normal(0.0, 1.0, size=(len(anchors), 4)) * noise_sigma_pos
    positives = decode_boxes(anchors, deltas, JITTER_WEIGHTS) if n_gt else np.zeros((0, 4))
    if bounds is not None and len(positives):
        positives = _clamp_min_size(clip_boxes(positives, bounds), min_size, bounds)
    magnitude = np.linalg.norm(deltas, axis=1)
    pos_scores = np.exp(-magnitude) + rng.normal(0.0, SCORE_NOISE, size=len(positives))

    negatives = np.zeros((0, 4))
    neg_scores = np.zeros(0)
    if negatives_per_image > 0 and bounds is not None:
        width = bounds.x2 - bounds.x1
        height = bounds.y2 - bounds.y1
        lo, hi = negative_size or (min(8.0, width, height), 0.5 * min(width, height))
        w = rng.uniform(lo, hi, size=negatives_per_image)
        h = rng.uniform(lo, hi, size=negatives_per_image)
        x = bounds.x1 + rng.uniform(0.0, 1.0, size=negatives_per_image) * (width - w)
        y = bounds.y1 + rng.uniform(0.0, 1.0, size=negatives_per_image) * (height - h)
        negatives = np.stack((x, y, x + w, y + h), axis=1)
        neg_scores = rng.uniform(0.0, 0.6, size=negatives_per_image)

    boxes = np.concatenate([positives, negatives], axis=0)
    scores = np.clip(np.concatenate([pos_scores, neg_scores]), 0.0, 1.0)
    # nur Zufallsboxen werden gefiltert, jede GT-Box behält alle Jitter-Kopien
    widths = negatives[:, 2] - negatives[:, 0]
    heights = negatives[:, 3] - negatives[:, 1]
    keep_neg = nonempty_mask(negatives) & (widths >= min_size) & (heights >= min_size)
    keep = np.concatenate([np.ones(len(positives), dtype=bool), keep_neg])
    return ProposalSet(
        image_id=gt.image_id,
        boxes=boxes[keep],
        scores=scores[keep],
        provenance=[Provenance.ORIGINAL] * int(keep.sum()),
    )


def _extent(gt: GroundTruth) -> Optional[Box]:
    """Umschließender Bereich der GT-Boxen, falls keine Bildgröße bekannt ist."""
    if len(gt) == 0:
        return None
    return Box(0.0, 0.0, float(gt.boxes[:, 2].max()), float(gt.boxes[:, 3].max()))


def _clamp_min_size(boxes: np.ndarray, min_size: float, bounds: Box) -> np.ndarray:
    """
    Vergrößert zu schmale Boxen um ihren Mittelpunkt auf `min_size` und
    schiebt sie zurück in den Bildbereich.
    """
    boxes = boxes.copy()
    for lo_col, hi_col, lo, hi in ((0, 2, bounds.x1, bounds.x2), (1, 3, bounds.y1, bounds.y2)):
        size = np.maximum(boxes[:, hi_col] - boxes[:, lo_col], min(min_size, hi - lo))
        center = 0.5 * (boxes[:, lo_col] + boxes[:, hi_col])
        start = np.clip(center - 0.5 * size, lo, hi - size)
        boxes[:, lo_col] = start
        boxes[:, hi_col] = start + size
    return boxes
