"""Zweistufige Inferenz: Verfeinerung, Scoring, Kalibrierung und NMS."""

import dataclasses
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from models.box import Box
from models.config import ExperimentConfig, InferenceConfig
from models.detection import Detection
from models.head import HeadModel, HeadOutput
from models.proposals import ProposalSet
from services import box_iou_head
from utils.box_ops import clip_boxes, decode_boxes, iou_matrix, nonempty_mask
from utils.roi_pooling import FeatureExtractor

logger = logging.getLogger(__name__)


def calibrate(raw_scores, iou_score) -> np.ndarray:
    """
    Multipliziert Klassenscores mit dem klassenunabhängigen IoU-Score.

    Args:
        raw_scores: Scores je Klasse, (K,) oder (N, K)
        iou_score: Skalar oder (N,)

    Returns:
        Kalibrierte Scores in derselben Form wie raw_scores
    """
    scores = np.asarray(raw_scores, dtype=np.float64)
    iou = np.asarray(iou_score, dtype=np.float64)
    if np.any((scores < 0) | (scores > 1)) or np.any((iou < 0) | (iou > 1)):
        raise ValueError("Scores und IoU-Score müssen in [0, 1] liegen")
    if scores.ndim == 2 and iou.ndim == 1:
        iou = iou[:, None]
    return scores * iou


def nms(boxes, scores, iou_threshold: float) -> np.ndarray:
    """
    Greedy-NMS für eine Klasse.

    Sortiert absteigend nach Score (bei Gleichstand gewinnt der kleinere
    Index) und behält eine Box genau dann, wenn ihre IoU zu allen bereits
    behaltenen Boxen < iou_threshold ist.

    Returns:
        Indizes der behaltenen Boxen in Score-Reihenfolge
    """
    if not 0 < iou_threshold < 1:
        raise ValueError(f"iou_threshold muss in (0, 1) liegen: {iou_threshold}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.argsort(-scores, kind="mergesort")
    ious = iou_matrix(boxes, boxes)
    suppressed = np.zeros(len(boxes), dtype=bool)
    kept: list[int] = []
    for i in order:
        if suppressed[i]:
            continue
        kept.append(int(i))
        suppressed |= ious[i] >= iou_threshold
    return np.asarray(kept, dtype=np.int64)


def nms_detections(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """NMS auf Detektionen einer Klasse."""
    if not detections:
        return []
    boxes = np.stack([d.box.to_array() for d in detections])
    keep = nms(boxes, [d.score for d in detections], iou_threshold)
    return [detections[i] for i in keep]


class Detector:
    """
    Inferenzdienst für einen einzelnen Head oder eine dreistufige Kaskade.

    Zählt die Head-Vorwärtsrechnungen pro Proposal (forward_count).
    """

    def __init__(
        self,
        heads: Sequence[HeadModel],
        config: Optional[InferenceConfig] = None,
        cascade_refine_first: bool = False,
    ):
        if len(heads) not in (1, 3):
            raise ValueError(f"Erwartet 1 Head oder 3 Kaskadenstufen, erhalten: {len(heads)}")
        self.heads = list(heads)
        self.config = config or InferenceConfig(calibrate=False, refine_passes=0)
        self.cascade_refine_first = cascade_refine_first
        self.forward_count = 0
        self._lock = threading.Lock()

    @property
    def is_cascade(self) -> bool:
        return len(self.heads) == 3

    @property
    def num_classes(self) -> int:
        return self.heads[0].num_classes

    def reset_counter(self) -> None:
        with self._lock:
            self.forward_count = 0

    def _forward(self, head: HeadModel, extractor: FeatureExtractor, boxes: np.ndarray) -> HeadOutput:
        with self._lock:
            self.forward_count += len(boxes)
        return box_iou_head.forward(head, extractor.pool(boxes))

    def _refine(self, head: HeadModel, extractor: FeatureExtractor, boxes: np.ndarray) -> np.ndarray:
        if len(boxes) == 0:
            return boxes
        out = self._forward(head, extractor, boxes)
        refined = decode_boxes(boxes, out.deltas, head.delta_weights, clip_region=extractor.bounds)
        return refined[nonempty_mask(refined)]

    def _score_single(self, extractor: FeatureExtractor, boxes: np.ndarray):
        head = self.heads[0]
        for _ in range(self.config.refine_passes or 0):
            boxes = self._refine(head, extractor, boxes)
        if len(boxes) == 0:
            return boxes, np.zeros((0, head.num_classes + 1)), np.zeros((0, 4)), np.zeros(0)
        out = self._forward(head, extractor, boxes)
        return boxes, out.probs, out.deltas, out.iou_scores

    def _score_cascade(self, extractor: FeatureExtractor, boxes: np.ndarray):
        if self.cascade_refine_first:
            boxes = self._refine(self.heads[0], extractor, boxes)
        for head in self.heads[:-1]:
            boxes = self._refine(head, extractor, boxes)
        last = self.heads[-1]
        if len(boxes) == 0:
            return boxes, np.zeros((0, last.num_classes + 1)), np.zeros((0, 4)), np.zeros(0)
        outputs = [self._forward(head, extractor, boxes) for head in self.heads]
        probs = np.mean([o.probs for o in outputs], axis=0)
        return boxes, probs, outputs[-1].deltas, outputs[-1].iou_scores

    def infer_image(self, image: np.ndarray, proposals: ProposalSet) -> list[Detection]:
        """
        Detektionen eines Bildes.

        Durchlauf 1 verfeinert die Proposals (derselbe Pfad wie bei der
        Augmentierung), Durchlauf 2 liefert Klassenscores, finale Deltas und
        IoU-Score. Danach Kalibrierung, Score-Schwelle, NMS je Klasse und
        Top-k.
        """
        head = self.heads[0]
        extractor = FeatureExtractor(image, head.grid_size)
        boxes = clip_boxes(proposals.boxes, extractor.bounds)
        boxes = boxes[nonempty_mask(boxes)]

        if self.is_cascade:
            boxes, probs, deltas, iou_scores = self._score_cascade(extractor, boxes)
        else:
            boxes, probs, deltas, iou_scores = self._score_single(extractor, boxes)
        if len(boxes) == 0:
            return []

        final_head = self.heads[-1]
        out_boxes = decode_boxes(boxes, deltas, final_head.delta_weights, clip_region=extractor.bounds)
        valid = nonempty_mask(out_boxes)
        raw = probs[:, : final_head.num_classes]
        scores = calibrate(raw, iou_scores) if self.config.calibrate else raw

        detections: list[Detection] = []
        for class_id in range(final_head.num_classes):
            candidates = np.flatnonzero(valid & (scores[:, class_id] > self.config.score_threshold))
            if len(candidates) == 0:
                continue
            keep = candidates[nms(out_boxes[candidates], scores[candidates, class_id], self.config.nms_threshold)]
            detections.extend(
                Detection(
                    image_id=proposals.image_id,
                    box=Box.from_array(out_boxes[i]),
                    class_id=class_id,
                    raw_score=float(raw[i, class_id]),
                    iou_score=float(iou_scores[i]),
                    score=float(scores[i, class_id]),
                )
                for i in keep
            )
        order = np.argsort([-d.score for d in detections], kind="mergesort")
        return [detections[i] for i in order[: self.config.max_detections]]

    def infer_many(self, items: Sequence[tuple[np.ndarray, ProposalSet]], workers: int = 1) -> list[Detection]:
        """Inferenz über mehrere Bilder; Ausgabe geordnet nach image_id."""
        if workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                per_image = list(pool.map(lambda item: self.infer_image(*item), items))
        else:
            per_image = [self.infer_image(image, proposals) for image, proposals in items]
        order = sorted(range(len(items)), key=lambda i: items[i][1].image_id)
        detections = [d for i in order for d in per_image[i]]
        logger.info("%d Detektionen für %d Bilder", len(detections), len(items))
        return detections


def build_detector(
    heads: Sequence[HeadModel],
    config: ExperimentConfig,
    calibrate: Optional[bool] = None,
    refine_passes: Optional[int] = None,
) -> Detector:
    """
    Detector passend zum Trainingsmodus.

    Ohne Überschreibung gilt: Kalibrierung, wenn ein IoU-Zweig trainiert
    wurde; ein Verfeinerungsdurchlauf bei APDI. In der Kaskade verfeinert
    der erste Head bei APDI einmal vorab.
    """
    inference = config.resolved_inference()
    overrides = {}
    if calibrate is not None:
        overrides["calibrate"] = calibrate
    if refine_passes is not None:
        overrides["refine_passes"] = refine_passes
    inference = dataclasses.replace(inference, **overrides)
    return Detector(
        heads,
        inference,
        cascade_refine_first=len(heads) == 3 and config.train.mode.uses_apdi,
    )
