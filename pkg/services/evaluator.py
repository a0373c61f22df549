"""COCO-artige Auswertung: AR für Proposals, AP für Detektionen, IoU-Histogramme."""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from models.detection import Detection
from models.proposals import ProposalSet, Provenance
from models.report import COCO_IOU_THRESHOLDS, ARTable, EvalReport, IoUHistogram
from models.scene import GroundTruth
from utils.box_ops import box_areas, iou_matrix
from utils.file_helper import FileHelper

logger = logging.getLogger(__name__)

RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)
AREA_RANGES: dict[str, tuple[float, float]] = {
    "all": (0.0, 1e10),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, 1e10),
}
HISTOGRAM_POPULATIONS = ("original-positive", "augmented-positive")
DEFAULT_HISTOGRAM_BINS = 10


def average_recall(
    proposals: Mapping[int, ProposalSet],
    gts: Mapping[int, GroundTruth],
    budget: int,
    thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
) -> ARTable:
    """
    Recall der Ground Truth je IoU-Schwelle bei höchstens `budget` Proposals pro Bild.

    Jede GT (in Indexreihenfolge) wird gierig der besten noch freien
    Proposal mit IoU >= t zugeordnet.

    Raises:
        ValueError: bei budget < 1 oder wenn der Datensatz keine GT enthält
    """
    if budget < 1:
        raise ValueError("budget muss >= 1 sein")
    total = sum(len(gt) for gt in gts.values())
    if total == 0:
        raise ValueError("Recall ist ohne Ground Truth nicht definiert")

    matched = np.zeros(len(thresholds), dtype=np.int64)
    for image_id, gt in gts.items():
        if len(gt) == 0 or image_id not in proposals:
            continue
        ious = iou_matrix(gt.boxes, proposals[image_id].ranked(budget))
        if ious.shape[1] == 0:
            continue
        for t_idx, t in enumerate(thresholds):
            used = np.zeros(ious.shape[1], dtype=bool)
            for g in range(len(gt)):
                candidates = np.where(used, -1.0, ious[g])
                best = int(np.argmax(candidates))
                if candidates[best] >= t:
                    used[best] = True
                    matched[t_idx] += 1

    table = ARTable(
        thresholds=tuple(float(t) for t in thresholds),
        recalls=tuple(float(m / total) for m in matched),
        budget=budget,
        num_gts=total,
    )
    if not table.is_monotone():
        logger.warning("AR@t ist nicht monoton fallend: %s", table.recalls)
    return table


def _evaluate_image(
    dt_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    thresholds: Sequence[float],
    area_range: tuple[float, float],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Matching eines Bildes und einer Klasse nach dem COCO-Protokoll.

    Detektionen müssen bereits absteigend nach Score sortiert sein.

    Returns:
        (dt_matched (T, D), dt_ignore (T, D), gt_ignore (G,))
    """
    lo, hi = area_range
    gt_areas = box_areas(gt_boxes)
    gt_ignore = (gt_areas < lo) | (gt_areas > hi)
    gt_order = np.argsort(gt_ignore, kind="mergesort")
    gt_boxes = gt_boxes[gt_order]
    gt_ignore = gt_ignore[gt_order]
    ious = iou_matrix(dt_boxes, gt_boxes)

    n_t, n_d, n_g = len(thresholds), len(dt_boxes), len(gt_boxes)
    dt_matched = np.zeros((n_t, n_d), dtype=bool)
    dt_ignore = np.zeros((n_t, n_d), dtype=bool)
    gt_taken = np.zeros((n_t, n_g), dtype=bool)
    if n_d and n_g:
        for t_idx, t in enumerate(thresholds):
            for d in range(n_d):
                best_iou = min(t, 1 - 1e-10)
                m = -1
                for g in range(n_g):
                    if gt_taken[t_idx, g]:
                        continue
                    if m > -1 and not gt_ignore[m] and gt_ignore[g]:
                        break
                    if ious[d, g] < best_iou:
                        continue
                    best_iou = ious[d, g]
                    m = g
                if m == -1:
                    continue
                dt_ignore[t_idx, d] = gt_ignore[m]
                dt_matched[t_idx, d] = True
                gt_taken[t_idx, m] = True

    dt_areas = box_areas(dt_boxes)
    outside = (dt_areas < lo) | (dt_areas > hi)
    dt_ignore |= ~dt_matched & outside[None, :]
    return dt_matched, dt_ignore, gt_ignore


def _accumulate(
    per_image: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    n_thresholds: int,
) -> Optional[np.ndarray]:
    """101-Punkt-interpolierte AP je Schwelle; None, wenn es keine GT gibt."""
    if not per_image:
        return None
    scores = np.concatenate([item[0] for item in per_image])
    num_gt = int(sum(np.count_nonzero(~item[3]) for item in per_image))
    if num_gt == 0:
        return None
    order = np.argsort(-scores, kind="mergesort")
    dtm = np.concatenate([item[1] for item in per_image], axis=1)[:, order]
    dtig = np.concatenate([item[2] for item in per_image], axis=1)[:, order]

    tps = np.cumsum(dtm & ~dtig, axis=1).astype(np.float64)
    fps = np.cumsum(~dtm & ~dtig, axis=1).astype(np.float64)
    ap = np.zeros(n_thresholds)
    for t_idx in range(n_thresholds):
        tp, fp = tps[t_idx], fps[t_idx]
        if len(tp) == 0:
            continue
        recall = tp / num_gt
        precision = tp / (tp + fp + np.spacing(1))
        precision = np.maximum.accumulate(precision[::-1])[::-1]
        inds = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
        q = np.zeros(len(RECALL_THRESHOLDS))
        valid = inds < len(precision)
        q[valid] = precision[inds[valid]]
        ap[t_idx] = q.mean()
    return ap


def _canonical(detections: Sequence[Detection]) -> list[Detection]:
    """Eindeutige Reihenfolge unabhängig von der Eingabereihenfolge."""
    return sorted(detections, key=lambda d: (d.image_id, d.class_id, -d.score, *d.box.to_list()))


def _class_ap(
    class_id: int,
    detections: Sequence[Detection],
    gts: Mapping[int, GroundTruth],
    thresholds: Sequence[float],
    area_range: tuple[float, float],
    max_detections: int,
) -> Optional[np.ndarray]:
    by_image: dict[int, list[Detection]] = {}
    for det in detections:
        by_image.setdefault(det.image_id, []).append(det)

    per_image = []
    for image_id in sorted(set(gts) | set(by_image)):
        gt = gts.get(image_id)
        gt_boxes = gt.boxes[gt.classes == class_id] if gt is not None else np.zeros((0, 4))
        dets = by_image.get(image_id, [])[:max_detections]
        if len(gt_boxes) == 0 and not dets:
            continue
        dt_boxes = np.array([d.box.to_list() for d in dets]).reshape(-1, 4)
        dtm, dtig, gtig = _evaluate_image(dt_boxes, gt_boxes, thresholds, area_range)
        per_image.append((np.array([d.score for d in dets]), dtm, dtig, gtig))
    return _accumulate(per_image, len(thresholds))


def _ap_matrix(
    detections: Sequence[Detection],
    gts: Mapping[int, GroundTruth],
    thresholds: Sequence[float],
    area: str,
    max_detections: int,
    workers: int,
) -> dict[int, np.ndarray]:
    """AP je Klasse (Zeile je Schwelle); Klassen ohne GT fehlen."""
    ordered = _canonical(detections)
    class_ids = sorted({int(c) for gt in gts.values() for c in gt.classes} | {d.class_id for d in ordered})
    per_class = {c: [d for d in ordered if d.class_id == c] for c in class_ids}
    area_range = AREA_RANGES[area]

    def run(c: int) -> Optional[np.ndarray]:
        return _class_ap(c, per_class[c], gts, thresholds, area_range, max_detections)

    if workers > 1 and len(class_ids) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, class_ids))
    else:
        results = [run(c) for c in class_ids]
    return {c: r for c, r in zip(class_ids, results) if r is not None}


def average_precision(
    detections: Sequence[Detection],
    gts: Mapping[int, GroundTruth],
    iou_thresholds: Sequence[float] = COCO_IOU_THRESHOLDS,
    max_detections: int = 100,
    workers: int = 1,
) -> EvalReport:
    """
    COCO-AP: Mittel über Klassen und IoU-Schwellen, dazu AP50, AP75,
    AP je Klasse und AP für kleine, mittlere und große Objekte.
    """
    thresholds = tuple(float(t) for t in iou_thresholds)
    per_class = _ap_matrix(detections, gts, thresholds, "all", max_detections, workers)
    if not per_class:
        logger.warning("Keine Klasse mit Ground Truth; AP wird als 0 gemeldet")
        per_threshold = {t: 0.0 for t in thresholds}
        ap = 0.0
    else:
        matrix = np.stack([per_class[c] for c in sorted(per_class)])
        per_threshold = {t: float(v) for t, v in zip(thresholds, matrix.mean(axis=0))}
        ap = float(matrix.mean())

    def at(t: float) -> float:
        for key, value in per_threshold.items():
            if abs(key - t) < 1e-9:
                return value
        return float("nan")

    def area_ap(area: str) -> Optional[float]:
        matrix = _ap_matrix(detections, gts, thresholds, area, max_detections, workers)
        if not matrix:
            return None
        return float(np.stack(list(matrix.values())).mean())

    return EvalReport(
        ap=ap,
        ap50=at(0.5),
        ap75=at(0.75),
        ap_per_threshold=per_threshold,
        ap_per_class={c: float(v.mean()) for c, v in sorted(per_class.items())},
        ap_small=area_ap("small"),
        ap_medium=area_ap("medium"),
        ap_large=area_ap("large"),
    )


def histogram_from_ious(
    ious: np.ndarray, population: str, bins: int = DEFAULT_HISTOGRAM_BINS
) -> IoUHistogram:
    """Histogramm aller Werte >= 0.5 über [0.5, 1.0]."""
    if bins < 1:
        raise ValueError("bins muss >= 1 sein")
    values = np.asarray(ious, dtype=np.float64).reshape(-1)
    values = values[values >= 0.5]
    edges = np.linspace(0.5, 1.0, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return IoUHistogram(edges=edges, counts=counts, population=population)


def iou_histogram(
    proposals: Mapping[int, ProposalSet],
    gts: Mapping[int, GroundTruth],
    population: str,
    bins: int = DEFAULT_HISTOGRAM_BINS,
) -> IoUHistogram:
    """
    IoU-Verteilung positiver Proposals.

    original-positive: Proposals ohne Herkunft oder mit Herkunft "original".
    augmented-positive: alle augmentierten Proposals; Herkunft ist Pflicht.
    """
    if population not in HISTOGRAM_POPULATIONS:
        raise ValueError(f"Unbekannte Population: {population!r}")
    collected: list[np.ndarray] = []
    for image_id, proposal_set in proposals.items():
        gt = gts.get(image_id)
        if gt is None or len(gt) == 0 or len(proposal_set) == 0:
            continue
        provenance = proposal_set.provenance
        if population == "augmented-positive":
            if provenance is None:
                raise ValueError(f"Bild {image_id}: augmentierte Proposals brauchen Herkunftsangaben")
            mask = np.array([p != Provenance.ORIGINAL for p in provenance])
        elif provenance is None:
            mask = np.ones(len(proposal_set), dtype=bool)
        else:
            mask = np.array([p == Provenance.ORIGINAL for p in provenance])
        ious = iou_matrix(proposal_set.boxes[mask], gt.boxes)
        if ious.size:
            collected.append(ious.max(axis=1))
    values = np.concatenate(collected) if collected else np.zeros(0)
    return histogram_from_ious(values, population, bins)


def detection_ious(detections: Sequence[Detection], gts: Mapping[int, GroundTruth]) -> np.ndarray:
    """IoU jeder Detektion mit der besten GT gleicher Klasse im selben Bild (sonst 0)."""
    result = np.zeros(len(detections))
    for i, det in enumerate(detections):
        gt = gts.get(det.image_id)
        if gt is None:
            continue
        same_class = gt.boxes[gt.classes == det.class_id]
        if len(same_class):
            result[i] = iou_matrix(det.box.to_array()[None, :], same_class).max()
    return result


def score_iou_correlation(
    detections: Sequence[Detection], gts: Mapping[int, GroundTruth], raw: bool = False
) -> float:
    """
    Spearman-Rangkorrelation zwischen finalem Score und Detektions-IoU
    (Bindungen erhalten den mittleren Rang).

    Mit `raw=True` wird statt des finalen der unkalibrierte Klassenscore
    derselben Detektionen verwendet.

    Raises:
        ValueError: bei weniger als 2 Detektionen oder undefinierter Korrelation
    """
    if len(detections) < 2:
        raise ValueError("Mindestens 2 Detektionen nötig")
    scores = np.array([d.raw_score if raw else d.score for d in detections])
    ious = detection_ious(detections, gts)
    rho = spearmanr(scores, ious).statistic
    if not np.isfinite(rho):
        raise ValueError("Rangkorrelation undefiniert (konstante Scores oder IoUs)")
    return float(rho)


def save_report(report: EvalReport, out_dir: Path, prefix: str = "eval") -> list[Path]:
    """Schreibt den Bericht als JSON, die Metriken als CSV und jedes Histogramm als CSV."""
    out_dir = FileHelper.ensure_dir(out_dir)
    written = [
        FileHelper.write_json(out_dir / f"{prefix}_report.json", report.to_dict()),
        FileHelper.write_csv(out_dir / f"{prefix}_metrics.csv", ["metric", "value"], report.metric_rows()),
    ]
    for label, histogram in report.histograms.items():
        rows = [(r["lower"], r["upper"], r["count"]) for r in histogram.to_rows()]
        written.append(FileHelper.write_csv(out_dir / f"{prefix}_hist_{label}.csv", ["lower", "upper", "count"], rows))
    return written
