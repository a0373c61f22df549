"""Abgleich von `average_precision` mit pycocotools (COCOeval)."""

import numpy as np
import pytest

from models.box import Box
from models.detection import Detection
from models.report import COCO_IOU_THRESHOLDS
from models.scene import GroundTruth
from services.evaluator import average_precision

pytest.importorskip("pycocotools")
from pycocotools.coco import COCO  # noqa: E402
from pycocotools.cocoeval import COCOeval  # noqa: E402


def _det(box, score, image_id=0, class_id=0) -> Detection:
    return Detection(image_id=image_id, box=Box(*box), class_id=class_id, raw_score=score, iou_score=1.0, score=score)


def _xywh(box) -> list[float]:
    x1, y1, x2, y2 = (float(v) for v in box)
    return [x1, y1, x2 - x1, y2 - y1]


def _coco_eval(detections: list[Detection], gts: dict[int, GroundTruth], num_classes: int) -> COCOeval:
    """COCOeval über dieselben Daten; Kategorie-IDs sind Klassenindex + 1."""
    annotations = []
    for image_id in sorted(gts):
        gt = gts[image_id]
        for box, class_id in zip(gt.boxes, gt.classes):
            bbox = _xywh(box)
            annotations.append(
                {
                    "id": len(annotations) + 1,
                    "image_id": image_id,
                    "category_id": int(class_id) + 1,
                    "bbox": bbox,
                    "area": bbox[2] * bbox[3],
                    "iscrowd": 0,
                }
            )
    coco_gt = COCO()
    coco_gt.dataset = {
        "images": [{"id": image_id, "height": 512, "width": 512} for image_id in sorted(gts)],
        "annotations": annotations,
        "categories": [{"id": c + 1, "name": f"class{c}"} for c in range(num_classes)],
    }
    coco_gt.createIndex()
    results = [
        {"image_id": d.image_id, "category_id": d.class_id + 1, "bbox": _xywh(d.box.to_list()), "score": d.score}
        for d in detections
    ]
    evaluation = COCOeval(coco_gt, coco_gt.loadRes(results), "bbox")
    evaluation.evaluate()
    evaluation.accumulate()
    evaluation.summarize()
    return evaluation


def _assert_matches(report, evaluation: COCOeval) -> None:
    stats = evaluation.stats
    assert report.ap == pytest.approx(stats[0], abs=1e-6)
    assert report.ap50 == pytest.approx(stats[1], abs=1e-6)
    assert report.ap75 == pytest.approx(stats[2], abs=1e-6)
    for ours, theirs in zip((report.ap_small, report.ap_medium, report.ap_large), stats[3:6]):
        if theirs < 0:
            assert ours is None
        else:
            assert ours == pytest.approx(theirs, abs=1e-6)
    # Präzision [T, R, K, Fläche, maxDets]; Fläche 0 = alle, maxDets 2 = 100
    precision = evaluation.eval["precision"][:, :, :, 0, 2]
    for t_idx, t in enumerate(COCO_IOU_THRESHOLDS):
        row = precision[t_idx]
        assert report.ap_per_threshold[t] == pytest.approx(row[row > -1].mean(), abs=1e-6)


class TestCocoReference:
    def test_five_detection_fixture(self):
        gt_boxes = np.array([[0, 0, 20, 20], [30, 30, 50, 50], [60, 0, 80, 20]], dtype=float)
        gts = {0: GroundTruth(image_id=0, boxes=gt_boxes, classes=[0, 0, 0])}
        detections = [
            _det((1, 1, 21, 21), 0.95),
            _det((0, 0, 20, 17.5), 0.9),
            _det((33, 31, 52, 50), 0.8),
            _det((100, 100, 110, 110), 0.7),
            _det((62, 3, 80, 24), 0.6),
        ]
        _assert_matches(average_precision(detections, gts), _coco_eval(detections, gts, 1))

    def test_random_images_classes_and_areas(self):
        rng = np.random.default_rng(42)
        num_classes = 3
        gts: dict[int, GroundTruth] = {}
        detections: list[Detection] = []
        for image_id in range(8):
            n = int(rng.integers(1, 7))
            # Kantenlängen aus je einem Bereich für kleine, mittlere und große Objekte
            ranges = np.array([(8.0, 28.0), (36.0, 90.0), (100.0, 150.0)])[rng.integers(0, 3, size=n)]
            sizes = rng.uniform(ranges[:, :1], ranges[:, 1:], size=(n, 2))
            xy = rng.uniform(0.0, 300.0, size=(n, 2))
            boxes = np.concatenate([xy, xy + sizes], axis=1)
            classes = rng.integers(0, num_classes, size=n)
            gts[image_id] = GroundTruth(image_id=image_id, boxes=boxes, classes=classes, image_size=(512, 512))
            for box, class_id in zip(boxes, classes):
                for _ in range(int(rng.integers(0, 3))):
                    scale = 0.1 * (box[2:] - box[:2])
                    noisy = box + rng.normal(0.0, 1.0, size=4) * np.tile(scale, 2)
                    noisy = np.concatenate([np.minimum(noisy[:2], noisy[2:] - 1), np.maximum(noisy[2:], noisy[:2] + 1)])
                    wrong = rng.uniform() < 0.15
                    label = int(rng.integers(0, num_classes)) if wrong else int(class_id)
                    detections.append(_det(noisy, float(rng.uniform(0.05, 1.0)), image_id, label))
            for _ in range(int(rng.integers(0, 5))):
                xy0 = rng.uniform(0.0, 400.0, size=2)
                size = rng.uniform(8.0, 110.0, size=2)
                detections.append(
                    _det(np.concatenate([xy0, xy0 + size]), float(rng.uniform(0.05, 0.6)), image_id,
                         int(rng.integers(0, num_classes)))
                )
        report = average_precision(detections, gts)
        evaluation = _coco_eval(detections, gts, num_classes)
        assert min(evaluation.stats[3:6]) >= 0
        _assert_matches(report, evaluation)

    def test_more_than_max_detections_per_image(self):
        rng = np.random.default_rng(42)
        gt_boxes = np.array([[10, 10, 60, 60], [100, 100, 140, 150]], dtype=float)
        gts = {0: GroundTruth(image_id=0, boxes=gt_boxes, classes=[0, 0], image_size=(512, 512))}
        detections = []
        for _ in range(130):
            xy = rng.uniform(0.0, 400.0, size=2)
            detections.append(_det(np.concatenate([xy, xy + rng.uniform(10.0, 60.0, size=2)]), float(rng.uniform())))
        detections.append(_det((11, 10, 60, 62), 0.01))
        detections.append(_det((100, 101, 141, 150), 0.999))
        _assert_matches(average_precision(detections, gts), _coco_eval(detections, gts, 1))
