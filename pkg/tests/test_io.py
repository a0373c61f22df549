"""Tests für COCO-Annotationen, Proposal- und Detektions-Dumps."""

import json

import numpy as np
import pytest

from models.box import Box
from models.detection import Detection
from models.proposals import ProposalSet, Provenance
from models.scene import GroundTruth
from services.annotation_loader import AnnotationLoader, load_coco_annotations, save_coco_annotations
from services.dump_handler import (
    DumpHandler,
    load_detection_dump,
    load_proposal_dump,
    save_detection_dump,
    save_proposal_dump,
)
from utils.errors import DataIOError, SchemaError


def _write(path, document):
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


class TestAnnotationLoader:
    def test_xywh_conversion_and_category_map(self, tmp_path):
        path = _write(
            tmp_path / "ann.json",
            {
                "images": [{"id": 1, "height": 50, "width": 60}],
                "annotations": [
                    {"id": 1, "image_id": 1, "bbox": [10, 10, 20, 30], "category_id": 7},
                    {"id": 2, "image_id": 1, "bbox": [0, 0, 5, 5], "category_id": 3},
                ],
                "categories": [{"id": 7}, {"id": 3}],
            },
        )
        loader = AnnotationLoader()
        gts = loader.load(path)
        assert list(gts) == [1]
        np.testing.assert_array_equal(gts[1].boxes, [[10, 10, 30, 40], [0, 0, 5, 5]])
        np.testing.assert_array_equal(gts[1].classes, [1, 0])
        assert gts[1].image_size == (50, 60)
        assert loader.num_classes == 2

    def test_image_without_annotations(self, tmp_path):
        path = _write(tmp_path / "ann.json", {"images": [{"id": 4, "height": 8, "width": 8}], "annotations": []})
        gts = load_coco_annotations(path)
        assert len(gts[4]) == 0
        assert gts[4].boxes.shape == (0, 4)

    def test_invalid_annotations_skipped_and_counted(self, tmp_path):
        path = _write(
            tmp_path / "ann.json",
            {
                "images": [{"id": 1, "height": 50, "width": 60}],
                "annotations": [
                    {"image_id": 1, "bbox": [1, 1, -2, 3], "category_id": 0},
                    {"image_id": 99, "bbox": [1, 1, 2, 3], "category_id": 0},
                    {"image_id": 1, "bbox": [1, 1, 2, 3], "category_id": 0},
                ],
            },
        )
        loader = AnnotationLoader()
        gts = loader.load(path)
        assert loader.skipped_annotations == 2
        assert len(gts[1]) == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            load_coco_annotations(tmp_path / "missing.json")

    def test_missing_field_is_schema_error(self, tmp_path):
        path = _write(
            tmp_path / "ann.json",
            {"images": [{"id": 1, "height": 5, "width": 5}], "annotations": [{"image_id": 1, "category_id": 0}]},
        )
        with pytest.raises(SchemaError, match="bbox"):
            load_coco_annotations(path)

    def test_save_and_load(self, tmp_path, two_object_gt):
        path = save_coco_annotations({7: two_object_gt}, tmp_path / "ann.json", num_classes=2)
        loaded = load_coco_annotations(path)
        np.testing.assert_array_equal(loaded[7].boxes, two_object_gt.boxes)
        np.testing.assert_array_equal(loaded[7].classes, two_object_gt.classes)

    def test_load_many_merges_sorted(self, tmp_path):
        a = _write(tmp_path / "a.json", {"images": [{"id": 5, "height": 4, "width": 4}], "annotations": []})
        b = _write(tmp_path / "b.json", {"images": [{"id": 2, "height": 4, "width": 4}], "annotations": []})
        assert list(AnnotationLoader().load_many([a, b], workers=2)) == [2, 5]
        with pytest.raises(SchemaError):
            AnnotationLoader().load_many([a, a])


class TestProposalDump:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(42)
        proposals = {}
        for image_id in range(100):
            n = int(rng.integers(0, 6))
            xy = rng.uniform(0, 50, size=(n, 2))
            boxes = np.concatenate([xy, xy + rng.uniform(1, 20, size=(n, 2))], axis=1)
            proposals[image_id] = ProposalSet(
                image_id=image_id,
                boxes=boxes,
                scores=rng.uniform(size=n),
                provenance=[Provenance.REFINED] * n,
            )
        path = save_proposal_dump(proposals, tmp_path / "proposals.jsonl")
        loaded = load_proposal_dump(path)
        assert list(loaded) == list(range(100))
        for image_id, original in proposals.items():
            np.testing.assert_array_equal(loaded[image_id].boxes, original.boxes)
            np.testing.assert_array_equal(loaded[image_id].scores, original.scores)
            assert loaded[image_id].provenance == original.provenance

    def test_scores_omitted_stay_absent(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text('{"schema": "proposals/v1", "image_id": 3, "boxes": [[0, 0, 2, 2]]}\n', encoding="utf-8")
        loaded = load_proposal_dump(path)
        assert loaded[3].scores is None
        assert loaded[3].provenance is None

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text(
            '{"schema": "proposals/v1", "image_id": 1, "boxes": []}\n{not json\n',
            encoding="utf-8",
        )
        with pytest.raises(SchemaError) as excinfo:
            load_proposal_dump(path)
        assert excinfo.value.line == 2
        assert ":2" in str(excinfo.value)

    @pytest.mark.parametrize("box", ["[NaN, 0, 4, 4]", "[0, 0, Infinity, 4]", "[5, 0, 4, 4]", "[0, 6, 4, 4]"])
    def test_invalid_box_names_line_number(self, tmp_path, box):
        path = tmp_path / "p.jsonl"
        path.write_text(
            '{"schema": "proposals/v1", "image_id": 1, "boxes": [[0, 0, 2, 2]]}\n'
            f'{{"schema": "proposals/v1", "image_id": 2, "boxes": [[0, 0, 2, 2], {box}]}}\n',
            encoding="utf-8",
        )
        with pytest.raises(SchemaError) as excinfo:
            load_proposal_dump(path)
        assert excinfo.value.line == 2

    def test_degenerate_box_is_valid(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text('{"schema": "proposals/v1", "image_id": 1, "boxes": [[3, 3, 3, 3]]}\n', encoding="utf-8")
        assert len(load_proposal_dump(path)[1]) == 1

    def test_invalid_utf8_names_line_number(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_bytes(
            b'{"schema": "proposals/v1", "image_id": 1, "boxes": []}\n'
            b'{"schema": "proposals/v1", "image_id": 2, "boxes": []}\n'
            b'{"schema": "\xff\xfe"}\n'
        )
        with pytest.raises(SchemaError) as excinfo:
            load_proposal_dump(path)
        assert excinfo.value.line == 3

    def test_wrong_schema_tag(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text('{"schema": "proposals/v0", "image_id": 1, "boxes": []}\n', encoding="utf-8")
        with pytest.raises(SchemaError) as excinfo:
            load_proposal_dump(path)
        assert excinfo.value.field == "schema"

    def test_score_length_mismatch(self, tmp_path):
        path = tmp_path / "p.jsonl"
        path.write_text(
            '{"schema": "proposals/v1", "image_id": 1, "boxes": [[0, 0, 1, 1]], "scores": [0.1, 0.2]}\n',
            encoding="utf-8",
        )
        with pytest.raises(SchemaError) as excinfo:
            DumpHandler().load_proposals(path)
        assert excinfo.value.field == "scores"

    def test_duplicate_image_id(self, tmp_path):
        line = '{"schema": "proposals/v1", "image_id": 1, "boxes": []}\n'
        path = tmp_path / "p.jsonl"
        path.write_text(line * 2, encoding="utf-8")
        with pytest.raises(SchemaError):
            load_proposal_dump(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            load_proposal_dump(tmp_path / "none.jsonl")


class TestDetectionDump:
    def test_roundtrip_sorted_by_image(self, tmp_path):
        detections = [
            Detection(image_id=2, box=Box(0, 0, 4, 4), class_id=1, raw_score=0.9, iou_score=0.5, score=0.45),
            Detection(image_id=1, box=Box(1, 1, 3, 5), class_id=0, raw_score=0.3, iou_score=1.0, score=0.3),
        ]
        loaded = load_detection_dump(save_detection_dump(detections, tmp_path / "d.jsonl"))
        assert loaded == [detections[1], detections[0]]

    def test_missing_score_field(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            '{"schema": "detections/v1", "image_id": 1, "box": [0, 0, 1, 1], "class": 0, "raw": 0.5, "iou": 0.5}\n',
            encoding="utf-8",
        )
        with pytest.raises(SchemaError) as excinfo:
            load_detection_dump(path)
        assert excinfo.value.field == "score"
