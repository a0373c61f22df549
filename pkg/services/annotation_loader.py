"""Laden und Schreiben von Annotationen im COCO-Format (Teilmenge)."""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from models.scene import GroundTruth
from utils.errors import SchemaError
from utils.file_helper import FileHelper
from utils.schema_validator import SchemaValidator

logger = logging.getLogger(__name__)


class AnnotationLoader:
    """
    Lädt COCO-Annotationen in GroundTruth-Objekte.

    Kategorie-IDs werden sortiert auf dichte Indizes [0, K) abgebildet.
    Annotationen mit negativer Breite/Höhe oder unbekanntem Bild werden
    übersprungen und gezählt.
    """

    def __init__(self):
        self.skipped_annotations = 0
        self.category_map: dict[int, int] = {}

    @property
    def num_classes(self) -> int:
        return len(self.category_map)

    def load(self, path: Path) -> dict[int, GroundTruth]:
        """
        Lädt eine Annotationsdatei.

        Args:
            path: Pfad zur COCO-JSON-Datei

        Returns:
            Dictionary image_id -> GroundTruth (sortiert nach image_id)

        Raises:
            DataIOError: wenn die Datei fehlt
            SchemaError: bei JSON-Fehlern oder fehlenden Pflichtfeldern
        """
        path = Path(path)
        document = self._read_json(path)
        name = str(path)
        for key in ("images", "annotations"):
            if not isinstance(document.get(key), list):
                raise SchemaError("Liste fehlt", name, field=key)

        categories = document.get("categories")
        if isinstance(categories, list) and categories:
            cat_ids = [SchemaValidator.require(c, "id", int, name) for c in categories]
        else:
            cat_ids = [a.get("category_id") for a in document["annotations"] if isinstance(a.get("category_id"), int)]
        self.category_map = {cid: i for i, cid in enumerate(sorted(set(cat_ids)))}

        images: dict[int, tuple[int, int]] = {}
        for i, img in enumerate(document["images"]):
            if not isinstance(img, dict):
                raise SchemaError("Objekt erwartet", name, field=f"images[{i}]")
            image_id = self._field(img, "id", int, name, f"images[{i}]")
            height = self._field(img, "height", (int, float), name, f"images[{i}]")
            width = self._field(img, "width", (int, float), name, f"images[{i}]")
            images[image_id] = (int(height), int(width))

        boxes: dict[int, list[list[float]]] = {image_id: [] for image_id in images}
        classes: dict[int, list[int]] = {image_id: [] for image_id in images}
        skipped = 0
        for i, ann in enumerate(document["annotations"]):
            where = f"annotations[{i}]"
            if not isinstance(ann, dict):
                raise SchemaError("Objekt erwartet", name, field=where)
            image_id = self._field(ann, "image_id", int, name, where)
            bbox = ann.get("bbox")
            if not isinstance(bbox, list) or len(bbox) != 4 or not all(_is_number(v) for v in bbox):
                raise SchemaError("bbox muss [x, y, w, h] sein", name, field=f"{where}.bbox")
            category = self._field(ann, "category_id", int, name, where)
            if category not in self.category_map:
                raise SchemaError(f"Unbekannte Kategorie {category}", name, field=f"{where}.category_id")
            x, y, w, h = (float(v) for v in bbox)
            if w < 0 or h < 0 or image_id not in images:
                skipped += 1
                continue
            boxes[image_id].append([x, y, x + w, y + h])
            classes[image_id].append(self.category_map[category])

        self.skipped_annotations += skipped
        if skipped:
            logger.warning("%d ungültige Annotationen in %s übersprungen", skipped, name)

        return {
            image_id: GroundTruth(
                image_id=image_id,
                boxes=np.asarray(boxes[image_id], dtype=np.float64).reshape(-1, 4),
                classes=np.asarray(classes[image_id], dtype=np.int64),
                image_size=images[image_id],
            )
            for image_id in sorted(images)
        }

    def load_many(self, paths: Iterable[Path], workers: int = 1) -> dict[int, GroundTruth]:
        """Lädt mehrere Dateien parallel; das Ergebnis ist nach image_id sortiert."""
        paths = list(paths)
        loaders = [AnnotationLoader() for _ in paths]
        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(lambda pair: pair[0].load(pair[1]), zip(loaders, paths)))
        merged: dict[int, GroundTruth] = {}
        for path, result in zip(paths, results):
            for image_id, gt in result.items():
                if image_id in merged:
                    raise SchemaError(f"image_id {image_id} mehrfach vorhanden", str(path))
                merged[image_id] = gt
        self.skipped_annotations += sum(loader.skipped_annotations for loader in loaders)
        if loaders:
            self.category_map = loaders[0].category_map
        return dict(sorted(merged.items()))

    @staticmethod
    def _read_json(path: Path) -> dict:
        document = FileHelper.read_json(path)
        if not isinstance(document, dict):
            raise SchemaError("JSON-Objekt erwartet", str(path))
        return document

    @staticmethod
    def _field(record: dict, key: str, kind, path: str, where: str):
        return SchemaValidator.require(record, key, kind, path, where=where)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def load_coco_annotations(path: Path) -> dict[int, GroundTruth]:
    """Kurzform für `AnnotationLoader().load(path)`."""
    return AnnotationLoader().load(path)


def save_coco_annotations(gts: Mapping[int, GroundTruth], path: Path, num_classes: Optional[int] = None) -> Path:
    """
    Schreibt Ground Truth als COCO-JSON (Kategorie-IDs = Klassenindizes).

    Returns:
        Der geschriebene Pfad
    """
    if num_classes is None:
        num_classes = 1 + max((int(gt.classes.max()) for gt in gts.values() if len(gt)), default=-1)
    images = []
    annotations = []
    for image_id in sorted(gts):
        gt = gts[image_id]
        height, width = gt.image_size or (0, 0)
        images.append({"id": image_id, "height": height, "width": width})
        for box, cls in zip(gt.boxes, gt.classes):
            x1, y1, x2, y2 = (float(v) for v in box)
            annotations.append(
                {
                    "id": len(annotations) + 1,
                    "image_id": image_id,
                    "bbox": [x1, y1, x2 - x1, y2 - y1],
                    "category_id": int(cls),
                    "area": (x2 - x1) * (y2 - y1),
                    "iscrowd": 0,
                }
            )
    document = {
        "images": images,
        "annotations": annotations,
        "categories": [{"id": c, "name": f"class_{c}"} for c in range(num_classes)],
    }
    return FileHelper.write_json(Path(path), document)
