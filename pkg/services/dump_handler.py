"""Speichern und Laden von Proposal- und Detektions-Dumps (JSON-Lines)."""

import json
import logging
from pathlib import Path
from typing import Callable, Iterator, Mapping, TypeVar

from models.detection import DETECTION_SCHEMA, Detection
from models.proposals import ProposalSet
from utils.errors import DataIOError, SchemaError
from utils.file_helper import FileHelper
from utils.schema_validator import SchemaValidator

logger = logging.getLogger(__name__)

PROPOSAL_SCHEMA = "proposals/v1"

T = TypeVar("T")


class DumpHandler:
    """Handler für das Speichern und Laden von Dumps."""

    def save_proposals(self, proposals: Mapping[int, ProposalSet], path: Path) -> Path:
        """
        Speichert Proposals, ein Bild pro Zeile, sortiert nach image_id.

        Args:
            proposals: image_id -> ProposalSet
            path: Zieldatei

        Returns:
            Der geschriebene Pfad
        """
        records = (proposals[image_id].to_dict() for image_id in sorted(proposals))
        return FileHelper.write_jsonl(path, records)

    def load_proposals(self, path: Path) -> dict[int, ProposalSet]:
        """
        Lädt einen Proposal-Dump.

        Fehlende Scores bleiben None (nicht 0).

        Raises:
            DataIOError: wenn die Datei fehlt
            SchemaError: bei defekten Zeilen oder falscher Schema-Version
        """
        result: dict[int, ProposalSet] = {}
        for line_no, record in self._iter_records(path):
            name = str(path)
            SchemaValidator.check_schema_tag(record, PROPOSAL_SCHEMA, name, line_no)
            SchemaValidator.require(record, "image_id", int, name, line_no)
            boxes = SchemaValidator.require(record, "boxes", list, name, line_no)
            if not all(isinstance(b, list) and len(b) == 4 for b in boxes):
                raise SchemaError("Boxen müssen [x1, y1, x2, y2] sein", name, line_no, "boxes")
            for key in ("scores", "provenance"):
                value = record.get(key)
                if value is not None and (not isinstance(value, list) or len(value) != len(boxes)):
                    raise SchemaError("Länge passt nicht zu 'boxes'", name, line_no, key)
            proposal_set = self._build(ProposalSet.from_dict, record, name, line_no)
            if proposal_set.image_id in result:
                raise SchemaError(f"image_id {proposal_set.image_id} mehrfach vorhanden", name, line_no, "image_id")
            result[proposal_set.image_id] = proposal_set
        logger.info("%d Proposal-Sätze aus %s geladen", len(result), path)
        return dict(sorted(result.items()))

    def save_detections(self, detections: list[Detection], path: Path) -> Path:
        """Speichert Detektionen, eine pro Zeile, geordnet nach image_id."""
        ordered = sorted(detections, key=lambda d: d.image_id)
        return FileHelper.write_jsonl(path, (d.to_dict() for d in ordered))

    def load_detections(self, path: Path) -> list[Detection]:
        """Lädt einen Detektions-Dump."""
        detections: list[Detection] = []
        for line_no, record in self._iter_records(path):
            name = str(path)
            SchemaValidator.check_schema_tag(record, DETECTION_SCHEMA, name, line_no)
            SchemaValidator.require(record, "image_id", int, name, line_no)
            SchemaValidator.require(record, "class", int, name, line_no)
            for key in ("raw", "iou", "score"):
                SchemaValidator.require(record, key, (int, float), name, line_no)
            detections.append(self._build(Detection.from_dict, record, name, line_no))
        return detections

    @staticmethod
    def _iter_records(path: Path) -> Iterator[tuple[int, dict]]:
        path = Path(path)
        if not path.exists():
            raise DataIOError(f"Datei nicht gefunden: {path}")
        try:
            # binär lesen und zeilenweise dekodieren, damit Kodierungsfehler eine Zeilennummer haben
            with open(path, "rb") as f:
                for line_no, raw in enumerate(f, start=1):
                    try:
                        line = raw.decode("utf-8")
                    except UnicodeDecodeError as e:
                        raise SchemaError(f"Ungültiges UTF-8 an Byte {e.start}", str(path), line_no) from e
                    if not line.strip():
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as e:
                        raise SchemaError(f"JSON-Fehler: {e.msg}", str(path), line_no) from e
                    if not isinstance(record, dict):
                        raise SchemaError("JSON-Objekt erwartet", str(path), line_no)
                    yield line_no, record
        except OSError as e:
            raise DataIOError(f"Datei nicht lesbar: {path}: {e}") from e

    @staticmethod
    def _build(factory: Callable[[dict], T], record: dict, path: str, line_no: int) -> T:
        try:
            return factory(record)
        except (TypeError, ValueError, KeyError) as e:
            raise SchemaError(f"Ungültiger Datensatz: {e}", path, line_no) from e


def load_proposal_dump(path: Path) -> dict[int, ProposalSet]:
    return DumpHandler().load_proposals(path)


def save_proposal_dump(proposals: Mapping[int, ProposalSet], path: Path) -> Path:
    return DumpHandler().save_proposals(proposals, path)


def load_detection_dump(path: Path) -> list[Detection]:
    return DumpHandler().load_detections(path)


def save_detection_dump(detections: list[Detection], path: Path) -> Path:
    return DumpHandler().save_detections(detections, path)
