"""Datenmodell für Detektionen."""

from dataclasses import dataclass

from models.box import Box

DETECTION_SCHEMA = "detections/v1"


@dataclass(frozen=True)
class Detection:
    """Eine Detektion mit Roh-, IoU- und finalem Score."""

    image_id: int
    box: Box
    class_id: int
    raw_score: float
    iou_score: float
    score: float

    def to_dict(self) -> dict:
        """Konvertiert in einen Datensatz des Formats detections/v1."""
        return {
            "schema": DETECTION_SCHEMA,
            "image_id": self.image_id,
            "box": self.box.to_list(),
            "class": self.class_id,
            "raw": self.raw_score,
            "iou": self.iou_score,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Detection":
        return cls(
            image_id=int(data["image_id"]),
            box=Box.from_array(data["box"]),
            class_id=int(data["class"]),
            raw_score=float(data["raw"]),
            iou_score=float(data["iou"]),
            score=float(data["score"]),
        )
