"""Datenmodell für achsenparallele Boxen und Regressions-Deltas."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    """Achsenparallele Box in Bildkoordinaten (Eckenform x1, y1, x2, y2)."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"Box-Koordinaten müssen endlich sein: {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"Box mit negativer Breite/Höhe: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    def to_array(self) -> np.ndarray:
        """Gibt die Box als float64-Array der Form (4,) zurück."""
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def to_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_array(cls, values) -> "Box":
        """Erstellt eine Box aus einer Sequenz mit vier Werten."""
        x1, y1, x2, y2 = (float(v) for v in values)
        return cls(x1, y1, x2, y2)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box":
        """Konvertiert das COCO-Format [x, y, w, h] in die Eckenform."""
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))


@dataclass(frozen=True)
class BoxDeltas:
    """Kodierte Regressionsziele (tx, ty, tw, th)."""

    tx: float
    ty: float
    tw: float
    th: float

    def to_array(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tw, self.th], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "BoxDeltas":
        tx, ty, tw, th = (float(v) for v in values)
        return cls(tx, ty, tw, th)


def as_box_array(boxes) -> np.ndarray:
    """
    Normalisiert Boxen auf ein float64-Array der Form (N, 4).

    Args:
        boxes: Liste von Box-Objekten, Sequenz von Quadrupeln oder ndarray

    Returns:
        Array der Form (N, 4); leere Eingaben ergeben (0, 4)
    """
    if isinstance(boxes, np.ndarray):
        array = boxes.astype(np.float64, copy=False)
    else:
        boxes = list(boxes)
        if not boxes:
            return np.zeros((0, 4), dtype=np.float64)
        array = np.array(
            [b.to_array() if isinstance(b, Box) else np.asarray(b, dtype=np.float64) for b in boxes],
            dtype=np.float64,
        )
    if array.size == 0:
        return np.zeros((0, 4), dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(1, -1)
    if array.ndim != 2 or array.shape[1] != 4:
        raise ValueError(f"Boxen müssen die Form (N, 4) haben, erhalten: {array.shape}")
    return array
