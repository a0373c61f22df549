"""Datenmodelle für synthetische Szenen und Ground Truth."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from models.box import Box, as_box_array


@dataclass(frozen=True)
class SceneSpec:
    """Parameter des synthetischen Datensatzes."""

    height: int = 64
    width: int = 64
    channels: int = 3
    num_classes: int = 3
    objects_per_image: tuple[int, int] = (1, 3)
    object_size: tuple[int, int] = (14, 30)
    noise_sigma: float = 0.15
    # Pro Klasse eine Intensität je Kanal; None = aus Klassenindex abgeleitet
    class_signatures: Optional[tuple[tuple[float, ...], ...]] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ValueError("num_classes muss >= 1 sein")
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise ValueError("Bildgröße und Kanalzahl müssen positiv sein")
        lo, hi = self.object_size
        if lo <= 0 or hi < lo:
            raise ValueError(f"Ungültiger Größenbereich: {self.object_size}")
        n_lo, n_hi = self.objects_per_image
        if n_lo < 0 or n_hi < n_lo:
            raise ValueError(f"Ungültige Objektanzahl: {self.objects_per_image}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma muss >= 0 sein")
        if self.class_signatures is not None:
            sig = np.asarray(self.class_signatures, dtype=np.float64)
            if sig.shape != (self.num_classes, self.channels):
                raise ValueError(
                    f"class_signatures braucht Form ({self.num_classes}, {self.channels}), erhalten: {sig.shape}"
                )

    @property
    def bounds(self) -> Box:
        return Box(0.0, 0.0, float(self.width), float(self.height))

    def signatures(self) -> np.ndarray:
        """Intensitätssignatur je Klasse, Form (K, C)."""
        if self.class_signatures is not None:
            return np.asarray(self.class_signatures, dtype=np.float64)
        sig = np.full((self.num_classes, self.channels), 0.2, dtype=np.float64)
        for c in range(self.num_classes):
            sig[c, c % self.channels] = 1.0
            sig[c] += 0.3 * (c // self.channels)
        return sig

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "num_classes": self.num_classes,
            "objects_per_image": list(self.objects_per_image),
            "object_size": list(self.object_size),
            "noise_sigma": self.noise_sigma,
            "class_signatures": [list(s) for s in self.class_signatures] if self.class_signatures else None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        values = dict(data)
        for key in ("objects_per_image", "object_size"):
            if key in values:
                values[key] = tuple(values[key])
        if values.get("class_signatures") is not None:
            values["class_signatures"] = tuple(tuple(float(v) for v in row) for row in values["class_signatures"])
        return cls(**values)


@dataclass
class GroundTruth:
    """Annotierte Boxen eines Bildes mit Klassen-IDs in [0, K)."""

    image_id: int
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    classes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    image_size: Optional[tuple[int, int]] = None  # (Höhe, Breite)

    def __post_init__(self) -> None:
        self.boxes = as_box_array(self.boxes)
        self.classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if len(self.boxes) != len(self.classes):
            raise ValueError("Anzahl Boxen und Klassen stimmt nicht überein")

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def bounds(self) -> Optional[Box]:
        if self.image_size is None:
            return None
        return Box(0.0, 0.0, float(self.image_size[1]), float(self.image_size[0]))

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "boxes": self.boxes.tolist(),
            "classes": self.classes.tolist(),
            "image_size": list(self.image_size) if self.image_size else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GroundTruth":
        size = data.get("image_size")
        return cls(
            image_id=int(data["image_id"]),
            boxes=np.asarray(data.get("boxes", []), dtype=np.float64).reshape(-1, 4),
            classes=np.asarray(data.get("classes", []), dtype=np.int64),
            image_size=tuple(size) if size else None,
        )
