"""Datenmodelle des linearen Box-IoU-Heads."""

import hashlib
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from utils.box_ops import DEFAULT_DELTA_WEIGHTS

HEAD_SCHEMA = "head/v1"

# Schreibschutz ist pro Modell verschachtelbar (mehrere Threads lesen parallel)
_FREEZE_LOCK = threading.Lock()
_FREEZE_DEPTH: dict[int, int] = {}


@dataclass
class HeadModel:
    """Gewichte der drei Zweige: Klassifikation, Box-Deltas, IoU-Score."""

    w_cls: np.ndarray  # (K+1, D); Hintergrund ist Klasse K
    w_reg: np.ndarray  # (4, D), klassenagnostisch
    w_iou: np.ndarray  # (1, D)
    num_classes: int
    grid_size: int
    channels: int
    delta_weights: tuple[float, float, float, float] = DEFAULT_DELTA_WEIGHTS

    def __post_init__(self) -> None:
        self.w_cls = np.asarray(self.w_cls, dtype=np.float64)
        self.w_reg = np.asarray(self.w_reg, dtype=np.float64)
        self.w_iou = np.asarray(self.w_iou, dtype=np.float64).reshape(1, -1)
        self.delta_weights = tuple(float(w) for w in self.delta_weights)
        d = self.feature_dim
        if self.w_cls.shape != (self.num_classes + 1, d):
            raise ValueError(f"w_cls hat Form {self.w_cls.shape}, erwartet ({self.num_classes + 1}, {d})")
        if self.w_reg.shape != (4, d) or self.w_iou.shape != (1, d):
            raise ValueError("w_reg/w_iou passen nicht zur Merkmalsdimension")
        if d != self.channels * self.grid_size * self.grid_size + 1:
            raise ValueError("Merkmalsdimension passt nicht zu channels/grid_size")
        for name in ("w_cls", "w_reg", "w_iou"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} enthält nicht-endliche Werte")

    @property
    def feature_dim(self) -> int:
        return self.w_cls.shape[1]

    @classmethod
    def zeros(cls, num_classes: int, channels: int, grid_size: int, delta_weights=DEFAULT_DELTA_WEIGHTS) -> "HeadModel":
        """Modell mit ausschließlich Null-Gewichten."""
        d = channels * grid_size * grid_size + 1
        return cls(
            w_cls=np.zeros((num_classes + 1, d)),
            w_reg=np.zeros((4, d)),
            w_iou=np.zeros((1, d)),
            num_classes=num_classes,
            grid_size=grid_size,
            channels=channels,
            delta_weights=delta_weights,
        )

    @classmethod
    def initialize(
        cls,
        num_classes: int,
        channels: int,
        grid_size: int,
        rng: np.random.Generator,
        init_std: float = 0.01,
        delta_weights=DEFAULT_DELTA_WEIGHTS,
    ) -> "HeadModel":
        """Klassifikationszweig zufällig (normalverteilt), Regression und IoU mit Null."""
        model = cls.zeros(num_classes, channels, grid_size, delta_weights)
        model.w_cls = rng.normal(0.0, init_std, size=model.w_cls.shape)
        return model

    def copy(self) -> "HeadModel":
        return HeadModel(
            w_cls=self.w_cls.copy(),
            w_reg=self.w_reg.copy(),
            w_iou=self.w_iou.copy(),
            num_classes=self.num_classes,
            grid_size=self.grid_size,
            channels=self.channels,
            delta_weights=self.delta_weights,
        )

    def fingerprint(self) -> str:
        """SHA-256 über alle Gewichte (bitgenau)."""
        digest = hashlib.sha256()
        for array in (self.w_cls, self.w_reg, self.w_iou):
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()

    @contextmanager
    def frozen(self) -> Iterator["HeadModel"]:
        """Macht die Gewichte für die Dauer des Blocks schreibgeschützt."""
        arrays = (self.w_cls, self.w_reg, self.w_iou)
        key = id(self)
        with _FREEZE_LOCK:
            depth = _FREEZE_DEPTH.get(key, 0)
            if depth == 0:
                for a in arrays:
                    a.flags.writeable = False
            _FREEZE_DEPTH[key] = depth + 1
        try:
            yield self
        finally:
            with _FREEZE_LOCK:
                _FREEZE_DEPTH[key] -= 1
                if _FREEZE_DEPTH[key] == 0:
                    del _FREEZE_DEPTH[key]
                    for a in arrays:
                        a.flags.writeable = True

    def to_dict(self) -> dict:
        return {
            "schema": HEAD_SCHEMA,
            "feature_dim": self.feature_dim,
            "num_classes": self.num_classes,
            "grid_size": self.grid_size,
            "channels": self.channels,
            "delta_weights": list(self.delta_weights),
            "w_cls": self.w_cls.tolist(),
            "w_reg": self.w_reg.tolist(),
            "w_iou": self.w_iou.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HeadModel":
        if data.get("schema") != HEAD_SCHEMA:
            raise ValueError(f"Unbekanntes Head-Schema: {data.get('schema')!r}")
        model = cls(
            w_cls=np.asarray(data["w_cls"], dtype=np.float64),
            w_reg=np.asarray(data["w_reg"], dtype=np.float64),
            w_iou=np.asarray(data["w_iou"], dtype=np.float64),
            num_classes=int(data["num_classes"]),
            grid_size=int(data["grid_size"]),
            channels=int(data["channels"]),
            delta_weights=tuple(data["delta_weights"]),
        )
        if model.feature_dim != int(data["feature_dim"]):
            raise ValueError("feature_dim im Checkpoint ist inkonsistent")
        return model


@dataclass
class HeadOutput:
    """Vorhersagen des Heads für N Merkmalsvektoren."""

    probs: np.ndarray  # (N, K+1), Zeilensumme 1
    deltas: np.ndarray  # (N, 4)
    iou_logits: np.ndarray  # (N,)
    iou_scores: np.ndarray  # (N,) = sigmoid(iou_logits)
    cls_logits: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __len__(self) -> int:
        return len(self.probs)


@dataclass
class HeadGradients:
    """Gradienten des Gesamtverlusts nach den drei Gewichtsmatrizen."""

    w_cls: np.ndarray
    w_reg: np.ndarray
    w_iou: np.ndarray


@dataclass
class LossReport:
    """Verlustkomponenten eines Trainingsschritts."""

    loss_cls: float = 0.0
    loss_reg: float = 0.0
    loss_iou: float = 0.0
    num_cls: int = 0
    num_reg: int = 0
    num_iou: int = 0
    total: float = 0.0

    def to_dict(self) -> dict:
        return {
            "loss_cls": self.loss_cls,
            "loss_reg": self.loss_reg,
            "loss_iou": self.loss_iou,
            "total": self.total,
            "num_cls": self.num_cls,
            "num_reg": self.num_reg,
            "num_iou": self.num_iou,
        }
