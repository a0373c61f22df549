"""Datenmodelle für Proposals und augmentierte Proposals."""

from dataclasses import dataclass, field
from enum import StrEnum
from typing import Optional

import numpy as np

from models.box import as_box_array


class Provenance(StrEnum):
    """Herkunft einer Proposal-Box."""

    ORIGINAL = "original"
    REFINED = "refined"
    POSITIVE_ORIGINAL = "positive-original"


@dataclass
class ProposalSet:
    """Proposals eines Bildes mit optionalen Scores und Herkunftsangaben."""

    image_id: int
    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    scores: Optional[np.ndarray] = None
    provenance: Optional[list[Provenance]] = None

    def __post_init__(self) -> None:
        self.boxes = as_box_array(self.boxes)
        n = len(self.boxes)
        if not np.all(np.isfinite(self.boxes)):
            raise ValueError("Boxen müssen endlich sein")
        inverted = (self.boxes[:, 2] < self.boxes[:, 0]) | (self.boxes[:, 3] < self.boxes[:, 1])
        if np.any(inverted):
            raise ValueError(f"Box {int(np.argmax(inverted))} hat x2 < x1 oder y2 < y1")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            if len(self.scores) != n:
                raise ValueError("Anzahl Scores passt nicht zur Anzahl Boxen")
            if not np.all(np.isfinite(self.scores)):
                raise ValueError("Scores müssen endlich sein")
        if self.provenance is not None:
            self.provenance = [Provenance(p) for p in self.provenance]
            if len(self.provenance) != n:
                raise ValueError("Anzahl Herkunftsangaben passt nicht zur Anzahl Boxen")

    def __len__(self) -> int:
        return len(self.boxes)

    def ranked(self, budget: Optional[int] = None) -> np.ndarray:
        """
        Boxen absteigend nach Score, höchstens `budget` Stück.

        Ohne Scores bleibt die gespeicherte Reihenfolge erhalten.
        """
        if self.scores is None:
            order = np.arange(len(self.boxes))
        else:
            order = np.argsort(-self.scores, kind="mergesort")
        if budget is not None:
            order = order[:budget]
        return self.boxes[order]

    def select(self, mask: np.ndarray) -> "ProposalSet":
        """Teilmenge anhand einer booleschen Maske oder Indexliste."""
        idx = np.arange(len(self.boxes))[mask]
        return ProposalSet(
            image_id=self.image_id,
            boxes=self.boxes[idx],
            scores=None if self.scores is None else self.scores[idx],
            provenance=None if self.provenance is None else [self.provenance[i] for i in idx],
        )

    def to_dict(self) -> dict:
        """Konvertiert in einen Datensatz des Formats proposals/v1."""
        data = {
            "schema": "proposals/v1",
            "image_id": self.image_id,
            "boxes": self.boxes.tolist(),
        }
        if self.scores is not None:
            data["scores"] = self.scores.tolist()
        if self.provenance is not None:
            data["provenance"] = [str(p) for p in self.provenance]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ProposalSet":
        scores = data.get("scores")
        provenance = data.get("provenance")
        return cls(
            image_id=int(data["image_id"]),
            boxes=np.asarray(data["boxes"], dtype=np.float64).reshape(-1, 4),
            scores=None if scores is None else np.asarray(scores, dtype=np.float64),
            provenance=None if provenance is None else list(provenance),
        )


@dataclass
class AugmentedProposals:
    """
    Positive Original-Proposals gefolgt von allen verfeinerten Proposals.

    Die Reihenfolge ist immer: zuerst die Positiven, dann die verfeinerten
    Boxen in der Reihenfolge der Originale. Duplikate bleiben erhalten.
    """

    image_id: int
    boxes: np.ndarray
    provenance: list[Provenance]
    max_ious: np.ndarray
    matched_gt: np.ndarray
    source_index: np.ndarray

    def __len__(self) -> int:
        return len(self.boxes)

    @property
    def refined_mask(self) -> np.ndarray:
        return np.array([p == Provenance.REFINED for p in self.provenance], dtype=bool)

    @property
    def num_positive_originals(self) -> int:
        return int(np.count_nonzero(~self.refined_mask))

    def refined_boxes(self) -> np.ndarray:
        return self.boxes[self.refined_mask]

    def to_proposal_set(self) -> ProposalSet:
        """Für Dumps: Boxen mit Herkunft, ohne Scores."""
        return ProposalSet(image_id=self.image_id, boxes=self.boxes.copy(), provenance=list(self.provenance))
