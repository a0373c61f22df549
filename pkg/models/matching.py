"""Datenmodelle für Zuordnung und Sampling von Proposals."""

from dataclasses import dataclass

import numpy as np

NO_MATCH = -1


@dataclass
class MatchResult:
    """Zuordnung jeder Proposal zur Ground Truth mit maximaler IoU."""

    proposal_boxes: np.ndarray  # (N, 4)
    matched_gt: np.ndarray  # (N,) Index oder NO_MATCH
    max_iou: np.ndarray  # (N,)
    positive: np.ndarray  # (N,) bool
    class_targets: np.ndarray  # (N,) GT-Klasse oder Hintergrund (= K)
    matched_boxes: np.ndarray  # (N, 4) zugeordnete GT-Box, Nullen ohne Zuordnung
    background_class: int

    def __len__(self) -> int:
        return len(self.matched_gt)

    @property
    def num_positive(self) -> int:
        return int(np.count_nonzero(self.positive))


@dataclass
class SampleBatch:
    """Ausgewählte Trainingsproposals eines Bildes."""

    indices: np.ndarray  # (B,) Indizes in die Proposals des MatchResult
    class_targets: np.ndarray  # (B,)
    positive: np.ndarray  # (B,) bool
    delta_targets: np.ndarray  # (B, 4); nur für positive Einträge gültig, sonst 0
    iou_targets: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.indices)

    @property
    def num_positive(self) -> int:
        return int(np.count_nonzero(self.positive))
