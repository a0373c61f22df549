"""Datenmodelle für Auswertungsergebnisse (AR, AP, IoU-Histogramme)."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# COCO-Schwellen 0.50, 0.55, ..., 0.95 (auf zwei Stellen gerundet)
COCO_IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
TABLE_AR_COLUMNS: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class ARTable:
    """Recall je IoU-Schwelle und deren Mittelwert (AR)."""

    thresholds: tuple[float, ...]
    recalls: tuple[float, ...]
    budget: int
    num_gts: int

    @property
    def ar(self) -> float:
        return float(np.mean(self.recalls))

    def recall_at(self, threshold: float) -> float:
        for t, r in zip(self.thresholds, self.recalls):
            if abs(t - threshold) < 1e-9:
                return r
        raise KeyError(f"Schwelle {threshold} nicht in der Tabelle")

    def is_monotone(self) -> bool:
        """AR@t darf mit wachsendem t nicht steigen."""
        return all(b <= a + 1e-12 for a, b in zip(self.recalls, self.recalls[1:]))

    def table_row(self) -> dict[str, float]:
        """Spalten AR50, AR60, AR70, AR80, AR90 wie in der Proposal-Vergleichstabelle."""
        return {f"AR{round(t * 100)}": self.recall_at(t) for t in TABLE_AR_COLUMNS}

    def to_dict(self) -> dict:
        return {
            "budget": self.budget,
            "num_gts": self.num_gts,
            "AR": self.ar,
            "thresholds": list(self.thresholds),
            "recalls": list(self.recalls),
        }


@dataclass
class IoUHistogram:
    """Histogramm der IoU positiver Proposals über [0.5, 1.0]."""

    edges: np.ndarray
    counts: np.ndarray
    population: str

    def __post_init__(self) -> None:
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.edges) != len(self.counts) + 1:
            raise ValueError("Anzahl Kanten muss Anzahl Bins + 1 sein")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("Bin-Kanten müssen streng steigen")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def mass_at_or_above(self, threshold: float) -> float:
        """Anteil der Population in Bins ab der Kante `threshold`."""
        if self.total == 0:
            return 0.0
        start = int(np.searchsorted(self.edges, threshold - 1e-12))
        return float(self.counts[start:].sum() / self.total)

    def merge(self, other: "IoUHistogram") -> "IoUHistogram":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("Histogramme mit unterschiedlichen Kanten")
        return IoUHistogram(self.edges.copy(), self.counts + other.counts, self.population)

    def to_rows(self) -> list[dict]:
        return [
            {"population": self.population, "lower": lo, "upper": hi, "count": int(c)}
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts)
        ]


@dataclass
class EvalReport:
    """AP-Zusammenfassung, AR-Tabellen, Histogramme und Score-Diagnostik."""

    ap: float
    ap50: float
    ap75: float
    ap_per_threshold: dict[float, float] = field(default_factory=dict)
    ap_per_class: dict[int, float] = field(default_factory=dict)
    ap_small: Optional[float] = None
    ap_medium: Optional[float] = None
    ap_large: Optional[float] = None
    ar_tables: dict[str, ARTable] = field(default_factory=dict)
    histograms: dict[str, IoUHistogram] = field(default_factory=dict)
    score_iou_spearman: Optional[float] = None

    def metric_rows(self) -> list[tuple[str, float]]:
        """Eine Zeile je Metrik, für CSV-Ausgabe."""
        rows: list[tuple[str, float]] = [("AP", self.ap), ("AP50", self.ap50), ("AP75", self.ap75)]
        for name, value in (("APs", self.ap_small), ("APm", self.ap_medium), ("APl", self.ap_large)):
            if value is not None:
                rows.append((name, value))
        for class_id, value in sorted(self.ap_per_class.items()):
            rows.append((f"AP_class{class_id}", value))
        for label, table in self.ar_tables.items():
            rows.append((f"{label}_AR", table.ar))
            rows.extend((f"{label}_{name}", value) for name, value in table.table_row().items())
        if self.score_iou_spearman is not None:
            rows.append(("score_iou_spearman", self.score_iou_spearman))
        return rows

    def to_dict(self) -> dict:
        return {
            "AP": self.ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "APs": self.ap_small,
            "APm": self.ap_medium,
            "APl": self.ap_large,
            "AP_per_threshold": {f"{t:.2f}": v for t, v in self.ap_per_threshold.items()},
            "AP_per_class": {str(k): v for k, v in self.ap_per_class.items()},
            "AR": {label: table.to_dict() for label, table in self.ar_tables.items()},
            "histograms": {
                label: {"edges": h.edges.tolist(), "counts": h.counts.tolist()} for label, h in self.histograms.items()
            },
            "score_iou_spearman": self.score_iou_spearman,
        }
