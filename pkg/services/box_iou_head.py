"""Numerik des linearen Box-IoU-Heads: Vorwärtsrechnung, Verluste, Gradienten.

Der Head hat drei Zweige auf denselben Merkmalen:
- Klassifikation: softmax(W_cls · f) über K+1 Klassen (Hintergrund = K)
- Regression: klassenagnostische Deltas W_reg · f
- IoU: sigmoid(W_iou · f)

Gesamtverlust = w_cls · CE + w_reg · L1 + w_iou · BCE; Regression und IoU
werden nur über ihre jeweils beteiligten Proposals gemittelt.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from models.head import HeadGradients, HeadModel, HeadOutput, LossReport
from utils.errors import SchemaError
from utils.file_helper import FileHelper

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "checkpoint/v1"
_LOG_EPS = 1e-300


def softmax(logits: np.ndarray) -> np.ndarray:
    """Zeilenweises Softmax mit Maximum-Subtraktion."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerisch stabile logistische Funktion."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_features(model: HeadModel, features: np.ndarray) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[None, :]
    if f.ndim != 2 or f.shape[1] != model.feature_dim:
        raise ValueError(f"Merkmalsdimension {f.shape[-1]} passt nicht zum Modell ({model.feature_dim})")
    return f


def forward(model: HeadModel, features: np.ndarray) -> HeadOutput:
    """
    Vorwärtsrechnung für N Merkmalsvektoren.

    Args:
        model: Der Head
        features: (N, D) oder (D,)

    Returns:
        HeadOutput mit Wahrscheinlichkeiten, Deltas und IoU-Scores
    """
    f = _as_features(model, features)
    cls_logits = f @ model.w_cls.T
    iou_logits = (f @ model.w_iou.T)[:, 0]
    return HeadOutput(
        probs=softmax(cls_logits),
        deltas=f @ model.w_reg.T,
        iou_logits=iou_logits,
        iou_scores=sigmoid(iou_logits),
        cls_logits=cls_logits,
    )


def _check_class_targets(targets: np.ndarray, num_outputs: int) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if np.any(t < 0) or np.any(t >= num_outputs):
        raise ValueError(f"Klassenziel außerhalb von [0, {num_outputs - 1}]")
    return t


def _check_iou_targets(targets: np.ndarray) -> np.ndarray:
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise ValueError("IoU-Ziele müssen in [0, 1] liegen")
    return t


def loss_cls(probs: np.ndarray, targets: np.ndarray) -> float:
    """Kreuzentropie (Mittelwert) für Wahrscheinlichkeiten (N, K+1)."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    t = _check_class_targets(targets, p.shape[1])
    if len(t) == 0:
        return 0.0
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(t)), t], _LOG_EPS))))


def cross_entropy_from_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Kreuzentropie direkt aus Logits (log-sum-exp)."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    t = _check_class_targets(targets, z.shape[1])
    if len(t) == 0:
        return 0.0
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    return float(np.mean(lse - z[np.arange(len(t)), t]))


def loss_reg(pred_deltas: np.ndarray, target_deltas: np.ndarray) -> float:
    """Elementweiser L1-Mittelwert."""
    p = np.asarray(pred_deltas, dtype=np.float64).reshape(-1, 4)
    t = np.asarray(target_deltas, dtype=np.float64).reshape(-1, 4)
    if p.shape != t.shape:
        raise ValueError("Vorhersage und Ziel haben unterschiedliche Formen")
    if p.size == 0:
        return 0.0
    return float(np.mean(np.abs(p - t)))


def loss_iou(iou_logits: np.ndarray, target_iou: np.ndarray) -> float:
    """
    Binäre Kreuzentropie zwischen sigmoid(Logit) und IoU-Ziel.

    Fusionierte Form max(z, 0) − z·t + log(1 + exp(−|z|)), endlich auch für
    sehr große |z|.
    """
    z = np.asarray(iou_logits, dtype=np.float64).reshape(-1)
    t = _check_iou_targets(target_iou)
    if z.shape != t.shape:
        raise ValueError("Logits und Ziele haben unterschiedliche Längen")
    if len(z) == 0:
        return 0.0
    return float(np.mean(np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))))


@dataclass
class HeadBatch:
    """Trainingsdaten eines Schritts, getrennt nach Zweig."""

    cls_features: np.ndarray
    cls_targets: np.ndarray
    reg_features: np.ndarray
    reg_targets: np.ndarray
    iou_features: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    iou_targets: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def empty(cls, feature_dim: int) -> "HeadBatch":
        return cls(
            cls_features=np.zeros((0, feature_dim)),
            cls_targets=np.zeros(0, dtype=np.int64),
            reg_features=np.zeros((0, feature_dim)),
            reg_targets=np.zeros((0, 4)),
            iou_features=np.zeros((0, feature_dim)),
            iou_targets=np.zeros(0),
        )

    @classmethod
    def concatenate(cls, batches: Sequence["HeadBatch"], feature_dim: int) -> "HeadBatch":
        """Fügt Teil-Batches in gegebener Reihenfolge zusammen."""
        if not batches:
            return cls.empty(feature_dim)

        def cat(name: str, shape: tuple) -> np.ndarray:
            parts = [np.asarray(getattr(b, name)).reshape(shape) for b in batches]
            return np.concatenate(parts, axis=0)

        return cls(
            cls_features=cat("cls_features", (-1, feature_dim)),
            cls_targets=cat("cls_targets", (-1,)).astype(np.int64),
            reg_features=cat("reg_features", (-1, feature_dim)),
            reg_targets=cat("reg_targets", (-1, 4)),
            iou_features=cat("iou_features", (-1, feature_dim)),
            iou_targets=cat("iou_targets", (-1,)),
        )


def loss_and_gradients(
    model: HeadModel,
    batch: HeadBatch,
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[LossReport, HeadGradients]:
    """
    Gesamtverlust und analytische Gradienten.

    Args:
        model: Der Head (wird nicht verändert)
        batch: Merkmale und Ziele je Zweig
        weights: Verlustgewichte (Klassifikation, Regression, IoU)

    Returns:
        LossReport und Gradienten nach W_cls, W_reg, W_iou
    """
    w_cls, w_reg, w_iou = weights
    report = LossReport()
    grad_cls = np.zeros_like(model.w_cls)
    grad_reg = np.zeros_like(model.w_reg)
    grad_iou = np.zeros_like(model.w_iou)

    f = batch.cls_features
    if len(f):
        f = _as_features(model, f)
        targets = _check_class_targets(batch.cls_targets, model.num_classes + 1)
        logits = f @ model.w_cls.T
        probs = softmax(logits)
        report.loss_cls = cross_entropy_from_logits(logits, targets)
        report.num_cls = len(f)
        d_logits = probs.copy()
        d_logits[np.arange(len(f)), targets] -= 1.0
        grad_cls = w_cls * (d_logits.T @ f) / len(f)

    f = batch.reg_features
    if len(f):
        f = _as_features(model, f)
        pred = f @ model.w_reg.T
        report.loss_reg = loss_reg(pred, batch.reg_targets)
        report.num_reg = len(f)
        d_pred = np.sign(pred - batch.reg_targets) / pred.size
        grad_reg = w_reg * (d_pred.T @ f)

    f = batch.iou_features
    if len(f):
        f = _as_features(model, f)
        targets = _check_iou_targets(batch.iou_targets)
        z = (f @ model.w_iou.T)[:, 0]
        report.loss_iou = loss_iou(z, targets)
        report.num_iou = len(f)
        d_z = (sigmoid(z) - targets) / len(f)
        grad_iou = w_iou * (d_z[None, :] @ f)

    report.total = w_cls * report.loss_cls + w_reg * report.loss_reg + w_iou * report.loss_iou
    return report, HeadGradients(w_cls=grad_cls, w_reg=grad_reg, w_iou=grad_iou)


def sgd_step(model: HeadModel, gradients: HeadGradients, lr: float, weight_decay: float = 0.0) -> HeadModel:
    """Ein Gradientenabstiegsschritt; liefert ein neues Modell."""
    if lr < 0:
        raise ValueError("Lernrate muss >= 0 sein")
    updated = model.copy()
    for name in ("w_cls", "w_reg", "w_iou"):
        weights = getattr(model, name)
        grad = getattr(gradients, name) + weight_decay * weights
        setattr(updated, name, weights - lr * grad)
    return updated


def fit_reg_ridge(features: np.ndarray, delta_targets: np.ndarray, lam: float) -> np.ndarray:
    """
    Geschlossene Lösung von min Σ‖W f − t‖² + λ‖W‖² über die Normalgleichungen.

    Args:
        features: (N, D)
        delta_targets: (N, 4)
        lam: λ >= 0

    Returns:
        W_reg der Form (4, D)

    Raises:
        ValueError: bei λ = 0 und rangdefizienten Merkmalen
    """
    if lam < 0:
        raise ValueError("lambda muss >= 0 sein")
    f = np.asarray(features, dtype=np.float64)
    t = np.asarray(delta_targets, dtype=np.float64).reshape(-1, 4)
    if f.ndim != 2 or len(f) == 0:
        raise ValueError("Mindestens eine Stichprobe nötig")
    if len(f) != len(t):
        raise ValueError("Anzahl Merkmale und Ziele unterschiedlich")
    gram = f.T @ f + lam * np.eye(f.shape[1])
    rhs = f.T @ t
    if lam == 0 and np.linalg.matrix_rank(f) < f.shape[1]:
        raise ValueError("Merkmale sind rangdefizient; lambda > 0 verwenden")
    try:
        solution = scipy.linalg.solve(gram, rhs, assume_a="pos")
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError) as e:
        raise ValueError(f"Normalgleichungen singulär ({e}); lambda > 0 verwenden") from e
    return solution.T


def save_checkpoint(path: Path, heads: Sequence[HeadModel], metadata: dict | None = None) -> Path:
    """
    Speichert einen oder mehrere Heads (Kaskade) als versioniertes JSON.

    Floats werden mit voller Präzision geschrieben, daher ist das Laden exakt.
    """
    document = {
        "schema": CHECKPOINT_SCHEMA,
        "metadata": metadata or {},
        "heads": [head.to_dict() for head in heads],
    }
    return FileHelper.write_json(Path(path), document)


def load_checkpoint(path: Path) -> tuple[list[HeadModel], dict]:
    """Lädt Heads und Metadaten aus einem Checkpoint."""
    document = FileHelper.read_json(Path(path))
    if not isinstance(document, dict) or document.get("schema") != CHECKPOINT_SCHEMA:
        raise SchemaError(f"Kein Checkpoint im Format {CHECKPOINT_SCHEMA}", str(path), field="schema")
    try:
        heads = [HeadModel.from_dict(h) for h in document["heads"]]
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Ungültiger Head: {e}", str(path), field="heads") from e
    if not heads:
        raise SchemaError("Checkpoint enthält keinen Head", str(path), field="heads")
    return heads, document.get("metadata", {})
