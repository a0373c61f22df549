"""Box-Geometrie: IoU, Delta-Kodierung und Clipping.

Alle Funktionen sind reine Funktionen auf unveränderlichen Werten. Es gibt
jeweils eine Variante für einzelne `Box`-Objekte und eine vektorisierte
Variante für Arrays der Form (N, 4).
"""

import math
from typing import Optional, Sequence

import numpy as np

from models.box import Box, BoxDeltas, as_box_array

# Konventionen des RoI-Heads (x, y, w, h)
DEFAULT_DELTA_WEIGHTS: tuple[float, float, float, float] = (10.0, 10.0, 5.0, 5.0)
SCALE_CLAMP: float = math.log(1000.0 / 16)


def _validate_weights(weights: Sequence[float]) -> np.ndarray:
    array = np.asarray(weights, dtype=np.float64)
    if array.shape != (4,):
        raise ValueError(f"Delta-Gewichte brauchen vier Werte, erhalten: {array.shape}")
    if np.any(array <= 0):
        raise ValueError(f"Delta-Gewichte müssen positiv sein: {tuple(array)}")
    return array


def box_areas(boxes) -> np.ndarray:
    """Flächen einer Box-Menge (N, 4)."""
    b = as_box_array(boxes)
    return np.maximum(b[:, 2] - b[:, 0], 0.0) * np.maximum(b[:, 3] - b[:, 1], 0.0)


def iou_matrix(proposals, gts) -> np.ndarray:
    """
    Paarweise IoU zwischen zwei Box-Mengen.

    Args:
        proposals: N Boxen (Zeilen)
        gts: M Boxen (Spalten)

    Returns:
        Matrix der Form (N, M) mit Werten in [0, 1]. Boxen ohne Fläche haben
        gegen jede Box (auch gegen sich selbst) IoU 0.
    """
    a = as_box_array(proposals)
    b = as_box_array(gts)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)), dtype=np.float64)

    area_a = box_areas(a)
    area_b = box_areas(b)

    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.maximum(ix2 - ix1, 0.0) * np.maximum(iy2 - iy1, 0.0)
    union = area_a[:, None] + area_b[None, :] - inter

    valid = (area_a[:, None] > 0) & (area_b[None, :] > 0) & (union > 0)
    result = np.zeros_like(inter)
    np.divide(inter, union, out=result, where=valid)
    return np.clip(result, 0.0, 1.0)


def iou(a: Box, b: Box) -> float:
    """IoU zweier Boxen; 0 bei disjunkten oder flächenlosen Boxen."""
    return float(iou_matrix([a], [b])[0, 0])


def encode_boxes(anchors, targets, weights: Sequence[float] = DEFAULT_DELTA_WEIGHTS) -> np.ndarray:
    """
    Kodiert Zielboxen relativ zu Ankerboxen (vektorisiert).

    Args:
        anchors: Ankerboxen (N, 4) mit positiver Breite und Höhe
        targets: Zielboxen (N, 4) mit positiver Breite und Höhe
        weights: (wx, wy, ww, wh)

    Returns:
        Deltas (N, 4) als (tx, ty, tw, th)
    """
    a = as_box_array(anchors)
    t = as_box_array(targets)
    if a.shape != t.shape:
        raise ValueError(f"Anker und Ziele brauchen dieselbe Form: {a.shape} vs {t.shape}")
    wx, wy, ww, wh = _validate_weights(weights)

    aw = a[:, 2] - a[:, 0]
    ah = a[:, 3] - a[:, 1]
    tw = t[:, 2] - t[:, 0]
    th = t[:, 3] - t[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("Ankerbox mit Breite oder Höhe <= 0")
    if np.any(tw <= 0) or np.any(th <= 0):
        raise ValueError("Zielbox mit Breite oder Höhe <= 0")

    acx = a[:, 0] + 0.5 * aw
    acy = a[:, 1] + 0.5 * ah
    tcx = t[:, 0] + 0.5 * tw
    tcy = t[:, 1] + 0.5 * th

    return np.stack(
        (
            wx * (tcx - acx) / aw,
            wy * (tcy - acy) / ah,
            ww * np.log(tw / aw),
            wh * np.log(th / ah),
        ),
        axis=1,
    )


def decode_boxes(
    anchors,
    deltas,
    weights: Sequence[float] = DEFAULT_DELTA_WEIGHTS,
    clip_region: Optional[Box] = None,
) -> np.ndarray:
    """
    Wendet Deltas auf Ankerboxen an (Umkehrung von `encode_boxes`).

    tw/ww und th/wh werden vor der Exponentiation nach oben auf
    ln(1000/16) begrenzt.

    Args:
        anchors: Ankerboxen (N, 4) mit positiver Fläche
        deltas: Deltas (N, 4)
        weights: (wx, wy, ww, wh)
        clip_region: Optionaler Bildbereich, auf den das Ergebnis begrenzt wird

    Returns:
        Dekodierte Boxen (N, 4)
    """
    a = as_box_array(anchors)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    if a.shape != d.shape:
        raise ValueError(f"Anker und Deltas brauchen dieselbe Form: {a.shape} vs {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("Deltas enthalten nicht-endliche Werte")
    wx, wy, ww, wh = _validate_weights(weights)

    aw = a[:, 2] - a[:, 0]
    ah = a[:, 3] - a[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ValueError("Ankerbox mit Breite oder Höhe <= 0")
    acx = a[:, 0] + 0.5 * aw
    acy = a[:, 1] + 0.5 * ah

    dx = d[:, 0] / wx
    dy = d[:, 1] / wy
    dw = np.minimum(d[:, 2] / ww, SCALE_CLAMP)
    dh = np.minimum(d[:, 3] / wh, SCALE_CLAMP)

    cx = dx * aw + acx
    cy = dy * ah + acy
    w = np.exp(dw) * aw
    h = np.exp(dh) * ah

    boxes = np.stack((cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h), axis=1)
    if clip_region is not None:
        boxes = clip_boxes(boxes, clip_region)
    return boxes


def encode_deltas(anchor: Box, target: Box, weights: Sequence[float] = DEFAULT_DELTA_WEIGHTS) -> BoxDeltas:
    """Kodiert eine einzelne Zielbox relativ zu ihrem Anker."""
    return BoxDeltas.from_array(encode_boxes([anchor], [target], weights)[0])


def decode_deltas(
    anchor: Box,
    deltas: BoxDeltas,
    weights: Sequence[float] = DEFAULT_DELTA_WEIGHTS,
    clip_region: Optional[Box] = None,
) -> Box:
    """Dekodiert einzelne Deltas relativ zu einem Anker."""
    decoded = decode_boxes([anchor], deltas.to_array()[None, :], weights, clip_region)
    return Box.from_array(decoded[0])


def clip_boxes(boxes, bounds: Box) -> np.ndarray:
    """Begrenzt alle Koordinaten auf den Bereich `bounds` (vektorisiert)."""
    b = as_box_array(boxes).copy()
    b[:, 0] = np.clip(b[:, 0], bounds.x1, bounds.x2)
    b[:, 2] = np.clip(b[:, 2], bounds.x1, bounds.x2)
    b[:, 1] = np.clip(b[:, 1], bounds.y1, bounds.y2)
    b[:, 3] = np.clip(b[:, 3], bounds.y1, bounds.y2)
    return b


def clip_box(b: Box, bounds: Box) -> Box:
    """Begrenzt eine Box auf `bounds`; kann am Rand eine flächenlose Box ergeben."""
    return Box.from_array(clip_boxes([b], bounds)[0])


def nonempty_mask(boxes, min_size: float = 0.0) -> np.ndarray:
    """Maske der Boxen mit Breite und Höhe > min_size."""
    b = as_box_array(boxes)
    return ((b[:, 2] - b[:, 0]) > min_size) & ((b[:, 3] - b[:, 1]) > min_size)
