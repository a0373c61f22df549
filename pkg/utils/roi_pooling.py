"""RoI-Merkmalsextraktion: Mittelwert-Pooling auf einem festen S×S-Raster.

Jede Rasterzelle liefert den Mittelwert der Pixel, deren Mittelpunkt in der
Zelle liegt (halboffen [a, b)). Enthält eine Zelle keinen Pixelmittelpunkt,
wird bilinear am Zellmittelpunkt abgetastet. Das letzte Merkmal ist der
konstante Bias 1.0.
"""

import numpy as np

from models.box import Box, as_box_array
from utils.box_ops import clip_boxes

DEFAULT_GRID_SIZE = 4


def feature_dim(channels: int, grid_size: int) -> int:
    """Länge eines Merkmalsvektors: C·S·S + 1."""
    return channels * grid_size * grid_size + 1


class FeatureExtractor:
    """Poolt Boxen eines Bildes; das Integralbild wird einmal pro Bild berechnet."""

    def __init__(self, image: np.ndarray, grid_size: int = DEFAULT_GRID_SIZE):
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3:
            raise ValueError(f"Bild muss die Form (C, H, W) haben, erhalten: {image.shape}")
        if grid_size < 1:
            raise ValueError("grid_size muss >= 1 sein")
        if not np.all(np.isfinite(image)):
            raise ValueError("Bild enthält nicht-endliche Werte")
        self.image = image
        self.grid_size = grid_size
        self.channels, self.height, self.width = image.shape
        integral = np.zeros((self.channels, self.height + 1, self.width + 1), dtype=np.float64)
        integral[:, 1:, 1:] = image.cumsum(axis=1).cumsum(axis=2)
        self._integral = integral

    @property
    def bounds(self) -> Box:
        return Box(0.0, 0.0, float(self.width), float(self.height))

    @property
    def feature_dim(self) -> int:
        return feature_dim(self.channels, self.grid_size)

    def pool(self, boxes) -> np.ndarray:
        """
        Berechnet Merkmalsvektoren für mehrere Boxen.

        Args:
            boxes: Boxen (N, 4) in Bildkoordinaten

        Returns:
            Merkmale (N, C·S·S + 1)

        Raises:
            ValueError: wenn eine Box nach dem Clipping keine Fläche hat
        """
        b = clip_boxes(as_box_array(boxes), self.bounds)
        n = len(b)
        s = self.grid_size
        if n == 0:
            return np.zeros((0, self.feature_dim), dtype=np.float64)
        if np.any(b[:, 2] <= b[:, 0]) or np.any(b[:, 3] <= b[:, 1]):
            raise ValueError("Box ohne Fläche nach dem Clipping auf das Bild")

        steps = np.arange(s + 1, dtype=np.float64) / s
        xs = b[:, 0:1] + (b[:, 2:3] - b[:, 0:1]) * steps  # (N, S+1)
        ys = b[:, 1:2] + (b[:, 3:4] - b[:, 1:2]) * steps

        # Erster Pixel mit Mittelpunkt >= Kante
        cols = np.clip(np.ceil(xs - 0.5), 0, self.width).astype(np.int64)
        rows = np.clip(np.ceil(ys - 0.5), 0, self.height).astype(np.int64)

        r0 = rows[:, :-1, None]
        r1 = rows[:, 1:, None]
        c0 = cols[:, None, :-1]
        c1 = cols[:, None, 1:]
        integral = self._integral
        sums = integral[:, r1, c1] - integral[:, r0, c1] - integral[:, r1, c0] + integral[:, r0, c0]
        counts = (r1 - r0) * (c1 - c0)  # (N, S, S)

        means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
        if np.any(counts == 0):
            centers_x = 0.5 * (xs[:, :-1] + xs[:, 1:])
            centers_y = 0.5 * (ys[:, :-1] + ys[:, 1:])
            sampled = self._bilinear(
                np.broadcast_to(centers_x[:, None, :], counts.shape),
                np.broadcast_to(centers_y[:, :, None], counts.shape),
            )
            means = np.where(counts > 0, means, sampled)

        pooled = np.transpose(means, (1, 0, 2, 3)).reshape(n, -1)
        return np.concatenate([pooled, np.ones((n, 1))], axis=1)

    def pool_one(self, box: Box) -> np.ndarray:
        return self.pool([box])[0]

    def _bilinear(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Bilineare Abtastung an kontinuierlichen Punkten; Pixelwerte liegen auf den Pixelmitten."""
        u = np.clip(x - 0.5, 0.0, self.width - 1)
        v = np.clip(y - 0.5, 0.0, self.height - 1)
        x0 = np.floor(u).astype(np.int64)
        y0 = np.floor(v).astype(np.int64)
        x1 = np.minimum(x0 + 1, self.width - 1)
        y1 = np.minimum(y0 + 1, self.height - 1)
        fx = u - x0
        fy = v - y0
        img = self.image
        top = img[:, y0, x0] * (1 - fx) + img[:, y0, x1] * fx
        bottom = img[:, y1, x0] * (1 - fx) + img[:, y1, x1] * fx
        return top * (1 - fy) + bottom * fy


def roi_pool(image: np.ndarray, box: Box, grid_size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    """Merkmalsvektor einer einzelnen Box (Länge C·S·S + 1)."""
    return FeatureExtractor(image, grid_size).pool_one(box)
