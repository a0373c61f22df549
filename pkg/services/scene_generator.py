"""Generator für synthetische Szenen mit achsenparallelen Objekten."""

import logging

import numpy as np

from models.scene import GroundTruth, SceneSpec

logger = logging.getLogger(__name__)


def scene_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Zufallsgenerator, der nur von (seed, index, stream) abhängt."""
    return np.random.default_rng([seed, index, stream])


class SceneGenerator:
    """Erzeugt Bild und Ground Truth deterministisch aus (Seed, Index)."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self._signatures = spec.signatures()
        if spec.object_size[1] > min(spec.height, spec.width):
            raise ValueError(
                f"Objektgröße bis {spec.object_size[1]} passt nicht in ein {spec.width}x{spec.height}-Bild"
            )

    def generate(self, index: int) -> tuple[np.ndarray, GroundTruth]:
        """
        Erzeugt eine Szene.

        Objekte sind Rechtecke mit ganzzahligen Koordinaten; alle Pixel im
        Inneren tragen die Intensitätssignatur ihrer Klasse. Spätere Objekte
        überdecken frühere. Danach wird gaußsches Rauschen addiert.

        Args:
            index: Bildindex (gleichzeitig image_id)

        Returns:
            Bild (C, H, W) und Ground Truth
        """
        spec = self.spec
        rng = scene_rng(spec.seed, index)
        image = np.zeros((spec.channels, spec.height, spec.width), dtype=np.float64)

        n_lo, n_hi = spec.objects_per_image
        count = int(rng.integers(n_lo, n_hi + 1))
        s_lo, s_hi = spec.object_size
        boxes = np.zeros((count, 4), dtype=np.float64)
        classes = np.zeros(count, dtype=np.int64)
        for i in range(count):
            w = int(rng.integers(s_lo, s_hi + 1))
            h = int(rng.integers(s_lo, s_hi + 1))
            x = int(rng.integers(0, spec.width - w + 1))
            y = int(rng.integers(0, spec.height - h + 1))
            c = int(rng.integers(0, spec.num_classes))
            image[:, y : y + h, x : x + w] = self._signatures[c][:, None, None]
            boxes[i] = (x, y, x + w, y + h)
            classes[i] = c

        if spec.noise_sigma > 0:
            image += rng.normal(0.0, spec.noise_sigma, size=image.shape)

        gt = GroundTruth(image_id=index, boxes=boxes, classes=classes, image_size=(spec.height, spec.width))
        return image, gt


def generate_scene(spec: SceneSpec, index: int) -> tuple[np.ndarray, GroundTruth]:
    """Kurzform für `SceneGenerator(spec).generate(index)`."""
    return SceneGenerator(spec).generate(index)
