"""Gemeinsame Fixtures: kleine Szenen, Konfigurationen und Heads."""

import numpy as np
import pytest

from models.config import DatasetConfig, ExperimentConfig, ProposalConfig, TrainConfig
from models.head import HeadModel
from models.scene import GroundTruth, SceneSpec


def random_head(num_classes: int = 2, channels: int = 1, grid_size: int = 2, seed: int = 0, scale: float = 0.1):
    """Head mit zufälligen Gewichten in allen drei Zweigen."""
    rng = np.random.default_rng(seed)
    model = HeadModel.zeros(num_classes, channels, grid_size)
    model.w_cls = rng.normal(0.0, scale, size=model.w_cls.shape)
    model.w_reg = rng.normal(0.0, scale, size=model.w_reg.shape)
    model.w_iou = rng.normal(0.0, scale, size=model.w_iou.shape)
    return model


@pytest.fixture
def small_spec() -> SceneSpec:
    return SceneSpec(
        height=32,
        width=32,
        channels=3,
        num_classes=2,
        objects_per_image=(1, 2),
        object_size=(8, 14),
        noise_sigma=0.1,
    )


@pytest.fixture
def small_config(small_spec) -> ExperimentConfig:
    """Konfiguration, die in Sekunden trainiert."""
    return ExperimentConfig(
        seed=3,
        workers=1,
        scene=small_spec,
        proposals=ProposalConfig(jitters_per_gt=4, negatives_per_image=6),
        dataset=DatasetConfig(num_train=12, num_test=4),
        train=TrainConfig(
            iterations=3,
            images_per_batch=2,
            batch_size_per_image=64,
            grid_size=2,
            lr_steps=(),
            ridge_warm_start_images=0,
        ),
    )


@pytest.fixture
def gradient_image() -> np.ndarray:
    """Einkanaliges 40x40-Bild mit Rampe; jede Box hat andere Merkmale."""
    ys, xs = np.mgrid[0:40, 0:40].astype(np.float64)
    return (0.02 * xs + 0.01 * ys + 0.1 * np.sin(xs / 3.0))[None, :, :]


@pytest.fixture
def two_object_gt() -> GroundTruth:
    return GroundTruth(
        image_id=7,
        boxes=np.array([[4.0, 4.0, 18.0, 18.0], [20.0, 10.0, 36.0, 30.0]]),
        classes=np.array([0, 1]),
        image_size=(40, 40),
    )
