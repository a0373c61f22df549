"""Synthetischer Datensatz: Szenen und Original-Proposals auf Abruf."""

from typing import Iterable

import numpy as np

from models.config import ExperimentConfig
from models.proposals import ProposalSet
from models.scene import GroundTruth
from services.proposal_augmenter import TrainingSample
from services.proposal_generator import generate_proposals
from services.scene_generator import SceneGenerator, scene_rng

# Zufallsstrom der Proposals, getrennt vom Szenenstrom 0
PROPOSAL_STREAM = 1


class SyntheticDataset:
    """
    Erzeugt Bilder, Ground Truth und Proposals deterministisch aus (Seed, Index).

    Indizes [0, num_train) bilden den Trainingsteil, die folgenden
    num_test Indizes den Testteil.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.spec = config.scene_spec()
        self.generator = SceneGenerator(self.spec)

    @property
    def train_indices(self) -> range:
        return range(self.config.dataset.num_train)

    @property
    def test_indices(self) -> range:
        return self.config.dataset.test_indices()

    def scene(self, index: int) -> tuple[np.ndarray, GroundTruth]:
        return self.generator.generate(index)

    def proposals(self, gt: GroundTruth) -> ProposalSet:
        cfg = self.config.proposals
        return generate_proposals(
            gt,
            cfg.noise_sigma,
            cfg.negatives_per_image,
            scene_rng(self.spec.seed, gt.image_id, PROPOSAL_STREAM),
            jitters_per_gt=cfg.jitters_per_gt,
            min_size=cfg.min_size,
        )

    def sample(self, index: int) -> TrainingSample:
        image, gt = self.scene(index)
        return TrainingSample(image=image, gt=gt, proposals=self.proposals(gt))

    def samples(self, indices: Iterable[int]) -> list[TrainingSample]:
        return [self.sample(i) for i in indices]
