"""Trainingsschleife für Einzel-Head und Kaskade."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from models.config import ExperimentConfig
from models.head import HeadModel
from models.proposals import ProposalSet
from services import box_iou_head, proposal_augmenter
from services.detector import build_detector
from services.evaluator import average_precision, average_recall
from services.matcher import cascade_thresholds, match
from services.synthetic_dataset import SyntheticDataset
from utils.box_ops import encode_boxes
from utils.errors import ConfigError
from utils.file_helper import FileHelper
from utils.roi_pooling import FeatureExtractor

logger = logging.getLogger(__name__)

ProgressHook = Callable[[dict], None]

# Zufallsströme neben Szenen (0) und Proposals (1)
INIT_STREAM = 2
BATCH_STREAM = 3
STEP_STREAM = 4

CHECKPOINT_NAME = "model.json"
LOG_NAME = "train_log.jsonl"


@dataclass
class TrainingResult:
    """Ergebnis eines Trainingslaufs."""

    heads: list[HeadModel]
    log: list[dict] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None


class TrainingManager:
    """
    Führt das Training gemäß ExperimentConfig aus.

    Ergebnisse hängen nur von Konfiguration und Seed ab, nicht von der
    Anzahl der Worker.
    """

    def __init__(self, config: ExperimentConfig, output_dir: Optional[Path] = None):
        self.config = config
        self.output_dir = Path(output_dir) if output_dir else None
        self.progress_hooks: list[ProgressHook] = []
        self._validate()
        self.dataset = SyntheticDataset(config)

    def add_progress_hook(self, hook: ProgressHook) -> None:
        """Registriert einen Callback, der pro Iteration einen Statuseintrag erhält."""
        self.progress_hooks.append(hook)

    def _emit(self, entry: dict) -> None:
        for hook in self.progress_hooks:
            hook(entry)

    def _validate(self) -> None:
        """Konfigurationsfehler werden vor Iteration 0 gemeldet."""
        cfg = self.config
        train = cfg.train
        if train.iterations > 0 and cfg.dataset.num_train < train.images_per_batch:
            raise ConfigError(
                f"dataset.num_train ({cfg.dataset.num_train}) ist kleiner als "
                f"train.images_per_batch ({train.images_per_batch})"
            )
        if train.cascade_box_iou and not train.cascade:
            raise ConfigError("train.cascade_box_iou setzt train.cascade voraus")
        if cfg.workers < 0:
            raise ConfigError("workers muss >= 0 sein")
        spec = cfg.scene
        if spec.object_size[1] > min(spec.height, spec.width):
            raise ConfigError("scene.object_size passt nicht in das Bild")

    @property
    def workers(self) -> int:
        return self.config.resolved_workers()

    def initial_heads(self) -> list[HeadModel]:
        """Zufällig initialisierte Heads (drei bei Kaskade)."""
        cfg = self.config
        rng = np.random.default_rng([cfg.seed, INIT_STREAM])
        count = 3 if cfg.train.cascade else 1
        return [
            HeadModel.initialize(
                cfg.scene.num_classes, cfg.scene.channels, cfg.train.grid_size, rng, cfg.train.init_std
            )
            for _ in range(count)
        ]

    def ridge_warm_start(self, heads: list[HeadModel]) -> list[HeadModel]:
        """
        Setzt W_reg aller Heads auf die Ridge-Lösung über positive
        Original-Proposals der ersten Trainingsbilder (höchstens alle).
        """
        train = self.config.train
        count = min(train.ridge_warm_start_images, self.config.dataset.num_train)
        features: list[np.ndarray] = []
        targets: list[np.ndarray] = []
        head = heads[0]
        for sample in self.dataset.samples(range(count)):
            m = match(sample.proposals.boxes, sample.gt, train.fg_threshold, head.num_classes)
            pos = np.flatnonzero(m.positive)
            if len(pos) == 0:
                continue
            extractor = FeatureExtractor(sample.image, head.grid_size)
            features.append(extractor.pool(m.proposal_boxes[pos]))
            targets.append(encode_boxes(m.proposal_boxes[pos], m.matched_boxes[pos], head.delta_weights))
        if not features:
            logger.warning("Ridge-Warmstart übersprungen: keine positiven Proposals")
            return heads
        w_reg = box_iou_head.fit_reg_ridge(np.concatenate(features), np.concatenate(targets), train.ridge_lambda)
        warmed = []
        for h in heads:
            h = h.copy()
            h.w_reg = w_reg.copy()
            warmed.append(h)
        logger.info("Ridge-Warmstart auf %d Proposals aus %d Bildern", sum(len(f) for f in features), count)
        return warmed

    def train(self) -> TrainingResult:
        """
        Führt alle Iterationen aus, schreibt Checkpoints und Log.

        Returns:
            TrainingResult mit finalen Heads und Log-Einträgen
        """
        cfg = self.config
        train = cfg.train
        heads = self.initial_heads()
        if train.ridge_warm_start_images > 0 and cfg.dataset.num_train > 0:
            heads = self.ridge_warm_start(heads)

        thresholds = cascade_thresholds(train.threshold_schedule) if train.cascade else None
        batch_rng = np.random.default_rng([cfg.seed, BATCH_STREAM])
        log: list[dict] = []

        for iteration in range(train.iterations):
            indices = batch_rng.choice(cfg.dataset.num_train, size=train.images_per_batch, replace=False)
            samples = self.dataset.samples(int(i) for i in indices)
            step_rng = np.random.default_rng([cfg.seed, STEP_STREAM, iteration])
            entry: dict = {"iteration": iteration, "lr": train.learning_rate(iteration)}

            if train.cascade:
                heads, reports = proposal_augmenter.cascade_train_step(
                    heads, samples, train, step_rng, thresholds, iteration, self.workers
                )
                entry["stages"] = [
                    {"stage": r.stage, "threshold": r.threshold, "num_positive": r.num_positive, **r.losses.to_dict()}
                    for r in reports
                ]
                entry["total"] = sum(r.losses.total for r in reports)
            else:
                model, report = proposal_augmenter.train_step(
                    heads[0], samples, train, step_rng, iteration, self.workers
                )
                heads = [model]
                entry.update(report.to_dict())
            logger.debug("Iteration %d: %s", iteration, entry)

            if train.eval_period and (iteration + 1) % train.eval_period == 0:
                entry["snapshot"] = self.snapshot(heads)
                logger.info("Snapshot nach Iteration %d: %s", iteration + 1, entry["snapshot"])
            if train.checkpoint_period and (iteration + 1) % train.checkpoint_period == 0 and self.output_dir:
                path = self.output_dir / "checkpoints" / f"iter_{iteration + 1:06d}.json"
                box_iou_head.save_checkpoint(path, heads, self._metadata(iteration + 1))

            log.append(entry)
            self._emit(entry)

        result = TrainingResult(heads=heads, log=log)
        if self.output_dir:
            result.checkpoint_path = box_iou_head.save_checkpoint(
                self.output_dir / CHECKPOINT_NAME, heads, self._metadata(train.iterations)
            )
            FileHelper.write_jsonl(self.output_dir / LOG_NAME, log)
        return result

    def _metadata(self, iterations: int) -> dict:
        config = self.config.to_dict()
        # ohne workers: Checkpoint ist unabhängig von der Parallelität
        config.pop("workers", None)
        return {"iterations": iterations, "config": config}

    def snapshot(self, heads: list[HeadModel]) -> dict:
        """
        Zwischenauswertung auf den ersten eval_images Testbildern: AP,
        Anteil hochwertiger Positiver (original vs. augmentiert) und AR90
        der Original- und verfeinerten Proposals.
        """
        cfg = self.config
        indices = list(self.dataset.test_indices)[: cfg.train.eval_images]
        if not indices:
            return {}
        samples = self.dataset.samples(indices)
        gts = {s.gt.image_id: s.gt for s in samples}

        detector = build_detector(heads, cfg)
        detections = detector.infer_many([(s.image, s.proposals) for s in samples], self.workers)
        report = average_precision(detections, gts, workers=self.workers)

        stats = proposal_augmenter.augmentation_statistics(samples, heads[0], cfg.train.fg_threshold)
        original: dict[int, ProposalSet] = {s.gt.image_id: s.proposals for s in samples}
        refined = {
            s.gt.image_id: proposal_augmenter.ibbr_refine(heads[0], s.proposals, s.image, 1) for s in samples
        }
        budget = max(len(p) for p in original.values()) or 1
        snapshot = {"AP": report.ap, "AP50": report.ap50, "AP75": report.ap75, **stats}
        if any(len(gt) for gt in gts.values()):
            snapshot["original_AR90"] = average_recall(original, gts, budget).recall_at(0.9)
            snapshot["refined_AR90"] = average_recall(refined, gts, budget).recall_at(0.9)
        return snapshot


def train(config: ExperimentConfig, output_dir: Optional[Path] = None) -> TrainingResult:
    """Kurzform für `TrainingManager(config, output_dir).train()`."""
    return TrainingManager(config, output_dir).train()
