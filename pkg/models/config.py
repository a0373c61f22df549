"""Konfigurationsmodelle für Datensatz, Training und Inferenz."""

import dataclasses
import os
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Optional

from models.scene import SceneSpec
from utils.errors import ConfigError
from utils.schema_validator import SchemaValidator


class TrainMode(StrEnum):
    """Ablationsmodi: APDI und Box-IoU-Zweig jeweils an oder aus."""

    BASELINE = "baseline"
    APDI = "apdi"
    BOX_IOU = "box-iou"
    APDI_BOX_IOU = "apdi+box-iou"

    @property
    def uses_apdi(self) -> bool:
        return self in (TrainMode.APDI, TrainMode.APDI_BOX_IOU)

    @property
    def uses_iou(self) -> bool:
        return self in (TrainMode.BOX_IOU, TrainMode.APDI_BOX_IOU)


class ThresholdSchedule(StrEnum):
    BASELINE = "baseline"
    APDI = "apdi"


class IoUTargetSource(StrEnum):
    """Welche Proposals den IoU-Zweig trainieren."""

    AUGMENTED = "augmented"
    REFINED = "refined"


@dataclass(frozen=True)
class ProposalConfig:
    """Parameter des stochastischen Proposal-Generators."""

    jitters_per_gt: int = 8
    # Kalibriert, sodass die positiven IoUs überwiegend in [0.5, 0.8) liegen
    noise_sigma: float = 0.18
    negatives_per_image: int = 32
    min_size: float = 1.0

    def __post_init__(self) -> None:
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma muss >= 0 sein")
        if self.jitters_per_gt < 0 or self.negatives_per_image < 0:
            raise ValueError("Anzahlen müssen >= 0 sein")


@dataclass(frozen=True)
class DatasetConfig:
    """Aufteilung der Szenen-Indizes: [0, num_train) Training, danach Test."""

    num_train: int = 2000
    num_test: int = 200

    def __post_init__(self) -> None:
        if self.num_train < 0 or self.num_test < 0:
            raise ValueError("Datensatzgrößen müssen >= 0 sein")

    def test_indices(self) -> range:
        return range(self.num_train, self.num_train + self.num_test)


@dataclass(frozen=True)
class TrainConfig:
    """Trainingsparameter inklusive Ablationsschalter."""

    mode: TrainMode = TrainMode.BASELINE
    cascade: bool = False
    threshold_schedule: ThresholdSchedule = ThresholdSchedule.BASELINE
    cascade_box_iou: bool = False
    iterations: int = 1500
    images_per_batch: int = 8
    base_lr: float = 0.2
    lr_steps: tuple[int, ...] = (1000, 1333)
    gamma: float = 0.1
    weight_decay: float = 0.0
    batch_size_per_image: int = 512
    positive_fraction: float = 0.25
    fg_threshold: float = 0.5
    iou_branch_threshold: float = 0.3
    # zusätzliche Hintergrundboxen (IoU < iou_branch_threshold) für den IoU-Zweig, 0 = keine
    iou_background_per_image: int = 0
    iou_target_source: IoUTargetSource = IoUTargetSource.AUGMENTED
    routed_cap_per_image: int = 512
    cls_loss_weight: float = 1.0
    reg_loss_weight: float = 1.0
    iou_loss_weight: float = 1.0
    augment_warmup_iterations: int = 0
    ridge_warm_start_images: int = 256
    ridge_lambda: float = 1.0
    grid_size: int = 4
    init_std: float = 0.01
    checkpoint_period: int = 0
    eval_period: int = 0
    eval_images: int = 50

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", TrainMode(self.mode))
        object.__setattr__(self, "threshold_schedule", ThresholdSchedule(self.threshold_schedule))
        object.__setattr__(self, "iou_target_source", IoUTargetSource(self.iou_target_source))
        object.__setattr__(self, "lr_steps", tuple(int(s) for s in self.lr_steps))
        if self.iterations < 0:
            raise ValueError("iterations muss >= 0 sein")
        if self.images_per_batch < 1 or self.batch_size_per_image < 1:
            raise ValueError("Batchgrößen müssen >= 1 sein")
        if not 0 < self.positive_fraction <= 1:
            raise ValueError("positive_fraction muss in (0, 1] liegen")
        if not 0 < self.fg_threshold <= 1:
            raise ValueError("fg_threshold muss in (0, 1] liegen")
        if self.base_lr < 0 or self.ridge_lambda < 0:
            raise ValueError("Lernrate und Ridge-Lambda müssen >= 0 sein")
        if self.grid_size < 1:
            raise ValueError("grid_size muss >= 1 sein")
        if self.iou_background_per_image < 0 or self.ridge_warm_start_images < 0:
            raise ValueError("iou_background_per_image und ridge_warm_start_images müssen >= 0 sein")

    @property
    def uses_iou_branch(self) -> bool:
        return self.mode.uses_iou or (self.cascade and self.cascade_box_iou)

    def learning_rate(self, iteration: int) -> float:
        """Stufenweise abfallende Lernrate."""
        drops = sum(1 for step in self.lr_steps if iteration >= step)
        return self.base_lr * (self.gamma**drops)


@dataclass(frozen=True)
class InferenceConfig:
    """Parameter der zweistufigen Inferenz."""

    score_threshold: float = 0.05
    nms_threshold: float = 0.5
    max_detections: int = 100
    # None = automatisch: an, wenn der IoU-Zweig trainiert wurde
    calibrate: Optional[bool] = None
    # None = automatisch: 1 Verfeinerungsdurchlauf bei APDI, sonst 0
    refine_passes: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 < self.nms_threshold < 1:
            raise ValueError("nms_threshold muss in (0, 1) liegen")
        if self.max_detections < 1:
            raise ValueError("max_detections muss >= 1 sein")
        if self.refine_passes is not None and self.refine_passes < 0:
            raise ValueError("refine_passes muss >= 0 sein")


@dataclass(frozen=True)
class ExperimentConfig:
    """Gesamte Experimentkonfiguration (ein JSON-Dokument)."""

    seed: int = 0
    workers: int = 0
    scene: SceneSpec = field(default_factory=SceneSpec)
    proposals: ProposalConfig = field(default_factory=ProposalConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def resolved_inference(self) -> InferenceConfig:
        """Ersetzt automatische Inferenzschalter anhand des Trainingsmodus."""
        inference = self.inference
        calibrate = self.train.uses_iou_branch if inference.calibrate is None else inference.calibrate
        refine = (1 if self.train.mode.uses_apdi else 0) if inference.refine_passes is None else inference.refine_passes
        return dataclasses.replace(inference, calibrate=calibrate, refine_passes=refine)

    def resolved_workers(self) -> int:
        """0 bedeutet: alle verfügbaren CPU-Kerne."""
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def scene_spec(self) -> SceneSpec:
        """Szenenparameter mit dem Experiment-Seed."""
        return dataclasses.replace(self.scene, seed=self.seed)

    def with_overrides(self, **train_overrides) -> "ExperimentConfig":
        return dataclasses.replace(self, train=dataclasses.replace(self.train, **train_overrides))

    def to_dict(self) -> dict:
        data = dataclasses.asdict(self)
        data["scene"] = self.scene.to_dict()
        data["train"]["lr_steps"] = list(self.train.lr_steps)
        for key in ("mode", "threshold_schedule", "iou_target_source"):
            data["train"][key] = str(data["train"][key])
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        """
        Erstellt die Konfiguration aus einem JSON-Dokument.

        Raises:
            ConfigError: bei unbekannten Schlüsseln oder ungültigen Werten
        """
        SchemaValidator.reject_unknown(data, [f.name for f in dataclasses.fields(cls)])
        sections = {
            "scene": SceneSpec,
            "proposals": ProposalConfig,
            "dataset": DatasetConfig,
            "train": TrainConfig,
            "inference": InferenceConfig,
        }
        values: dict = {}
        try:
            for key, value in data.items():
                section = sections.get(key)
                if section is None:
                    values[key] = value
                    continue
                SchemaValidator.reject_unknown(value, [f.name for f in dataclasses.fields(section)], key)
                values[key] = section.from_dict(value) if section is SceneSpec else section(**value)
            return cls(**values)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Ungültige Konfiguration: {e}") from e
