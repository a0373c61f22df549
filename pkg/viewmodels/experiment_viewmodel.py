"""ViewModel: verbindet die Services zu den Aktionen der Kommandozeile."""

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from models.config import ExperimentConfig, ThresholdSchedule, TrainMode
from models.detection import Detection
from models.head import HeadModel
from models.proposals import Provenance
from models.report import EvalReport
from services import box_iou_head
from services.annotation_loader import AnnotationLoader, save_coco_annotations
from services.detector import build_detector
from services.dump_handler import DumpHandler
from services.evaluator import (
    average_precision,
    average_recall,
    iou_histogram,
    save_report,
    score_iou_correlation,
)
from services.proposal_augmenter import augmentation_statistics
from services.synthetic_dataset import SyntheticDataset
from services.trainer import TrainingManager, TrainingResult
from utils.errors import ConfigError, SchemaError
from utils.file_helper import FileHelper

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA = "synth/v1"
ABLATION_MODES: tuple[TrainMode, ...] = (
    TrainMode.BASELINE,
    TrainMode.APDI,
    TrainMode.BOX_IOU,
    TrainMode.APDI_BOX_IOU,
)

# Trainingsmodi der Kommandozeile -> Überschreibungen im Abschnitt "train"
TRAIN_MODES: dict[str, dict] = {
    "baseline": {"mode": TrainMode.BASELINE, "cascade": False},
    "apdi": {"mode": TrainMode.APDI, "cascade": False},
    "box-iou-only": {"mode": TrainMode.BOX_IOU, "cascade": False},
    "apdi+box-iou": {"mode": TrainMode.APDI_BOX_IOU, "cascade": False},
    "cascade-baseline": {"mode": TrainMode.BASELINE, "cascade": True},
    "cascade-apdi": {"mode": TrainMode.APDI, "cascade": True},
}


@dataclass
class AblationRow:
    """Eine Zeile der Ablationstabelle."""

    seed: int
    mode: str
    ap: float
    ap50: float
    ap75: float
    spearman_calibrated: Optional[float]
    spearman_uncalibrated: Optional[float]
    original_high_iou_fraction: float
    augmented_high_iou_fraction: float

    HEADER = (
        "seed",
        "mode",
        "AP",
        "AP50",
        "AP75",
        "spearman_calibrated",
        "spearman_uncalibrated",
        "original_high_iou_fraction",
        "augmented_high_iou_fraction",
    )

    def to_row(self) -> tuple:
        return tuple(getattr(self, f.name) for f in dataclasses.fields(self))


class ExperimentViewModel:
    """Führt die Aktionen synth, train, infer, eval, analyze und ablate aus."""

    def __init__(self, config: Optional[ExperimentConfig] = None):
        self.config = config or ExperimentConfig()
        self.dump_handler = DumpHandler()
        self.progress_hooks: list[Callable[[dict], None]] = []

    # Konfiguration

    @staticmethod
    def load_config(path: Optional[Path]) -> ExperimentConfig:
        """
        Lädt eine Konfiguration; ohne Pfad gelten die Standardwerte.

        Raises:
            ConfigError: bei ungültigem JSON oder ungültigen Werten
            DataIOError: wenn die Datei fehlt
        """
        if path is None:
            return ExperimentConfig()
        try:
            document = FileHelper.read_json(Path(path))
        except SchemaError as e:
            raise ConfigError(f"Konfiguration ist kein gültiges JSON: {e}") from e
        if not isinstance(document, dict):
            raise ConfigError("Konfiguration muss ein JSON-Objekt sein")
        return ExperimentConfig.from_dict(document)

    @staticmethod
    def apply_overrides(
        config: ExperimentConfig,
        mode: Optional[str] = None,
        iterations: Optional[int] = None,
        seed: Optional[int] = None,
        workers: Optional[int] = None,
        thresholds: Optional[str] = None,
        stage_box_iou: bool = False,
    ) -> ExperimentConfig:
        """Überschreibt Konfigurationswerte mit Kommandozeilen-Flags."""
        train_overrides: dict = {}
        if mode is not None:
            if mode not in TRAIN_MODES:
                raise ConfigError(f"Unbekannter Modus: {mode!r}")
            train_overrides.update(TRAIN_MODES[mode])
        if iterations is not None:
            train_overrides["iterations"] = iterations
        if thresholds is not None:
            train_overrides["threshold_schedule"] = ThresholdSchedule(thresholds)
        if stage_box_iou:
            train_overrides["cascade_box_iou"] = True
        top: dict = {}
        if seed is not None:
            top["seed"] = seed
        if workers is not None:
            top["workers"] = workers
        try:
            updated = config.with_overrides(**train_overrides)
            return dataclasses.replace(updated, **top)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Ungültige Überschreibung: {e}") from e

    # Aktionen

    def synth(self, out_dir: Path) -> dict:
        """
        Schreibt das Manifest des synthetischen Datensatzes sowie
        COCO-Annotationen und einen Proposal-Dump des Testteils.
        """
        out_dir = FileHelper.ensure_dir(out_dir)
        dataset = SyntheticDataset(self.config)
        gts = {}
        proposals = {}
        for index in dataset.test_indices:
            _, gt = dataset.scene(index)
            gts[index] = gt
            proposals[index] = dataset.proposals(gt)

        manifest = {
            "schema": MANIFEST_SCHEMA,
            "config": self.config.to_dict(),
            "train_indices": [dataset.train_indices.start, dataset.train_indices.stop],
            "test_indices": [dataset.test_indices.start, dataset.test_indices.stop],
            "annotations": "test_annotations.json",
            "proposals": "test_proposals.jsonl",
        }
        manifest["config"].pop("workers", None)
        FileHelper.write_json(out_dir / "manifest.json", manifest)
        save_coco_annotations(gts, out_dir / "test_annotations.json", self.config.scene.num_classes)
        self.dump_handler.save_proposals(proposals, out_dir / "test_proposals.jsonl")
        logger.info("Synthetischer Datensatz nach %s geschrieben", out_dir)
        return manifest

    def train(self, out_dir: Optional[Path]) -> TrainingResult:
        manager = TrainingManager(self.config, out_dir)
        for hook in self.progress_hooks:
            manager.add_progress_hook(hook)
        return manager.train()

    def infer(
        self,
        checkpoint: Path,
        out_path: Path,
        proposals_path: Optional[Path] = None,
        calibrate: Optional[bool] = None,
        ibbr: Optional[int] = None,
    ) -> list[Detection]:
        """
        Detektionen für den synthetischen Testteil oder für die Bilder eines
        Proposal-Dumps (image_id = Szenenindex).

        Args:
            checkpoint: Modelldatei aus `train`
            out_path: Ziel des Detektions-Dumps
            proposals_path: Optionaler Proposal-Dump statt generierter Proposals
            calibrate: Kalibrierung erzwingen oder abschalten
            ibbr: Anzahl Box-Regressionen insgesamt (>= 1)
        """
        heads, _ = box_iou_head.load_checkpoint(checkpoint)
        if ibbr is not None:
            if len(heads) == 3:
                raise ConfigError("--ibbr ist mit einer Kaskade nicht kombinierbar")
            if ibbr < 1:
                raise ConfigError("--ibbr muss >= 1 sein")
        self._check_heads(heads)
        refine_passes = None if ibbr is None else ibbr - 1
        detector = build_detector(heads, self.config, calibrate=calibrate, refine_passes=refine_passes)

        dataset = SyntheticDataset(self.config)
        if proposals_path is not None:
            proposal_map = self.dump_handler.load_proposals(proposals_path)
        else:
            proposal_map = {i: dataset.proposals(dataset.scene(i)[1]) for i in dataset.test_indices}
        items = [(dataset.scene(image_id)[0], proposal_map[image_id]) for image_id in sorted(proposal_map)]
        detections = detector.infer_many(items, self.config.resolved_workers())
        self.dump_handler.save_detections(detections, out_path)
        return detections

    def evaluate(self, detections_path: Path, annotations_path: Path, out_dir: Path) -> EvalReport:
        """AP-Auswertung eines Detektions-Dumps gegen COCO-Annotationen."""
        detections = self.dump_handler.load_detections(detections_path)
        gts = AnnotationLoader().load(annotations_path)
        report = average_precision(detections, gts, workers=self.config.resolved_workers())
        try:
            report.score_iou_spearman = score_iou_correlation(detections, gts)
        except ValueError as e:
            logger.warning("Rangkorrelation nicht berechenbar: %s", e)
        save_report(report, out_dir)
        return report

    def analyze(
        self,
        proposals_path: Path,
        annotations_path: Path,
        budget: int,
        out_dir: Path,
        bins: int = 10,
    ) -> EvalReport:
        """
        AR-Tabelle (AR50 bis AR90) und IoU-Histogramme eines Proposal-Dumps.
        """
        if budget < 1:
            raise ConfigError("--budget muss >= 1 sein")
        proposals = self.dump_handler.load_proposals(proposals_path)
        gts = AnnotationLoader().load(annotations_path)
        try:
            table = average_recall(proposals, gts, budget)
        except ValueError as e:
            raise SchemaError(str(e), str(annotations_path)) from e

        report = EvalReport(ap=0.0, ap50=0.0, ap75=0.0, ar_tables={"proposals": table})
        report.histograms["original-positive"] = iou_histogram(proposals, gts, "original-positive", bins)
        if all(p.provenance is not None for p in proposals.values()) and any(
            prov != Provenance.ORIGINAL for p in proposals.values() for prov in p.provenance
        ):
            report.histograms["augmented-positive"] = iou_histogram(proposals, gts, "augmented-positive", bins)

        out_dir = FileHelper.ensure_dir(out_dir)
        row = table.table_row()
        FileHelper.write_csv(
            out_dir / "ar_table.csv",
            ["budget", "AR", *row.keys()],
            [(table.budget, table.ar, *row.values())],
        )
        for label, histogram in report.histograms.items():
            rows = [(r["lower"], r["upper"], r["count"]) for r in histogram.to_rows()]
            FileHelper.write_csv(out_dir / f"iou_hist_{label}.csv", ["lower", "upper", "count"], rows)
        return report

    def ablate(self, out_dir: Path, seeds: Optional[Sequence[int]] = None) -> list[AblationRow]:
        """
        Trainiert die vier Modi (APDI × Box-IoU) je Seed und wertet auf dem
        Testteil aus. Schreibt eine gemeinsame CSV-Tabelle.
        """
        out_dir = FileHelper.ensure_dir(out_dir)
        rows: list[AblationRow] = []
        for seed in seeds or [self.config.seed]:
            for mode in ABLATION_MODES:
                config = dataclasses.replace(self.config.with_overrides(mode=mode, cascade=False), seed=seed)
                logger.info("Ablation: Seed %d, Modus %s", seed, mode)
                manager = TrainingManager(config, out_dir / f"seed{seed}_{mode}")
                for hook in self.progress_hooks:
                    manager.add_progress_hook(hook)
                result = manager.train()
                rows.append(self._evaluate_heads(config, seed, str(mode), result.heads))

        FileHelper.write_csv(out_dir / "ablation.csv", AblationRow.HEADER, [r.to_row() for r in rows])
        return rows

    def _evaluate_heads(self, config: ExperimentConfig, seed: int, mode: str, heads: list[HeadModel]) -> AblationRow:
        dataset = SyntheticDataset(config)
        samples = dataset.samples(dataset.test_indices)
        gts = {s.gt.image_id: s.gt for s in samples}
        items = [(s.image, s.proposals) for s in samples]
        workers = config.resolved_workers()

        detections = build_detector(heads, config).infer_many(items, workers)
        report = average_precision(detections, gts, workers=workers)
        # beide Korrelationen auf denselben Detektionen des kalibrierten Laufs
        if config.resolved_inference().calibrate:
            calibrated = detections
        else:
            calibrated = build_detector(heads, config, calibrate=True).infer_many(items, workers)
        spearman: dict[bool, Optional[float]] = {}
        for flag in (True, False):
            try:
                spearman[flag] = score_iou_correlation(calibrated, gts, raw=not flag)
            except ValueError:
                spearman[flag] = None
        stats = augmentation_statistics(samples, heads[0], config.train.fg_threshold)
        return AblationRow(
            seed=seed,
            mode=mode,
            ap=report.ap,
            ap50=report.ap50,
            ap75=report.ap75,
            spearman_calibrated=spearman[True],
            spearman_uncalibrated=spearman[False],
            original_high_iou_fraction=stats["original_high_iou_fraction"],
            augmented_high_iou_fraction=stats["augmented_high_iou_fraction"],
        )

    def _check_heads(self, heads: list[HeadModel]) -> None:
        scene = self.config.scene
        for head in heads:
            if head.num_classes != scene.num_classes or head.channels != scene.channels:
                raise ConfigError(
                    f"Checkpoint (K={head.num_classes}, C={head.channels}) passt nicht zur Szene "
                    f"(K={scene.num_classes}, C={scene.channels})"
                )

    @staticmethod
    def config_from_checkpoint(checkpoint: Path) -> Optional[ExperimentConfig]:
        """Die beim Training gespeicherte Konfiguration, falls vorhanden."""
        _, metadata = box_iou_head.load_checkpoint(checkpoint)
        data = metadata.get("config")
        return ExperimentConfig.from_dict(data) if isinstance(data, dict) else None

