"""Kommandozeile: synth, train, infer, eval, analyze, ablate."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from models.config import ExperimentConfig
from utils.errors import ApdiError, ConfigError
from utils.file_helper import FileHelper
from utils.log_helper import LogHelper
from viewmodels.experiment_viewmodel import TRAIN_MODES, ExperimentViewModel

logger = logging.getLogger(__name__)

PROGRAM = "apdi-detect"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Experimentkonfiguration (JSON)")
    parser.add_argument("--seed", type=int, help="überschreibt 'seed'")
    parser.add_argument("--workers", type=int, help="Worker pro Bild-Schleife; 0 = alle Kerne")


def build_parser() -> argparse.ArgumentParser:
    """Erstellt den Argument-Parser mit allen Unterbefehlen."""
    parser = argparse.ArgumentParser(prog=PROGRAM, description="Zweistufige Detektion mit APDI und Box-IoU-Head")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log-Level DEBUG (sonst APDI_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="synthetischen Datensatz beschreiben")
    _add_common(synth)
    synth.add_argument("--out", type=Path, required=True, help="Ausgabeverzeichnis")

    train = sub.add_parser("train", help="Head(s) trainieren")
    _add_common(train)
    train.add_argument("--out", type=Path, required=True, help="Ausgabeverzeichnis")
    train.add_argument("--mode", choices=sorted(TRAIN_MODES), help="Ablationsmodus")
    train.add_argument("--iterations", type=int, help="überschreibt 'train.iterations'")
    train.add_argument("--thresholds", choices=["baseline", "apdi"], help="IoU-Schwellen der Kaskade")
    train.add_argument("--stage-box-iou", action="store_true", help="Box-IoU-Zweig in jeder Kaskadenstufe")

    infer = sub.add_parser("infer", help="Detektionen erzeugen")
    _add_common(infer)
    infer.add_argument("--model", type=Path, required=True, help="Checkpoint aus 'train'")
    infer.add_argument("--out", type=Path, required=True, help="Detektions-Dump (JSON-Lines)")
    infer.add_argument("--proposals", type=Path, help="Proposal-Dump statt generierter Test-Proposals")
    infer.add_argument("--calibrate", choices=["on", "off"], help="IoU-Kalibrierung erzwingen")
    infer.add_argument("--ibbr", type=int, help="Box-Regression N-mal anwenden (nur Inferenz)")

    evaluate = sub.add_parser("eval", help="AP eines Detektions-Dumps")
    _add_common(evaluate)
    evaluate.add_argument("--detections", type=Path, required=True)
    evaluate.add_argument("--annotations", type=Path, required=True, help="COCO-Annotationen")
    evaluate.add_argument("--out", type=Path, required=True, help="Ausgabeverzeichnis")

    analyze = sub.add_parser("analyze", help="AR-Tabelle und IoU-Histogramme eines Proposal-Dumps")
    _add_common(analyze)
    analyze.add_argument("--proposals", type=Path, required=True)
    analyze.add_argument("--annotations", type=Path, required=True, help="COCO-Annotationen")
    analyze.add_argument("--budget", type=int, required=True, help="Proposals pro Bild")
    analyze.add_argument("--bins", type=int, default=10, help="Histogramm-Bins über [0.5, 1.0]")
    analyze.add_argument("--out", type=Path, required=True, help="Ausgabeverzeichnis")

    ablate = sub.add_parser("ablate", help="APDI × Box-IoU-Ablation")
    _add_common(ablate)
    ablate.add_argument("--out", type=Path, required=True, help="Ausgabeverzeichnis")
    ablate.add_argument("--iterations", type=int, help="überschreibt 'train.iterations'")
    ablate.add_argument("--seeds", type=int, nargs="+", help="mehrere Seeds nacheinander")
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentViewModel.load_config(args.config)
    return ExperimentViewModel.apply_overrides(
        config,
        mode=getattr(args, "mode", None),
        iterations=getattr(args, "iterations", None),
        seed=args.seed,
        workers=args.workers,
        thresholds=getattr(args, "thresholds", None),
        stage_box_iou=getattr(args, "stage_box_iou", False),
    )


def _print_rows(rows) -> None:
    for name, value in rows:
        print(f"{name}\t{FileHelper.format_value(value)}")


def run(args: argparse.Namespace) -> int:
    """Führt einen Unterbefehl aus."""
    if args.command == "infer" and args.config is None:
        stored = ExperimentViewModel.config_from_checkpoint(args.model)
        config = ExperimentViewModel.apply_overrides(stored or ExperimentConfig(), seed=args.seed, workers=args.workers)
    else:
        config = _config(args)
    view_model = ExperimentViewModel(config)

    if args.command == "synth":
        manifest = view_model.synth(args.out)
        print(f"test_images\t{manifest['test_indices'][1] - manifest['test_indices'][0]}")
    elif args.command == "train":
        view_model.progress_hooks.append(
            lambda entry: logger.info("Iteration %d: total=%.4f", entry["iteration"], entry.get("total", 0.0))
        )
        result = view_model.train(args.out)
        print(f"checkpoint\t{result.checkpoint_path}")
        print(f"iterations\t{len(result.log)}")
    elif args.command == "infer":
        calibrate = None if args.calibrate is None else args.calibrate == "on"
        detections = view_model.infer(args.model, args.out, args.proposals, calibrate, args.ibbr)
        print(f"detections\t{len(detections)}")
    elif args.command == "eval":
        report = view_model.evaluate(args.detections, args.annotations, args.out)
        _print_rows(report.metric_rows())
    elif args.command == "analyze":
        report = view_model.analyze(args.proposals, args.annotations, args.budget, args.out, args.bins)
        _print_rows(report.metric_rows()[3:])
    elif args.command == "ablate":
        rows = view_model.ablate(args.out, args.seeds)
        for row in rows:
            print("\t".join(FileHelper.format_value(v) for v in row.to_row()))
    else:
        raise ConfigError(f"Unbekannter Befehl: {args.command}")
    return 0


def format_error(error: ApdiError) -> str:
    """Einzeilige, maschinenlesbare Fehlermeldung."""
    return f"error={error.kind} code={error.exit_code} message={json.dumps(str(error), ensure_ascii=False)}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    LogHelper.configure("DEBUG" if args.verbose else None)
    try:
        return run(args)
    except ApdiError as e:
        logger.debug("Abbruch", exc_info=True)
        print(format_error(e), file=sys.stderr)
        return e.exit_code
