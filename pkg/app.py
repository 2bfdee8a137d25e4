"""
Kommandozeilen-Frontend der Pipeline.

Subcommands: synth | ingest | sync | train | evaluate | report | pipeline

Exitcodes:
    0  Erfolg
    1  Validierungsfehler (ungültige Eingabe, Konfiguration, unbekanntes Flag)
    2  Laufzeitfehler (z. B. divergierender Trainingsverlust)
"""

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from src import __version__
from src.checkpoint import checkpoint_save
from src.config import ConfigError, RunConfig, resolve_config, write_resolved_config
from src.errors import GlucoTrendError, PipelineRuntimeError, ValidationError
from src.evaluation import emit_report, evaluate_predictions, read_report_csv, render_table, size_label
from src.ingest import load_cohort
from src.plots import fused_sequence_figure, prediction_scatter, write_figure
from src.sync import SensorSynchronizer, write_cohort_summary
from src.synthgen import generate_cohort
from src.train import (
    RUN_INFO_FILE,
    TrainingCohort,
    read_predictions_csv,
    read_run_info,
    run_experiment,
    write_predictions_csv,
    write_run_info,
)

logger = logging.getLogger("glucotrend")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
LOG_FORMAT = "ts=%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s"


class UnknownSubcommandError(ValidationError):
    pass


class CliParser(argparse.ArgumentParser):
    """ArgumentParser, der Bedienfehler mit Exitcode 1 statt 2 quittiert."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: Fehler: {message}\n")


def configure_logging(level="INFO"):
    logging.basicConfig(level=getattr(logging, level.upper()), format=LOG_FORMAT, stream=sys.stderr, force=True)


# =================================================================
# PARSER
# =================================================================

def _common_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_file", help="Konfigurationsdatei (key = value)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])
    common.add_argument("--threads", type=int, help="Obergrenze für Worker-Threads")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    return common


def _cohort_flags(parser):
    parser.add_argument("--manifest")
    parser.add_argument("--target", help="HbA1c, HDL, LDL oder Triglycerides")
    parser.add_argument("--min-cgm-length", type=int)


def _sync_flags(parser):
    parser.add_argument("--overlap-ratio", type=float)
    parser.add_argument("--truncation", choices=["earliest", "latest"])


def _train_flags(parser):
    parser.add_argument("--experiment", help="WideOnly, DeepCgmOnly, DeepCgmActivity oder WideAndDeep")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--folds", type=int)
    parser.add_argument("--lr", dest="learning_rate", type=float)
    parser.add_argument("--hidden-dim", type=int)
    parser.add_argument("--max-seq-len", type=int)
    parser.add_argument("--wide-sigmoid", action="store_true", default=None)


def _synth_flags(parser):
    parser.add_argument("--n-patients", type=int)
    parser.add_argument("--days", type=int)
    parser.add_argument("--noise-sd", type=float)
    parser.add_argument("--dropout", dest="dropout_rate", type=float)
    parser.add_argument("--missing-followup-rate", type=float)
    parser.add_argument("--short-record-rate", type=float)


def build_parser():
    parser = CliParser(prog="glucotrend", description="CGM + Aktivität → Prognose von Biomarker-Änderungen")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)
    common = _common_flags()

    p = sub.add_parser("synth", parents=[common], help="synthetische Kohorte erzeugen")
    _synth_flags(p)

    p = sub.add_parser("ingest", parents=[common], help="Manifest laden und validieren")
    _cohort_flags(p)

    p = sub.add_parser("sync", parents=[common], help="CGM und Aktivität fusionieren")
    _cohort_flags(p)
    _sync_flags(p)

    p = sub.add_parser("train", parents=[common], help="Kreuzvalidiertes Training")
    _cohort_flags(p)
    _sync_flags(p)
    _train_flags(p)
    p.add_argument("--fused-dir")

    p = sub.add_parser("evaluate", parents=[common], help="Vorhersagen auswerten")
    p.add_argument("--predictions")
    p.add_argument("--experiment")
    p.add_argument("--out", dest="report_path", help="Pfad der Report-CSV")

    p = sub.add_parser("report", parents=[common], help="Reports zu einer Tabelle zusammenführen")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--predictions", help="optional: Vorhersage-CSV für die HTML-Abbildung")
    p.add_argument("--out", dest="report_path")

    p = sub.add_parser("pipeline", parents=[common], help="synth → sync → train → evaluate")
    _synth_flags(p)
    _cohort_flags(p)
    _sync_flags(p)
    _train_flags(p)
    return parser


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def resolve_from_args(args):
    overrides = {key: value for key, value in vars(args).items() if key in _CONFIG_KEYS}
    return resolve_config(args.config_file, overrides)


# =================================================================
# SUBCOMMANDS
# =================================================================

def _load_cohort(config):
    if not config.manifest:
        raise ConfigError("--manifest ist erforderlich")
    return load_cohort(config.manifest, config.target, config.min_cgm_length, config.threads)


def _training_cohort(config):
    if config.fused_dir:
        cohort = TrainingCohort.load(config.fused_dir)
        if cohort.target is not config.target:
            raise ConfigError(
                f"{config.fused_dir} enthält Ziel {cohort.target.value}, angefordert {config.target.value}"
            )
        return cohort
    synchronizer = SensorSynchronizer(config.sync_config(), config.threads)
    return TrainingCohort.from_cohort(_load_cohort(config), synchronizer, config.truncation)


def cmd_synth(config, args, out_dir):
    cohort = generate_cohort(config.synth_config(), out_dir, config.threads)
    print(cohort.manifest_path)
    return cohort.manifest_path


def cmd_ingest(config, args, out_dir):
    cohort = _load_cohort(config)
    path = out_dir / "cohort.csv"
    cohort.summary().to_csv(path, index=False, encoding="utf-8")
    print(path)
    return path


def cmd_sync(config, args, out_dir):
    cohort = _load_cohort(config)
    training_cohort = TrainingCohort.from_cohort(
        cohort, SensorSynchronizer(config.sync_config(), config.threads), config.truncation
    )
    training_cohort.save(out_dir)
    write_cohort_summary(
        training_cohort.sequences,
        {p.patient_id: len(p.cgm) for p in cohort.patients},
        len(training_cohort.sequences[0]),
        out_dir / "cohort_summary.csv",
    )
    first = training_cohort.sequences[0]
    write_figure(fused_sequence_figure(first), out_dir / f"fused_{first.patient_id}.html")
    print(out_dir)
    return out_dir


def cmd_train(config, args, out_dir):
    cohort = _training_cohort(config)
    result = run_experiment(cohort, config.train_config())
    for fold in result.folds:
        checkpoint_save(fold.params, out_dir / f"fold_{fold.fold_index}.ckpt")
    predictions_path = write_predictions_csv(result, out_dir / "predictions.csv")
    seq_len = None
    if config.experiment.uses_deep:
        seq_len = len(cohort.sequences[0])
        if config.max_seq_len is not None:
            seq_len = min(seq_len, config.max_seq_len)
    write_run_info(result, seq_len, out_dir / RUN_INFO_FILE)
    print(predictions_path)
    return predictions_path


def cmd_evaluate(config, args, out_dir):
    predictions = Path(getattr(args, "predictions", None) or config.predictions or out_dir / "predictions.csv")
    frame = read_predictions_csv(predictions)
    info_path = predictions.parent / RUN_INFO_FILE
    experiment, seq_len = config.experiment, None
    if info_path.is_file():
        info = read_run_info(info_path)
        experiment, seq_len = info["experiment"], info["seq_len"]
    if getattr(args, "experiment", None):
        experiment = config.experiment
    report = evaluate_predictions(frame, experiment, size_label(experiment, len(frame), seq_len))
    csv_path, _ = emit_report([report], getattr(args, "report_path", None) or out_dir / "report.csv")
    print(csv_path)
    return csv_path


def cmd_report(config, args, out_dir):
    reports = [report for path in args.reports for report in read_report_csv(path)]
    csv_path, _ = emit_report(reports, args.report_path or out_dir / "table.csv")
    if args.predictions:
        write_figure(prediction_scatter(read_predictions_csv(args.predictions)), out_dir / "predictions.html")
    sys.stdout.write(render_table(reports))
    return csv_path


def cmd_pipeline(config, args, out_dir):
    """Verkettet synth → sync → train → evaluate; jede Stufe schreibt in ein eigenes Unterverzeichnis."""
    stages = {name: out_dir / name for name in ("synth", "fused", "train")}
    for stage_dir in stages.values():
        write_resolved_config(config, stage_dir)

    manifest = cmd_synth(config, args, stages["synth"])
    config.manifest = str(manifest)
    cmd_sync(config, args, stages["fused"])
    config.fused_dir = str(stages["fused"])
    predictions = cmd_train(config, args, stages["train"])
    config.predictions = str(predictions)
    return cmd_evaluate(config, args, out_dir)


HANDLERS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "sync": cmd_sync,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "pipeline": cmd_pipeline,
}


def run(argv=None):
    """Führt ein Subcommand aus und liefert den Exitcode."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or "INFO")
    try:
        handler = HANDLERS.get(args.command)
        if handler is None:
            raise UnknownSubcommandError(f"Unbekanntes Subcommand {args.command!r}")
        config = resolve_from_args(args)
        logging.getLogger().setLevel(config.log_level.upper())
        out_dir = Path(config.out_dir)
        write_resolved_config(config, out_dir)
        logger.info(f"Starte '{args.command}' (Version {__version__}), Ausgabe: {out_dir}")
        handler(config, args, out_dir)
    except ValidationError as exc:
        logger.error(f"Validierungsfehler: {exc}")
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        logger.error(f"Datei fehlt: {exc}")
        return EXIT_VALIDATION
    except (PipelineRuntimeError, GlucoTrendError, OSError) as exc:
        logger.error(f"Laufzeitfehler: {exc}")
        return EXIT_RUNTIME
    logger.info(f"'{args.command}' abgeschlossen")
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
