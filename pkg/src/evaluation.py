"""
Auswertung der Out-of-fold-Vorhersagen: RMSE, normierter RMSE, Verbesserungs-/
Verschlechterungs-Accuracy und der Ergebnisbericht im Tabellenformat
(Index, Signal, Größe, RMSE, normierter RMSE, Accuracy).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import accuracy_score, mean_squared_error

from src.errors import LengthMismatchError, PipelineRuntimeError, ValidationError
from src.ingest import Biomarker
from src.train import Experiment

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "index", "signal", "size", "rmse", "rmse_std", "range", "normalized_rmse", "accuracy",
    "n_records", "per_fold_rmse", "per_fold_accuracy",
]
TABLE_HEADER = ["Index", "Signal", "Size", "RMSE", "Normalized RMSE", "Accuracy"]


class EmptyInputError(ValidationError):
    pass


class ReportIoError(PipelineRuntimeError):
    pass


class ChangeClass(Enum):
    IMPROVEMENT = "improvement"
    DETERIORATION = "deterioration"


def classify_delta(delta):
    """Δ ≤ 0 gilt als Verbesserung, Δ > 0 als Verschlechterung."""
    if not np.isfinite(delta):
        raise ValidationError(f"Delta muss endlich sein, erhalten {delta!r}")
    return ChangeClass.IMPROVEMENT if delta <= 0 else ChangeClass.DETERIORATION


def _paired(preds, targets):
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise LengthMismatchError(f"{preds.size} Vorhersagen, aber {targets.size} Zielwerte")
    if preds.size == 0:
        raise EmptyInputError("Keine Vorhersagen übergeben")
    return preds, targets


def rmse(preds, targets):
    preds, targets = _paired(preds, targets)
    return float(np.sqrt(mean_squared_error(targets, preds)))


def classification_accuracy(pred_deltas, true_deltas):
    preds, trues = _paired(pred_deltas, true_deltas)
    return float(accuracy_score(
        [classify_delta(t).value for t in trues],
        [classify_delta(p).value for p in preds],
    ))


def majority_class_rate(true_deltas):
    classes = [classify_delta(t) for t in np.asarray(true_deltas, dtype=np.float64)]
    if not classes:
        raise EmptyInputError("Keine Zielwerte übergeben")
    improving = sum(c is ChangeClass.IMPROVEMENT for c in classes)
    return max(improving, len(classes) - improving) / len(classes)


def size_label(experiment, n_records, seq_len=None):
    """Größenangabe wie ``[50 × 1445 × 9] + [50 × 8]``."""
    parts = []
    if experiment.uses_deep:
        parts.append(f"[{n_records} × {seq_len} × {experiment.sequence_width}]")
    if experiment.uses_wide:
        parts.append(f"[{n_records} × 8]")
    return " + ".join(parts)


@dataclass
class EvalReport:
    target: Biomarker
    experiment: Experiment
    n_records: int
    rmse: float
    rmse_std_across_folds: float
    value_range: float
    normalized_rmse: float
    accuracy: float
    per_fold: List[Tuple[float, float]] = field(default_factory=list)
    size: str = ""

    def row(self):
        return {
            "index": self.target.table_label,
            "signal": self.experiment.signal_label,
            "size": self.size,
            "rmse": self.rmse,
            "rmse_std": self.rmse_std_across_folds,
            "range": self.value_range,
            "normalized_rmse": self.normalized_rmse,
            "accuracy": self.accuracy,
            "n_records": self.n_records,
            "per_fold_rmse": ";".join(repr(float(r)) for r, _ in self.per_fold),
            "per_fold_accuracy": ";".join(repr(float(a)) for _, a in self.per_fold),
        }


def evaluate_predictions(frame, experiment, size=""):
    """
    Erstellt einen ``EvalReport`` aus einer Vorhersagetabelle
    (Spalten ``patient_id,fold,target,true_delta,pred_delta``).

    ``value_range`` ist max − min der gemessenen Deltas der Kohorte; bei
    konstanten Deltas ist der normierte RMSE NaN.
    """
    if frame.empty:
        raise EmptyInputError("Vorhersagetabelle ist leer")
    targets = frame["target"].unique()
    if len(targets) != 1:
        raise ValidationError(f"Genau ein Ziel pro Auswertung erwartet, gefunden {list(targets)}")

    trues = frame["true_delta"].to_numpy(dtype=np.float64)
    preds = frame["pred_delta"].to_numpy(dtype=np.float64)
    per_fold = [
        (rmse(g["pred_delta"], g["true_delta"]), classification_accuracy(g["pred_delta"], g["true_delta"]))
        for _, g in frame.groupby("fold", sort=True)
    ]
    overall = rmse(preds, trues)
    value_range = float(trues.max() - trues.min())
    report = EvalReport(
        target=Biomarker.parse(targets[0]),
        experiment=experiment,
        n_records=int(len(frame)),
        rmse=overall,
        rmse_std_across_folds=float(np.std([r for r, _ in per_fold])),
        value_range=value_range,
        normalized_rmse=overall / value_range if value_range > 0 else float("nan"),
        accuracy=classification_accuracy(preds, trues),
        per_fold=per_fold,
        size=size,
    )
    logger.info(
        f"{report.target.table_label} [{experiment.signal_label}]: RMSE {report.rmse:.3f} "
        f"(σ = {report.rmse_std_across_folds:.3f}), Accuracy {report.accuracy:.2%}"
    )
    return report


# =================================================================
# BERICHT
# =================================================================

def render_table(reports):
    """Ausgerichtete Texttabelle, Spalten durch `` | `` getrennt."""
    rows = [TABLE_HEADER] + [
        [
            r.target.table_label,
            r.experiment.signal_label,
            r.size,
            f"{r.rmse:.3f}",
            f"{r.normalized_rmse:.3f}",
            f"{r.accuracy * 100:.2f}%",
        ]
        for r in reports
    ]
    widths = [max(len(row[c]) for row in rows) for c in range(len(TABLE_HEADER))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def emit_report(reports, path):
    """
    Schreibt den Bericht als CSV (``path``) und als Texttabelle (gleicher Name, Endung ``.txt``).

    Returns:
        tuple: (csv_pfad, txt_pfad)
    """
    if not reports:
        raise EmptyInputError("Keine Reports zum Schreiben")
    csv_path = Path(path)
    txt_path = csv_path.with_suffix(".txt")
    try:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame([r.row() for r in reports], columns=REPORT_COLUMNS).to_csv(
            csv_path, index=False, encoding="utf-8", na_rep="NaN"
        )
        txt_path.write_text(render_table(reports), encoding="utf-8")
    except OSError as exc:
        logger.error(f"Bericht konnte nicht geschrieben werden: {exc}")
        raise ReportIoError(f"Bericht konnte nicht geschrieben werden: {exc}") from exc
    logger.info(f"Bericht geschrieben: {csv_path}, {txt_path}")
    return csv_path, txt_path


def _experiment_from_signal(label):
    for experiment in Experiment:
        if experiment.signal_label == label:
            return experiment
    raise ValidationError(f"Unbekanntes Signal-Label {label!r}")


def _float_list(text):
    if not isinstance(text, str) or not text:
        return []
    return [float(v) for v in text.split(";")]


def read_report_csv(path):
    path = Path(path)
    if not path.is_file():
        logger.error(f"Report nicht gefunden: {path}")
        raise FileNotFoundError(f"Report nicht gefunden: {path}")
    df = pd.read_csv(
        path, float_precision="round_trip", encoding="utf-8", keep_default_na=False,
        na_values={c: ["NaN", "nan"] for c in ("rmse", "rmse_std", "range", "normalized_rmse", "accuracy")},
        dtype={"size": str, "per_fold_rmse": str, "per_fold_accuracy": str},
    )
    if list(df.columns) != REPORT_COLUMNS:
        raise ValidationError(f"{path}: Header {list(df.columns)} entspricht nicht {REPORT_COLUMNS}")
    reports = []
    for row in df.to_dict("records"):
        reports.append(EvalReport(
            target=Biomarker.parse(row["index"]),
            experiment=_experiment_from_signal(row["signal"]),
            n_records=int(row["n_records"]),
            rmse=float(row["rmse"]),
            rmse_std_across_folds=float(row["rmse_std"]),
            value_range=float(row["range"]),
            normalized_rmse=float(row["normalized_rmse"]),
            accuracy=float(row["accuracy"]),
            per_fold=list(zip(_float_list(row["per_fold_rmse"]), _float_list(row["per_fold_accuracy"]))),
            size=row["size"],
        ))
    return reports
