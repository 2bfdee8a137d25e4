"""
Training und Kreuzvalidierung der vier Experimentkonfigurationen.

Ablauf pro Fold:
    1. Normalisierer ausschließlich auf den Trainingspatienten schätzen.
    2. Parameter initialisieren (Seed = seed + fold_index).
    3. ``epochs`` Durchläufe mit Batchgröße 1 und Adam-Update; Reihenfolge pro
       Epoche aus ``LcgStream(seed, stream=fold_index + 1)``.
    4. Held-out-Patienten vorhersagen.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from sklearn.dummy import DummyRegressor
from sklearn.model_selection import KFold

from src.errors import PipelineRuntimeError, ValidationError
from src.ingest import TABULAR_FIELDS, Biomarker, TabularFeatures
from src.net import (
    FeatureNormalizers,
    NetConfig,
    forward_with_tape,
    init_params,
    model_backward,
    predict,
)
from src.sync import SensorSynchronizer, read_fused_csv, truncate_cohort, write_fused_csv

logger = logging.getLogger(__name__)

PREDICTION_COLUMNS = ["patient_id", "fold", "target", "true_delta", "pred_delta"]
INPUTS_FILE = "inputs.csv"
RUN_INFO_FILE = "run_info.txt"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainError(ValidationError):
    pass


class TooFewPatientsError(TrainError):
    pass


class MissingModalityError(TrainError):
    pass


class DivergedLossError(PipelineRuntimeError):
    pass


class Experiment(Enum):
    """Die vier Experimentkonfigurationen mit ihrem Signal-Label (C: CGM, A: Aktivität, D: Demografie, L: Labor)."""

    DEEP_CGM_ONLY = "DeepCgmOnly"
    DEEP_CGM_ACTIVITY = "DeepCgmActivity"
    WIDE_ONLY = "WideOnly"
    WIDE_AND_DEEP = "WideAndDeep"

    @property
    def signal_label(self):
        return {
            Experiment.DEEP_CGM_ONLY: "C",
            Experiment.DEEP_CGM_ACTIVITY: "C, A",
            Experiment.WIDE_ONLY: "D, L",
            Experiment.WIDE_AND_DEEP: "C, A, D, L",
        }[self]

    @property
    def uses_deep(self):
        return self is not Experiment.WIDE_ONLY

    @property
    def uses_wide(self):
        return self in (Experiment.WIDE_ONLY, Experiment.WIDE_AND_DEEP)

    @property
    def sequence_width(self):
        if not self.uses_deep:
            return 0
        return 1 if self is Experiment.DEEP_CGM_ONLY else 9

    @classmethod
    def parse(cls, text):
        for experiment in cls:
            if text.strip().lower() in (experiment.value.lower(), experiment.name.lower()):
                return experiment
        raise ValidationError(f"Unbekanntes Experiment {text!r}; erlaubt: {', '.join(e.value for e in cls)}")


@dataclass
class TrainConfig:
    epochs: int = 50
    folds: int = 5
    learning_rate: float = 1e-3
    seed: int = 0
    experiment: Experiment = Experiment.WIDE_AND_DEEP
    target: Biomarker = Biomarker.HBA1C
    hidden_dim: int = 64
    max_seq_len: Optional[int] = None
    wide_sigmoid: bool = False
    max_workers: int = 1

    def __post_init__(self):
        if self.folds < 2:
            raise TrainError(f"folds muss ≥ 2 sein (erhalten {self.folds})")
        if self.epochs < 1:
            raise TrainError(f"epochs muss ≥ 1 sein (erhalten {self.epochs})")
        if not self.learning_rate > 0:
            raise TrainError("learning_rate muss > 0 sein")
        if self.hidden_dim < 1:
            raise TrainError("hidden_dim muss ≥ 1 sein")
        if self.max_seq_len is not None and self.max_seq_len < 1:
            raise TrainError("max_seq_len muss ≥ 1 sein")


# =================================================================
# EINGABEN
# =================================================================

@dataclass(eq=False)
class TrainingCohort:
    """Fusionierte, gekürzte Kohorte mit Tabellenmerkmalen und Zielwerten für ein Ziel."""

    target: Biomarker
    patient_ids: List[str]
    sequences: Optional[list]
    features: List[TabularFeatures]
    deltas: np.ndarray

    def __post_init__(self):
        n = len(self.patient_ids)
        if len(self.features) != n or len(self.deltas) != n:
            raise TrainError("Kohortenfelder haben unterschiedliche Längen")
        if self.sequences is not None and len(self.sequences) != n:
            raise TrainError("Anzahl der Sequenzen passt nicht zur Kohorte")

    def __len__(self):
        return len(self.patient_ids)

    @classmethod
    def from_cohort(cls, cohort, synchronizer=None, truncation="earliest"):
        synchronizer = synchronizer or SensorSynchronizer()
        sequences, _ = truncate_cohort(synchronizer.fuse_cohort(cohort.patients), truncation)
        return cls(
            target=cohort.target,
            patient_ids=cohort.patient_ids,
            sequences=sequences,
            features=[p.features for p in cohort.patients],
            deltas=np.array([p.targets[cohort.target].delta for p in cohort.patients], dtype=np.float64),
        )

    def save(self, out_dir):
        """Schreibt eine Fused-Datei pro Patient und ``inputs.csv`` (Merkmale, Ziel, Delta)."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if self.sequences is not None:
            for sequence in self.sequences:
                write_fused_csv(sequence, out_dir / f"fused_{sequence.patient_id}.csv")
        df = pd.DataFrame([f.as_array() for f in self.features], columns=list(TABULAR_FIELDS))
        df.insert(0, "patient_id", self.patient_ids)
        df["target"] = self.target.value
        df["delta"] = self.deltas
        df.to_csv(out_dir / INPUTS_FILE, index=False, encoding="utf-8")
        return out_dir

    @classmethod
    def load(cls, fused_dir):
        fused_dir = Path(fused_dir)
        inputs_path = fused_dir / INPUTS_FILE
        if not inputs_path.is_file():
            logger.error(f"Eingabetabelle nicht gefunden: {inputs_path}")
            raise FileNotFoundError(f"Eingabetabelle nicht gefunden: {inputs_path}")
        df = pd.read_csv(inputs_path, dtype={"patient_id": str}, float_precision="round_trip", encoding="utf-8")
        ids = df["patient_id"].tolist()
        targets = df["target"].unique()
        if len(targets) != 1:
            raise TrainError(f"{inputs_path}: genau ein Ziel erwartet, gefunden {list(targets)}")
        paths = [fused_dir / f"fused_{pid}.csv" for pid in ids]
        sequences = None
        if all(p.is_file() for p in paths):
            sequences = [read_fused_csv(p, pid) for p, pid in zip(paths, ids)]
        features = [TabularFeatures(*(float(v) for v in row)) for row in df[list(TABULAR_FIELDS)].to_numpy()]
        return cls(Biomarker.parse(targets[0]), ids, sequences, features, df["delta"].to_numpy(dtype=np.float64))


@dataclass(eq=False)
class ModelInput:
    patient_id: str
    sequence: Optional[np.ndarray]
    features: Optional[np.ndarray]
    target_delta: float


def build_inputs(cohort, experiment, max_seq_len=None):
    """
    Stellt die Modelleingaben eines Experiments zusammen.

    DeepCgmOnly nutzt nur die Glukosespalte (Breite 1), die anderen Deep-Experimente
    alle 9 Kanäle; WideOnly und WideAndDeep hängen die 8 Tabellenmerkmale an.

    Raises:
        MissingModalityError: Sequenzen fehlen für ein Deep-Experiment.
    """
    if experiment.uses_deep and cohort.sequences is None:
        msg = f"Experiment {experiment.value} benötigt fusionierte Sequenzen, die Kohorte enthält keine."
        logger.error(msg)
        raise MissingModalityError(msg)

    inputs = []
    for i, pid in enumerate(cohort.patient_ids):
        sequence = None
        if experiment.uses_deep:
            values = cohort.sequences[i].values
            if max_seq_len is not None:
                values = values[:max_seq_len]
            sequence = values[:, :1].copy() if experiment.sequence_width == 1 else values
        features = cohort.features[i].as_array() if experiment.uses_wide else None
        inputs.append(ModelInput(pid, sequence, features, float(cohort.deltas[i])))

    lengths = {len(inp.sequence) for inp in inputs if inp.sequence is not None}
    if len(lengths) > 1:
        raise TrainError(f"Sequenzen unterschiedlich lang {sorted(lengths)}; Kohorte vorher kürzen")
    return inputs


# =================================================================
# FOLDS
# =================================================================

class LcgStream:
    """
    Dokumentierter Zufallsstrom für Fold-Zuordnung und Epochenreihenfolge.

    64-Bit-LCG (Konstanten nach Knuth, MMIX)::

        state ← (6364136223846793005 · state + 1442695040888963407) mod 2^64
        Ausgabe = state >> 32   (obere 32 Bit)

    Startzustand: (seed + stream · 0x9E3779B97F4A7C15) mod 2^64.
    ``permutation(n)`` ist ein Fisher-Yates-Shuffle von hinten nach vorn mit
    j = Ausgabe mod (i + 1).
    """

    MULTIPLIER = 6364136223846793005
    INCREMENT = 1442695040888963407
    STREAM_STRIDE = 0x9E3779B97F4A7C15
    MASK = (1 << 64) - 1

    def __init__(self, seed, stream=0):
        self.state = (int(seed) + int(stream) * self.STREAM_STRIDE) & self.MASK

    def next_u32(self):
        self.state = (self.MULTIPLIER * self.state + self.INCREMENT) & self.MASK
        return self.state >> 32

    def permutation(self, n):
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.next_u32() % (i + 1)
            order[i], order[j] = order[j], order[i]
        return np.array(order, dtype=np.int64)


@dataclass(frozen=True)
class FoldAssignment:
    folds: int
    fold_of: Dict[str, int]

    def members(self, fold_index):
        return [pid for pid, k in self.fold_of.items() if k == fold_index]

    def sizes(self):
        return [len(self.members(k)) for k in range(self.folds)]


def make_folds(patient_ids, folds, seed):
    """
    Deterministische, gemischte Partition in ``folds`` Folds.

    Die Ids werden sortiert und mit ``LcgStream(seed)`` permutiert; ``KFold`` teilt die
    permutierte Liste so, dass sich die Foldgrößen um höchstens 1 unterscheiden.
    """
    ids = sorted(patient_ids)
    if len(set(ids)) != len(ids):
        raise TrainError("Patienten-Ids sind nicht eindeutig")
    if folds < 2:
        raise TrainError(f"folds muss ≥ 2 sein (erhalten {folds})")
    if folds > len(ids):
        msg = f"{folds} Folds bei nur {len(ids)} Patienten nicht möglich"
        logger.error(msg)
        raise TooFewPatientsError(msg)

    order = LcgStream(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    fold_of = {}
    for k, (_, test_idx) in enumerate(KFold(n_splits=folds).split(shuffled)):
        for i in test_idx:
            fold_of[shuffled[i]] = k
    return FoldAssignment(folds, fold_of)


# =================================================================
# VERLUST UND OPTIMIERER
# =================================================================

def mse_loss(pred, target):
    return (pred - target) ** 2


def mse_loss_grad(pred, target):
    return 2.0 * (pred - target)


class AdamOptimizer:
    """Adam mit Batchgröße 1; aktualisiert die Parameter-Arrays in-place."""

    def __init__(self, params, learning_rate=1e-3, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(a) for a in params.arrays()]
        self._v = [np.zeros_like(a) for a in params.arrays()]

    def step(self, grads):
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for array, grad, m, v in zip(self.params.arrays(), grads.arrays, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            array -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
        self.params.touch()


# =================================================================
# TRAINING
# =================================================================

class FoldTrainer:
    """Trainiert ein Modell auf den Trainingspatienten eines Folds."""

    def __init__(self, config, fold_index=0):
        self.config = config
        self.fold_index = fold_index
        self.loss_history = []

    def _net_config(self, inputs):
        experiment = self.config.experiment
        first = inputs[0]
        return NetConfig(
            input_dim=first.sequence.shape[1] if experiment.uses_deep else 1,
            hidden_dim=self.config.hidden_dim,
            seq_len=first.sequence.shape[0] if experiment.uses_deep else 1,
            use_deep=experiment.uses_deep,
            use_wide=experiment.uses_wide,
            wide_sigmoid=self.config.wide_sigmoid,
        )

    def fit(self, inputs):
        if not inputs:
            raise TrainError(f"Fold {self.fold_index}: leere Trainingsmenge")
        experiment = self.config.experiment
        net_config = self._net_config(inputs)
        rng = np.random.default_rng(self.config.seed + self.fold_index)
        # Epochenreihenfolge: eigener Strom je Fold, Strom 0 gehört der Fold-Zuordnung
        order = LcgStream(self.config.seed, stream=self.fold_index + 1)

        normalizers = FeatureNormalizers.fit(
            [inp.sequence for inp in inputs] if experiment.uses_deep else None,
            [inp.features for inp in inputs] if experiment.uses_wide else None,
            seq_width=0,
            tab_width=0,
        )
        params = init_params(net_config, rng, normalizers)
        seqs = [params.normalize_sequence(inp.sequence) if experiment.uses_deep else None for inp in inputs]
        feats = [params.normalize_features(inp.features) if experiment.uses_wide else None for inp in inputs]
        optimizer = AdamOptimizer(params, self.config.learning_rate)

        for epoch in range(1, self.config.epochs + 1):
            total = 0.0
            for idx in order.permutation(len(inputs)):
                target = inputs[idx].target_delta
                pred, tape = forward_with_tape(params, seqs[idx], feats[idx])
                loss = mse_loss(pred, target)
                if not np.isfinite(loss):
                    msg = (
                        f"Fold {self.fold_index}, Epoche {epoch}, Patient {inputs[idx].patient_id}: "
                        f"Verlust nicht endlich (Vorhersage {pred!r}, Ziel {target!r})"
                    )
                    logger.error(msg)
                    raise DivergedLossError(msg)
                optimizer.step(model_backward(params, tape, mse_loss_grad(pred, target)))
                total += loss
            mean_loss = total / len(inputs)
            self.loss_history.append(mean_loss)
            level = logging.INFO if epoch % 10 == 0 or epoch == self.config.epochs else logging.DEBUG
            logger.log(level, f"Fold {self.fold_index} Epoche {epoch}/{self.config.epochs}: Verlust {mean_loss:.6f}")
        return params


def train_fold(train_inputs, config, fold_index=0):
    return FoldTrainer(config, fold_index).fit(train_inputs)


# =================================================================
# KREUZVALIDIERUNG
# =================================================================

@dataclass(eq=False)
class FoldResult:
    fold_index: int
    params: Optional[object]
    patient_ids: List[str]
    true_deltas: np.ndarray
    pred_deltas: np.ndarray
    loss_history: List[float] = field(default_factory=list)


@dataclass(eq=False)
class CrossValidationResult:
    experiment: Experiment
    target: Biomarker
    assignment: FoldAssignment
    folds: List[FoldResult]

    @property
    def n_predictions(self):
        return sum(len(f.patient_ids) for f in self.folds)

    def to_frame(self):
        rows = [
            (pid, fold.fold_index, self.target.value, float(t), float(p))
            for fold in self.folds
            for pid, t, p in zip(fold.patient_ids, fold.true_deltas, fold.pred_deltas)
        ]
        return pd.DataFrame(rows, columns=PREDICTION_COLUMNS)


def _split(inputs, assignment, fold_index):
    train = [inp for inp in inputs if assignment.fold_of[inp.patient_id] != fold_index]
    test = [inp for inp in inputs if assignment.fold_of[inp.patient_id] == fold_index]
    return train, test


def cross_validate(inputs, config):
    """
    k-fache Kreuzvalidierung; liefert pro Fold Parameter und Held-out-Vorhersagen.

    Folds laufen optional parallel (``config.max_workers``), das Ergebnis ist
    unabhängig davon in Fold-Reihenfolge.
    """
    assignment = make_folds([inp.patient_id for inp in inputs], config.folds, config.seed)
    logger.info(
        f"Kreuzvalidierung {config.experiment.value}/{config.target.value}: "
        f"{len(inputs)} Patienten, Foldgrößen {assignment.sizes()}"
    )

    def run_fold(k):
        train, test = _split(inputs, assignment, k)
        trainer = FoldTrainer(config, k)
        params = trainer.fit(train)
        preds = np.array([predict(params, inp.sequence, inp.features) for inp in test], dtype=np.float64)
        logger.info(f"Fold {k} abgeschlossen: {len(train)} Training, {len(test)} Test")
        return FoldResult(
            k, params, [inp.patient_id for inp in test],
            np.array([inp.target_delta for inp in test], dtype=np.float64), preds, trainer.loss_history,
        )

    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        folds = list(pool.map(run_fold, range(config.folds)))
    return CrossValidationResult(config.experiment, config.target, assignment, folds)


def baseline_cross_validate(inputs, config):
    """Referenz: jeder Fold sagt den Mittelwert seiner Trainingsdeltas voraus."""
    assignment = make_folds([inp.patient_id for inp in inputs], config.folds, config.seed)
    folds = []
    for k in range(config.folds):
        train, test = _split(inputs, assignment, k)
        model = DummyRegressor(strategy="mean").fit(
            np.zeros((len(train), 1)), np.array([inp.target_delta for inp in train])
        )
        folds.append(FoldResult(
            k, None, [inp.patient_id for inp in test],
            np.array([inp.target_delta for inp in test], dtype=np.float64),
            model.predict(np.zeros((len(test), 1))).astype(np.float64),
        ))
    return CrossValidationResult(config.experiment, config.target, assignment, folds)


def run_experiment(cohort, config):
    """``build_inputs`` + ``cross_validate`` für eine ``TrainingCohort``."""
    if cohort.target is not config.target:
        raise TrainError(f"Kohorte ist für {cohort.target.value}, Konfiguration für {config.target.value}")
    return cross_validate(build_inputs(cohort, config.experiment, config.max_seq_len), config)


# --- DATEI-SCHNITTSTELLE ---

def write_predictions_csv(result, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.to_frame().to_csv(path, index=False, encoding="utf-8")
    logger.info(f"Out-of-fold-Vorhersagen geschrieben: {path}")
    return path


def read_predictions_csv(path):
    path = Path(path)
    if not path.is_file():
        logger.error(f"Vorhersagedatei nicht gefunden: {path}")
        raise FileNotFoundError(f"Vorhersagedatei nicht gefunden: {path}")
    df = pd.read_csv(path, dtype={"patient_id": str}, float_precision="round_trip", encoding="utf-8")
    if list(df.columns) != PREDICTION_COLUMNS:
        raise TrainError(f"{path}: Header {list(df.columns)} entspricht nicht {PREDICTION_COLUMNS}")
    return df


def write_run_info(result, seq_len, path):
    """Metadaten eines Trainingslaufs (``key = value``) für die spätere Auswertung."""
    lines = [
        f"experiment = {result.experiment.value}",
        f"target = {result.target.value}",
        f"n_records = {result.n_predictions}",
        f"seq_len = {seq_len if seq_len is not None else 'none'}",
    ]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_run_info(path):
    info = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            info[key] = value
    return {
        "experiment": Experiment.parse(info["experiment"]),
        "target": Biomarker.parse(info["target"]),
        "n_records": int(info["n_records"]),
        "seq_len": None if info.get("seq_len", "none") == "none" else int(info["seq_len"]),
    }
