import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from src.errors import ValidationError
from src.ingest import ACTIVITY_FIELDS, DEFAULT_ACTIVITY_EPOCH, DEFAULT_CGM_INTERVAL

logger = logging.getLogger(__name__)

FUSED_COLUMNS = ["timestamp", "glucose", *ACTIVITY_FIELDS]
TRUNCATION_MODES = ("earliest", "latest")


class SyncError(ValidationError):
    """Basisklasse der Synchronisationsfehler."""


class NonPositiveInputError(SyncError):
    pass


class ZeroWindowError(SyncError):
    pass


class EmptyAfterTrimError(SyncError):
    pass


class InsufficientActivitySamplesError(SyncError):
    pass


class EmptyWindowError(SyncError):
    pass


def compute_window_size(cgm_interval, activity_epoch, overlap_ratio):
    """
    Fenstergröße |W| der überlappenden Mittelung.

        |W| = round((cgm_interval / activity_epoch) / overlap_ratio)

    Gerundet wird kaufmännisch (half away from zero). Für 300 s / 30 s bei
    50 % Überlappung ergibt sich 20.

    Raises:
        NonPositiveInputError: Eingaben ≤ 0, Überlappung > 1 oder cgm_interval < activity_epoch.
        ZeroWindowError: Ergebnis rundet auf 0.
    """
    if cgm_interval <= 0 or activity_epoch <= 0 or overlap_ratio <= 0:
        raise NonPositiveInputError(
            f"Alle Eingaben müssen positiv sein (cgm_interval={cgm_interval}, "
            f"activity_epoch={activity_epoch}, overlap_ratio={overlap_ratio})"
        )
    if overlap_ratio > 1:
        raise NonPositiveInputError(f"overlap_ratio muss in (0, 1] liegen, erhalten: {overlap_ratio}")
    if cgm_interval < activity_epoch:
        raise NonPositiveInputError("cgm_interval muss mindestens so groß wie activity_epoch sein")

    ratio = (cgm_interval / activity_epoch) / overlap_ratio
    window = int(math.floor(ratio + 0.5))
    if window < 1:
        raise ZeroWindowError(f"Fenstergröße rundet auf 0 (Quotient {ratio})")
    return window


@dataclass(frozen=True)
class SyncConfig:
    overlap_ratio: float = 0.5
    cgm_interval: int = DEFAULT_CGM_INTERVAL
    activity_epoch: int = DEFAULT_ACTIVITY_EPOCH
    truncation: str = "earliest"
    window_size: int = field(init=False)

    def __post_init__(self):
        if self.truncation not in TRUNCATION_MODES:
            raise SyncError(f"Unbekannter Kürzungsmodus {self.truncation!r}, erlaubt: {TRUNCATION_MODES}")
        object.__setattr__(
            self, "window_size", compute_window_size(self.cgm_interval, self.activity_epoch, self.overlap_ratio)
        )


@dataclass(frozen=True)
class FusedSample:
    timestamp: int
    glucose: float
    avg_activity: tuple


@dataclass(frozen=True, eq=False)
class FusedSequence:
    """
    Synchronisierte CGM/Aktivitäts-Sequenz eines Patienten.

    ``values`` liefert die (N × 9)-Matrix: Spalte 0 Glukose, Spalten 1–8 die
    gemittelten Aktivitätsfelder.
    """

    patient_id: str
    timestamps: np.ndarray
    glucose: np.ndarray
    activity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "timestamps", np.ascontiguousarray(self.timestamps, dtype=np.int64))
        object.__setattr__(self, "glucose", np.ascontiguousarray(self.glucose, dtype=np.float64))
        object.__setattr__(
            self, "activity",
            np.ascontiguousarray(self.activity, dtype=np.float64).reshape(-1, len(ACTIVITY_FIELDS)),
        )
        n = self.timestamps.size
        if self.glucose.shape != (n,) or self.activity.shape[0] != n:
            raise SyncError(f"Fused-Sequenz {self.patient_id}: inkonsistente Längen")
        if n > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise SyncError(f"Fused-Sequenz {self.patient_id}: Zeitstempel nicht streng monoton")

    def __len__(self):
        return int(self.timestamps.size)

    @property
    def values(self):
        return np.column_stack([self.glucose, self.activity])

    def sample(self, index):
        return FusedSample(
            int(self.timestamps[index]), float(self.glucose[index]), tuple(float(v) for v in self.activity[index])
        )

    def slice(self, start, stop):
        return FusedSequence(
            self.patient_id, self.timestamps[start:stop], self.glucose[start:stop], self.activity[start:stop]
        )

    def to_frame(self):
        df = pd.DataFrame(self.activity, columns=list(ACTIVITY_FIELDS))
        df.insert(0, "glucose", self.glucose)
        df.insert(0, "timestamp", self.timestamps)
        return df


def trim_uncovered_cgm(cgm, act):
    """
    Entfernt CGM-Zeitpunkte ohne Aktivitätsmessung davor UND danach.

    Behalten wird genau jedes t mit erster_Aktivität ≤ t ≤ letzte_Aktivität.

    Raises:
        EmptyAfterTrimError: Die Aufzeichnungszeiträume überlappen nicht.
    """
    if len(cgm) == 0 or len(act) == 0:
        raise EmptyAfterTrimError(f"Patient {cgm.patient_id}: leere Eingabereihe")
    first, last = act.timestamps[0], act.timestamps[-1]
    mask = (cgm.timestamps >= first) & (cgm.timestamps <= last)
    if not mask.any():
        raise EmptyAfterTrimError(
            f"Patient {cgm.patient_id}: CGM- und Aktivitätszeitraum überlappen nicht"
        )
    if mask.all():
        return cgm
    return cgm.subset(mask)


def nearest_activity_window(act, t, w):
    """
    Indizes der w Aktivitätsepochen mit kleinstem |θ − t|.

    Bei gleichem Abstand gewinnt der frühere Zeitstempel. Das Ergebnis ist
    aufsteigend sortiert. Da die Zeitstempel sortiert sind, genügt eine
    Zwei-Zeiger-Expansion ab der Einfügeposition von t.
    """
    timestamps = act.timestamps
    m = timestamps.size
    if w < 1:
        raise EmptyWindowError("Fenstergröße muss mindestens 1 sein")
    if m < w:
        raise InsufficientActivitySamplesError(
            f"Patient {act.patient_id}: {m} Aktivitätsepochen, Fenster benötigt {w}"
        )

    t = int(t)
    hi = int(np.searchsorted(timestamps, t, side="left"))
    lo = hi - 1
    for _ in range(w):
        if hi >= m:
            lo -= 1
        elif lo < 0:
            hi += 1
        elif t - timestamps[lo] <= timestamps[hi] - t:
            lo -= 1
        else:
            hi += 1
    return np.arange(lo + 1, hi, dtype=np.int64)


def average_window(act, indices):
    """
    Elementweiser Mittelwert der 8 Aktivitätsfelder über die Fensterindizes.

    Summiert wird strikt von links nach rechts in Indexreihenfolge
    (kumulative Summe).
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EmptyWindowError("Fenster ohne Aktivitätsindizes")
    window = act.values[indices]
    return np.cumsum(window, axis=0)[-1] / indices.size


class SensorSynchronizer:
    """
    Überführt CGM- und Aktivitätsreihen in eine gemeinsame 9-Feature-Sequenz
    (gleitender Mittelwert mit überlappenden Fenstern).

    Attributes:
        config (SyncConfig): Überlappung, Raten und Kürzungsmodus.
        max_workers (int): Threads für die kohortenweite Fusion.
    """

    def __init__(self, config=None, max_workers=1):
        self.config = config or SyncConfig()
        self.max_workers = max(1, int(max_workers))

    def fuse_patient(self, cgm, act):
        """
        Synchronisiert einen Patienten.

        Ablauf:
        1. CGM-Punkte ohne umschließende Aktivitätsmessung entfernen.
        2. Für jeden verbleibenden Zeitpunkt (chronologisch) die |W| nächsten
           Aktivitätsepochen bestimmen.
        3. Deren Mittelwert mit dem Glukosewert zu CA_t zusammensetzen.

        Returns:
            FusedSequence: Länge = Länge der getrimmten CGM-Reihe.
        """
        w = self.config.window_size
        trimmed = trim_uncovered_cgm(cgm, act)
        if len(act) < w:
            raise InsufficientActivitySamplesError(
                f"Patient {act.patient_id}: {len(act)} Aktivitätsepochen, Fenster benötigt {w}"
            )

        nominal_extent = (w - 1) * act.epoch_length
        averaged = np.empty((len(trimmed), len(ACTIVITY_FIELDS)), dtype=np.float64)
        wide_windows = 0
        for i, t in enumerate(trimmed.timestamps):
            indices = nearest_activity_window(act, t, w)
            averaged[i] = average_window(act, indices)
            extent = act.timestamps[indices[-1]] - act.timestamps[indices[0]]
            if extent > 2 * nominal_extent:
                wide_windows += 1

        if wide_windows:
            logger.warning(
                f"Patient {cgm.patient_id}: {wide_windows} Fenster überspannen mehr als die doppelte "
                f"Nominalbreite ({2 * nominal_extent} s) (Aktivitätslücken)"
            )
        dropped = len(cgm) - len(trimmed)
        if dropped:
            logger.info(f"Patient {cgm.patient_id}: {dropped} CGM-Punkte ohne Aktivitätsabdeckung entfernt")

        return FusedSequence(cgm.patient_id, trimmed.timestamps, trimmed.glucose, averaged)

    def fuse_cohort(self, patients):
        """Fusioniert alle PatientRecords; die Reihenfolge der Eingabe bleibt erhalten."""
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            sequences = list(pool.map(lambda p: self.fuse_patient(p.cgm, p.activity), patients))
        logger.info(f"Synchronisation abgeschlossen: {len(sequences)} Sequenzen (|W| = {self.config.window_size})")
        return sequences


def truncate_cohort(sequences, mode="earliest"):
    """
    Kürzt alle Sequenzen auf die kleinste gemeinsame Länge.

    Args:
        sequences: Liste von FusedSequence.
        mode (str): ``earliest`` behält die ersten L Werte, ``latest`` die letzten L.

    Returns:
        tuple: (gekürzte Sequenzen, common_length)
    """
    if not sequences:
        raise SyncError("Keine Sequenzen zum Kürzen übergeben")
    if mode not in TRUNCATION_MODES:
        raise SyncError(f"Unbekannter Kürzungsmodus {mode!r}")
    common_length = min(len(s) for s in sequences)
    if mode == "earliest":
        truncated = [s.slice(0, common_length) for s in sequences]
    else:
        truncated = [s.slice(len(s) - common_length, len(s)) for s in sequences]
    logger.info(f"Kohorte auf gemeinsame Länge {common_length} gekürzt ({mode})")
    return truncated, common_length


# --- DATEI-SCHNITTSTELLE ---

def write_fused_csv(sequence, path):
    sequence.to_frame().to_csv(path, index=False, encoding="utf-8")
    return Path(path)


def read_fused_csv(path, patient_id=None):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Fused-Datei {path} nicht gefunden")
    df = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
    if list(df.columns) != FUSED_COLUMNS:
        raise SyncError(f"{path}: Header {list(df.columns)} entspricht nicht {FUSED_COLUMNS}")
    return FusedSequence(
        patient_id or path.stem,
        df["timestamp"].to_numpy(dtype=np.int64),
        df["glucose"].to_numpy(dtype=np.float64),
        df[list(ACTIVITY_FIELDS)].to_numpy(dtype=np.float64),
    )


def write_cohort_summary(sequences, raw_lengths, common_length, path):
    """Kohortenübersicht: Rohlänge, fusionierte Länge und gemeinsame Länge pro Patient."""
    df = pd.DataFrame({
        "patient_id": [s.patient_id for s in sequences],
        "cgm_length": [raw_lengths[s.patient_id] for s in sequences],
        "fused_length": [len(s) for s in sequences],
        "common_length": common_length,
    })
    df.to_csv(path, index=False, encoding="utf-8")
    return Path(path)
