import configparser
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from src.errors import ValidationError

# Modul-Logger; die Formatierung übernimmt der Einstiegspunkt (app.py)
logger = logging.getLogger(__name__)

# --- SCHEMA-DEFINITIONEN ---
# Die Header sind bitgenau festgelegt; Abweichungen gelten als defekte Datei.
CGM_COLUMNS = ["patient_id", "timestamp_utc", "glucose_mg_dl"]
ACTIVITY_FIELDS = ("dx", "dy", "dz", "steps", "i_sit", "i_std", "i_lie", "i_off")
ACTIVITY_COLUMNS = ["patient_id", "timestamp_utc", *ACTIVITY_FIELDS]
INCLINOMETER_FIELDS = ("i_sit", "i_std", "i_lie", "i_off")

# Reihenfolge der Wide-Features ist Teil des Parametervertrags (WideParams).
TABULAR_FIELDS = (
    "height",
    "weight",
    "age",
    "waist_circumference",
    "triglycerides",
    "ldl",
    "hdl",
    "vldl",
)

DEFAULT_CGM_INTERVAL = 300
DEFAULT_ACTIVITY_EPOCH = 30
DEFAULT_MIN_CGM_LENGTH = 1445


# =================================================================
# FEHLERKLASSEN
# =================================================================

class IngestError(ValidationError):
    """Basisklasse aller Fehler beim Einlesen von Patientendaten."""


class MalformedRowError(IngestError):
    def __init__(self, path, line, detail):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}, Zeile {line}: {detail}")


class NonMonotonicTimestampsError(IngestError):
    def __init__(self, path, line):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}, Zeile {line}: Zeitstempel nicht streng monoton steigend")


class NonPositiveGlucoseError(IngestError):
    def __init__(self, path, line, value):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}, Zeile {line}: Glukosewert {value!r} ist nicht positiv")


class EmptySeriesError(IngestError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"{path}: Datei enthält keine Messwerte")


class NegativeFieldError(IngestError):
    def __init__(self, path, line, column, value):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(f"{path}, Zeile {line}: Feld '{column}' ist negativ ({value!r})")


class InclinometerExceedsEpochError(IngestError):
    def __init__(self, path, line, column, value, epoch_length):
        self.path = str(path)
        self.line = line
        self.column = column
        super().__init__(
            f"{path}, Zeile {line}: '{column}' = {value!r} s überschreitet die Epochenlänge {epoch_length} s"
        )


class ManifestMissingError(IngestError, FileNotFoundError):
    pass


class MalformedManifestError(IngestError):
    pass


class PatientFileMissingError(IngestError, FileNotFoundError):
    pass


class InconsistentPatientIdsError(IngestError):
    pass


class BiomarkerDeltaMismatchError(IngestError):
    pass


# =================================================================
# DOMÄNENTYPEN
# =================================================================

class Biomarker(Enum):
    """Zielgrößen der Einjahresprognose."""

    HBA1C = "HbA1c"
    HDL = "HDL"
    LDL = "LDL"
    TRIGLYCERIDES = "Triglycerides"

    @property
    def unit(self):
        return "%" if self is Biomarker.HBA1C else "mg/dL"

    @property
    def key(self):
        """Präfix der Manifest-Schlüssel (z. B. ``hba1c_followup``)."""
        return self.value.lower()

    @property
    def table_label(self):
        # Beschriftung der Index-Spalte im Ergebnisbericht
        return {
            Biomarker.HBA1C: "HBA1c",
            Biomarker.HDL: "HDL",
            Biomarker.LDL: "LDL",
            Biomarker.TRIGLYCERIDES: "TC",
        }[self]

    @classmethod
    def parse(cls, text):
        needle = str(text).strip().lower()
        for member in cls:
            if needle in (member.value.lower(), member.name.lower(), member.table_label.lower()):
                return member
        raise ValidationError(f"Unbekannter Biomarker: {text!r}")


def _as_int_array(values):
    return np.ascontiguousarray(values, dtype=np.int64)


def _check_strictly_increasing(timestamps, what):
    if timestamps.size > 1 and np.any(np.diff(timestamps) <= 0):
        raise ValidationError(f"{what}: Zeitstempel nicht streng monoton steigend")


@dataclass(frozen=True, eq=False)
class CgmSeries:
    """
    Rohe Glukosezeitreihe eines Patienten.

    Attributes:
        patient_id (str): Opake Patientenkennung.
        timestamps (np.ndarray): UTC-Sekunden (int64), streng monoton steigend.
        glucose (np.ndarray): Glukose in mg/dL, endlich und > 0.
        nominal_interval (int): Modaler Abstand zweier Messungen in Sekunden.
    """

    patient_id: str
    timestamps: np.ndarray
    glucose: np.ndarray
    nominal_interval: int = DEFAULT_CGM_INTERVAL

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _as_int_array(self.timestamps))
        object.__setattr__(self, "glucose", np.ascontiguousarray(self.glucose, dtype=np.float64))
        if self.timestamps.ndim != 1 or self.timestamps.shape != self.glucose.shape:
            raise ValidationError(f"CGM {self.patient_id}: Zeitstempel und Werte passen nicht zusammen")
        if self.timestamps.size == 0:
            raise ValidationError(f"CGM {self.patient_id}: leere Zeitreihe")
        _check_strictly_increasing(self.timestamps, f"CGM {self.patient_id}")
        if not np.all(np.isfinite(self.glucose)) or np.any(self.glucose <= 0):
            raise ValidationError(f"CGM {self.patient_id}: Glukosewerte müssen endlich und positiv sein")

    def __len__(self):
        return int(self.timestamps.size)

    def subset(self, mask):
        return CgmSeries(self.patient_id, self.timestamps[mask], self.glucose[mask], self.nominal_interval)


@dataclass(frozen=True)
class ActivitySample:
    """Ein 8-Felder-Vektor einer Aktivitätsepoche."""

    dx: float
    dy: float
    dz: float
    steps: float
    i_sit: float
    i_std: float
    i_lie: float
    i_off: float

    def as_array(self):
        return np.array([getattr(self, name) for name in ACTIVITY_FIELDS], dtype=np.float64)


@dataclass(frozen=True, eq=False)
class ActivitySeries:
    """
    Epochierte Aktivitätsdaten eines Patienten.

    ``values`` ist eine (m × 8)-Matrix in der Spaltenreihenfolge von ACTIVITY_FIELDS.
    Lücken (Abstand ≠ Epochenlänge) sind erlaubt und werden über ``gap_count`` gemeldet.
    """

    patient_id: str
    timestamps: np.ndarray
    values: np.ndarray
    epoch_length: int = DEFAULT_ACTIVITY_EPOCH

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _as_int_array(self.timestamps))
        values = np.ascontiguousarray(self.values, dtype=np.float64).reshape(-1, len(ACTIVITY_FIELDS))
        object.__setattr__(self, "values", values)
        if self.timestamps.ndim != 1 or self.timestamps.size != values.shape[0]:
            raise ValidationError(f"Aktivität {self.patient_id}: Zeitstempel und Werte passen nicht zusammen")
        if self.timestamps.size == 0:
            raise ValidationError(f"Aktivität {self.patient_id}: leere Zeitreihe")
        if self.epoch_length <= 0:
            raise ValidationError(f"Aktivität {self.patient_id}: Epochenlänge muss positiv sein")
        _check_strictly_increasing(self.timestamps, f"Aktivität {self.patient_id}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError(f"Aktivität {self.patient_id}: Felder müssen endlich und nicht negativ sein")

    def __len__(self):
        return int(self.timestamps.size)

    def sample(self, index):
        return ActivitySample(*(float(v) for v in self.values[index]))

    @property
    def gap_count(self):
        return int(np.count_nonzero(np.diff(self.timestamps) != self.epoch_length))


@dataclass(frozen=True)
class TabularFeatures:
    """Die acht Baseline-Merkmale des Wide-Zweigs (Einheiten: m, kg, Jahre, m, mg/dL)."""

    height: float
    weight: float
    age: float
    waist_circumference: float
    triglycerides: float
    ldl: float
    hdl: float
    vldl: float

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise ValidationError("Tabellarische Merkmale müssen endlich sein")
        for name in ("height", "weight", "age", "waist_circumference"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"Merkmal '{name}' muss positiv sein")

    def as_array(self):
        return np.array([getattr(self, name) for name in TABULAR_FIELDS], dtype=np.float64)


@dataclass(frozen=True)
class BiomarkerDelta:
    """Baseline, Follow-up und Differenz eines Biomarkers; ``delta`` ist redundant gespeichert."""

    target: Biomarker
    baseline: float
    followup: float
    delta: Optional[float] = None

    def __post_init__(self):
        computed = self.followup - self.baseline
        if self.delta is None:
            object.__setattr__(self, "delta", computed)
        elif self.delta != computed:
            raise BiomarkerDeltaMismatchError(
                f"{self.target.value}: gespeichertes Delta {self.delta!r} ≠ followup − baseline ({computed!r})"
            )


@dataclass(eq=False)
class PatientRecord:
    patient_id: str
    cgm: CgmSeries
    activity: ActivitySeries
    features: TabularFeatures
    targets: Dict[Biomarker, BiomarkerDelta]


@dataclass(eq=False)
class Cohort:
    """
    Ergebnis der Manifest-Ingestierung.

    Invariante: ``len(patients) + len(excluded) == manifest_count``.
    """

    target: Biomarker
    patients: List[PatientRecord]
    excluded: Dict[str, str] = field(default_factory=dict)
    manifest_count: int = 0

    @property
    def patient_ids(self):
        return [p.patient_id for p in self.patients]

    def __len__(self):
        return len(self.patients)

    def summary(self):
        """Übersicht pro Patient (aufgenommen und ausgeschlossen) als DataFrame."""
        rows = [
            {
                "patient_id": p.patient_id,
                "status": "retained",
                "reason": "",
                "cgm_length": len(p.cgm),
                "activity_length": len(p.activity),
                "activity_gaps": p.activity.gap_count,
                "delta": p.targets[self.target].delta,
            }
            for p in self.patients
        ]
        rows += [
            {"patient_id": pid, "status": "excluded", "reason": reason}
            for pid, reason in self.excluded.items()
        ]
        return pd.DataFrame(rows, columns=[
            "patient_id", "status", "reason", "cgm_length", "activity_length", "activity_gaps", "delta",
        ])


# =================================================================
# CSV-PARSER
# =================================================================

def _line_from_parser_error(exc):
    match = re.search(r"line (\d+)", str(exc))
    return int(match.group(1)) if match else -1


def _read_schema_csv(path, columns):
    """
    Liest eine CSV-Datei mit festem Header.

    Die Spalte ``patient_id`` bleibt String; Gleitkommazahlen werden mit
    ``round_trip``-Präzision geparst.
    """
    path = Path(path)
    if not path.exists():
        msg = f"Quelldatei {path} nicht gefunden."
        logger.error(msg)
        raise PatientFileMissingError(msg)

    try:
        df = pd.read_csv(
            path,
            dtype={"patient_id": str},
            float_precision="round_trip",
            keep_default_na=False,
            na_values=[""],
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise EmptySeriesError(path)
    except pd.errors.ParserError as exc:
        raise MalformedRowError(path, _line_from_parser_error(exc), "falsche Spaltenanzahl")

    if list(df.columns) != columns:
        raise MalformedRowError(path, 1, f"Header {list(df.columns)} entspricht nicht dem Schema {columns}")
    if df.empty:
        raise EmptySeriesError(path)
    return df


def _numeric_column(df, column, path):
    """Konvertiert eine Spalte nach float64; der erste ungültige Wert wird mit Zeilennummer gemeldet."""
    values = df[column]
    if pd.api.types.is_numeric_dtype(values) and not pd.api.types.is_bool_dtype(values):
        numeric = values.astype(np.float64)
    else:
        numeric = pd.to_numeric(values, errors="coerce")
    arr = numeric.to_numpy(dtype=np.float64)
    bad = ~np.isfinite(arr)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        # Zeile 1 ist der Header
        raise MalformedRowError(path, row + 2, f"Spalte '{column}': ungültiger Wert {values.iloc[row]!r}")
    return arr


def _timestamp_column(df, path):
    raw = _numeric_column(df, "timestamp_utc", path)
    fractional = raw != np.floor(raw)
    if fractional.any():
        row = int(np.flatnonzero(fractional)[0])
        raise MalformedRowError(path, row + 2, "Zeitstempel muss eine ganze Zahl (UTC-Sekunden) sein")
    timestamps = raw.astype(np.int64)
    steps = np.diff(timestamps)
    if steps.size and np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise NonMonotonicTimestampsError(path, row + 2)
    return timestamps


def _single_patient_id(df, path):
    ids = df["patient_id"]
    missing = ids.isna()
    if missing.any():
        row = int(np.flatnonzero(missing.to_numpy())[0])
        raise MalformedRowError(path, row + 2, "patient_id fehlt")
    unique = ids.unique()
    if len(unique) != 1:
        raise InconsistentPatientIdsError(f"{path}: mehrere Patienten-IDs in einer Datei ({list(unique)[:3]} …)")
    return str(unique[0])


def _modal_gap(timestamps, default):
    if timestamps.size < 2:
        return int(default)
    # mode() liefert bei Gleichstand den kleinsten Wert zuerst
    return int(pd.Series(np.diff(timestamps)).mode().iloc[0])


def parse_cgm_csv(path, default_interval=DEFAULT_CGM_INTERVAL):
    """
    Liest eine CGM-Datei (``patient_id,timestamp_utc,glucose_mg_dl``).

    Args:
        path: Pfad zur CSV-Datei.
        default_interval (int): Nominaler Abstand, falls nur eine Messung vorliegt.

    Returns:
        CgmSeries: validierte Zeitreihe; ``nominal_interval`` ist der modale Messabstand.
    """
    df = _read_schema_csv(path, CGM_COLUMNS)
    patient_id = _single_patient_id(df, path)
    timestamps = _timestamp_column(df, path)
    glucose = _numeric_column(df, "glucose_mg_dl", path)

    non_positive = glucose <= 0
    if non_positive.any():
        row = int(np.flatnonzero(non_positive)[0])
        raise NonPositiveGlucoseError(path, row + 2, float(glucose[row]))

    series = CgmSeries(patient_id, timestamps, glucose, _modal_gap(timestamps, default_interval))
    logger.debug(f"CGM geladen: {path} ({len(series)} Messungen, Abstand {series.nominal_interval} s)")
    return series


def parse_activity_csv(path, epoch_length=None):
    """
    Liest eine Aktivitätsdatei mit dem 8-Felder-Epochenschema.

    Args:
        path: Pfad zur CSV-Datei.
        epoch_length (int | None): Epochenlänge in Sekunden; ohne Angabe der modale
            Zeitstempelabstand (Default 30 s bei nur einer Epoche).

    Returns:
        ActivitySeries
    """
    df = _read_schema_csv(path, ACTIVITY_COLUMNS)
    patient_id = _single_patient_id(df, path)
    timestamps = _timestamp_column(df, path)
    if epoch_length is None:
        epoch_length = _modal_gap(timestamps, DEFAULT_ACTIVITY_EPOCH)

    columns = [_numeric_column(df, name, path) for name in ACTIVITY_FIELDS]
    values = np.column_stack(columns)

    for j, name in enumerate(ACTIVITY_FIELDS):
        negative = values[:, j] < 0
        if negative.any():
            row = int(np.flatnonzero(negative)[0])
            raise NegativeFieldError(path, row + 2, name, float(values[row, j]))

    for name in INCLINOMETER_FIELDS:
        j = ACTIVITY_FIELDS.index(name)
        exceeding = values[:, j] > epoch_length
        if exceeding.any():
            row = int(np.flatnonzero(exceeding)[0])
            raise InclinometerExceedsEpochError(path, row + 2, name, float(values[row, j]), epoch_length)

    series = ActivitySeries(patient_id, timestamps, values, int(epoch_length))
    if series.gap_count:
        logger.warning(f"Aktivität {patient_id}: {series.gap_count} unregelmäßige Epochenabstände (Lücken)")
    logger.debug(f"Aktivität geladen: {path} ({len(series)} Epochen)")
    return series


def write_cgm_csv(series, path):
    """Schreibt eine CgmSeries im Ingest-Schema (verlustfrei wieder einlesbar)."""
    df = pd.DataFrame({
        "patient_id": series.patient_id,
        "timestamp_utc": series.timestamps,
        "glucose_mg_dl": series.glucose,
    }, columns=CGM_COLUMNS)
    df.to_csv(path, index=False, encoding="utf-8")
    return Path(path)


def write_activity_csv(series, path):
    """Schreibt eine ActivitySeries im Ingest-Schema."""
    df = pd.DataFrame(series.values, columns=list(ACTIVITY_FIELDS))
    df.insert(0, "timestamp_utc", series.timestamps)
    df.insert(0, "patient_id", series.patient_id)
    df.to_csv(path, index=False, encoding="utf-8")
    return Path(path)


# =================================================================
# KOHORTEN-MANIFEST
# =================================================================

@dataclass
class _ManifestEntry:
    patient_id: str
    cgm_path: Path
    activity_path: Path
    features: TabularFeatures
    targets: Dict[Biomarker, BiomarkerDelta]


def _optional_float(section, key):
    raw = section.get(key, fallback="").strip()
    if raw == "":
        return None
    try:
        value = float(raw)
    except ValueError:
        raise MalformedManifestError(f"Patient {section.name}: '{key}' = {raw!r} ist keine Zahl")
    if not math.isfinite(value):
        raise MalformedManifestError(f"Patient {section.name}: '{key}' ist nicht endlich")
    return value


class CohortLoader:
    """
    ETL für eine komplette Kohorte, gesteuert über ein Manifest.

    Das Manifest ist eine INI-Datei mit einem Abschnitt pro Patient::

        [P001]
        cgm = P001_cgm.csv
        activity = P001_activity.csv
        height = 1.72
        ...
        hba1c_baseline = 7.1
        hba1c_followup = 6.8

    Alle Pfade sind relativ zum Verzeichnis des Manifests.

    Attributes:
        manifest_path (Path): Pfad zur Manifest-Datei.
        target (Biomarker): Zielgröße; Patienten ohne deren Follow-up werden ausgeschlossen.
        min_cgm_length (int): Mindestlänge der CGM-Reihe; kürzere Aufzeichnungen werden ausgeschlossen.
        max_workers (int): Anzahl paralleler Parser-Threads.
    """

    def __init__(self, manifest_path, target=Biomarker.HBA1C,
                 min_cgm_length=DEFAULT_MIN_CGM_LENGTH, max_workers=1):
        self.manifest_path = Path(manifest_path)
        self.target = target
        self.min_cgm_length = int(min_cgm_length)
        self.max_workers = max(1, int(max_workers))

    def _validate_source(self):
        """Fail-Fast-Prüfung, bevor irgendeine Patientendatei geöffnet wird."""
        if not self.manifest_path.is_file():
            error_msg = f"Manifest {self.manifest_path} nicht gefunden."
            logger.error(error_msg)
            raise ManifestMissingError(error_msg)
        return True

    def _read_entries(self):
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(self.manifest_path, encoding="utf-8") as handle:
                parser.read_file(handle)
        except configparser.DuplicateSectionError as exc:
            raise InconsistentPatientIdsError(f"Patient {exc.section!r} ist mehrfach im Manifest aufgeführt")
        except configparser.Error as exc:
            raise MalformedManifestError(f"Manifest {self.manifest_path} nicht lesbar: {exc}")

        base_dir = self.manifest_path.parent
        entries = []
        for patient_id in parser.sections():
            section = parser[patient_id]
            for key in ("cgm", "activity", *TABULAR_FIELDS):
                if not section.get(key, fallback="").strip():
                    raise MalformedManifestError(f"Patient {patient_id}: Pflichtschlüssel '{key}' fehlt")
            try:
                features = TabularFeatures(**{name: _optional_float(section, name) for name in TABULAR_FIELDS})
            except ValidationError as exc:
                raise MalformedManifestError(f"Patient {patient_id}: {exc}")

            targets = {}
            for marker in Biomarker:
                baseline = _optional_float(section, f"{marker.key}_baseline")
                followup = _optional_float(section, f"{marker.key}_followup")
                if baseline is None or followup is None:
                    continue
                targets[marker] = BiomarkerDelta(
                    marker, baseline, followup, _optional_float(section, f"{marker.key}_delta")
                )

            entries.append(_ManifestEntry(
                patient_id=patient_id,
                cgm_path=base_dir / section["cgm"].strip(),
                activity_path=base_dir / section["activity"].strip(),
                features=features,
                targets=targets,
            ))
        if not entries:
            raise MalformedManifestError(f"Manifest {self.manifest_path} enthält keine Patienten")
        return entries

    def _load_patient(self, entry):
        cgm = parse_cgm_csv(entry.cgm_path)
        activity = parse_activity_csv(entry.activity_path)
        for source, series in ((entry.cgm_path, cgm), (entry.activity_path, activity)):
            if series.patient_id != entry.patient_id:
                raise InconsistentPatientIdsError(
                    f"{source}: enthält Patient {series.patient_id!r}, Manifest erwartet {entry.patient_id!r}"
                )
        return PatientRecord(entry.patient_id, cgm, activity, entry.features, entry.targets)

    def load(self):
        """
        Führt die Ingestierung durch.

        Ablauf:
        1. Manifest lesen und alle referenzierten Dateien auf Existenz prüfen.
        2. Patienten ohne Follow-up der Zielgröße ausschließen.
        3. Sensordateien der übrigen Patienten parsen (optional parallel).
        4. Patienten unterhalb der CGM-Mindestlänge ausschließen.

        Returns:
            Cohort
        """
        self._validate_source()
        logger.info(f"Starte Kohorten-Ingestierung von: {self.manifest_path}")
        entries = self._read_entries()

        for entry in entries:
            for path in (entry.cgm_path, entry.activity_path):
                if not path.is_file():
                    msg = f"Patient {entry.patient_id}: Datei {path} nicht gefunden."
                    logger.error(msg)
                    raise PatientFileMissingError(msg)

        excluded = {}
        candidates = []
        for entry in entries:
            if self.target not in entry.targets:
                excluded[entry.patient_id] = "missing_followup"
                logger.info(f"Patient {entry.patient_id} ausgeschlossen: kein Follow-up für {self.target.value}")
            else:
                candidates.append(entry)

        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            records = list(pool.map(self._load_patient, candidates))

        patients = []
        for record in records:
            if len(record.cgm) < self.min_cgm_length:
                excluded[record.patient_id] = "cgm_too_short"
                logger.info(
                    f"Patient {record.patient_id} ausgeschlossen: CGM-Länge {len(record.cgm)} "
                    f"< Mindestlänge {self.min_cgm_length}"
                )
            else:
                patients.append(record)

        cohort = Cohort(self.target, patients, excluded, manifest_count=len(entries))
        logger.info(
            f"Ingestierung abgeschlossen: {len(patients)} von {len(entries)} Patienten übernommen, "
            f"{len(excluded)} ausgeschlossen."
        )
        return cohort


def load_cohort(manifest_path, target=Biomarker.HBA1C, min_cgm_length=DEFAULT_MIN_CGM_LENGTH, max_workers=1):
    """Kurzform für ``CohortLoader(...).load()``."""
    return CohortLoader(manifest_path, target, min_cgm_length, max_workers).load()


def write_manifest(entries, path):
    """
    Schreibt ein Manifest.

    Args:
        entries: Iterable von Dicts mit den Schlüsseln ``patient_id``, ``cgm``, ``activity``,
            ``features`` (TabularFeatures) und ``targets`` (Dict Biomarker → BiomarkerDelta
            oder Baseline-Wert ohne Follow-up als float).
        path: Zielpfad.
    """
    parser = configparser.ConfigParser(interpolation=None)
    for entry in entries:
        section = {"cgm": str(entry["cgm"]), "activity": str(entry["activity"])}
        for name in TABULAR_FIELDS:
            section[name] = repr(float(getattr(entry["features"], name)))
        for marker, value in entry["targets"].items():
            if isinstance(value, BiomarkerDelta):
                section[f"{marker.key}_baseline"] = repr(value.baseline)
                section[f"{marker.key}_followup"] = repr(value.followup)
                section[f"{marker.key}_delta"] = repr(value.delta)
            else:
                # nur Baseline vorhanden (Follow-up fehlt)
                section[f"{marker.key}_baseline"] = repr(float(value))
                section[f"{marker.key}_followup"] = ""
        parser[entry["patient_id"]] = section
    with open(path, "w", encoding="utf-8") as handle:
        parser.write(handle)
    return Path(path)
