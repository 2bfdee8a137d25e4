"""
Generator für synthetische Kohorten.

Erzeugt CGM- und Aktivitätsdateien im Ingest-Format, ein Manifest und eine
bekannte ("geplante") lineare Beziehung zwischen Sensorstatistiken bzw.
Stammdaten und den Biomarker-Deltas. Die Beziehung ist mit Rauschen der
Standardabweichung ``noise_sd`` überlagert; kein Prädiktor kann im Erwartungswert
einen kleineren RMSE als ``noise_sd`` erreichen.

Zufallsströme: numpy PCG64, initialisiert über ``SeedSequence(seed, spawn_key=...)``.
Patient i nutzt ``spawn_key=(0, i)`` (unabhängig von allen anderen Patienten),
die Zielrauschen der Biomarker nutzen ``spawn_key=(1, k)``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
import statsmodels.api as sm

from src.errors import ValidationError
from src.ingest import (
    DEFAULT_ACTIVITY_EPOCH,
    DEFAULT_CGM_INTERVAL,
    ActivitySeries,
    Biomarker,
    BiomarkerDelta,
    CgmSeries,
    TabularFeatures,
    write_activity_csv,
    write_cgm_csv,
    write_manifest,
)

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
# 2020-01-01T00:00:00Z
BASE_TIMESTAMP = 1577836800
GLUCOSE_MIN = 40.0
GLUCOSE_MAX = 400.0

PLANTED_FEATURES = ("mean_glucose", "glucose_variance", "mean_activity_magnitude", "age", "weight")
DEFAULT_COEFFICIENTS = np.array([0.025, 0.0005, -0.01, 0.01, 0.005])

# Skalierung der HbA1c-Koeffizienten und des Rauschens auf die Einheiten der Lipidwerte
TARGET_SCALE = {
    Biomarker.HBA1C: 1.0,
    Biomarker.HDL: 3.0,
    Biomarker.LDL: 5.0,
    Biomarker.TRIGLYCERIDES: 10.0,
}
BASELINE_RANGES = {
    Biomarker.HBA1C: (6.0, 10.0),
    Biomarker.HDL: (35.0, 65.0),
    Biomarker.LDL: (80.0, 160.0),
    Biomarker.TRIGLYCERIDES: (100.0, 250.0),
}

# Haltungsanteile (sitzen, stehen, liegen, nicht getragen) tagsüber / nachts
POSTURE_AWAKE = np.array([0.55, 0.35, 0.05, 0.05])
POSTURE_NIGHT = np.array([0.05, 0.02, 0.90, 0.03])
WAKE_HOUR = 7.0
SLEEP_HOUR = 22.0


@dataclass
class SynthConfig:
    n_patients: int = 50
    days: int = 7
    cgm_interval: int = DEFAULT_CGM_INTERVAL
    activity_epoch: int = DEFAULT_ACTIVITY_EPOCH
    seed: int = 0
    noise_sd: float = 0.3
    dropout_rate: float = 0.0
    glucose_noise_sd: float = 5.0
    meals_per_day: int = 3
    circadian_amplitude: float = 10.0
    missing_followup_rate: float = 0.0
    short_record_rate: float = 0.0
    start_offset_max: int = 1800
    coefficients: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_patients < 1 or self.days < 1:
            raise ValidationError("n_patients und days müssen ≥ 1 sein")
        if self.cgm_interval <= 0 or self.activity_epoch <= 0:
            raise ValidationError("cgm_interval und activity_epoch müssen > 0 sein")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError(f"dropout_rate muss in [0, 1) liegen (erhalten {self.dropout_rate})")
        for name in ("missing_followup_rate", "short_record_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} muss in [0, 1] liegen")
        if self.noise_sd < 0 or self.glucose_noise_sd < 0 or self.circadian_amplitude < 0:
            raise ValidationError("Rauschparameter und Amplituden müssen ≥ 0 sein")
        if self.meals_per_day < 0 or self.start_offset_max < 0:
            raise ValidationError("meals_per_day und start_offset_max müssen ≥ 0 sein")
        if self.coefficients is None:
            self.coefficients = DEFAULT_COEFFICIENTS.copy()
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.shape != (len(PLANTED_FEATURES),):
            raise ValidationError(f"Es werden {len(PLANTED_FEATURES)} Koeffizienten erwartet")

    @property
    def cgm_samples(self):
        return self.days * SECONDS_PER_DAY // self.cgm_interval

    @property
    def activity_epochs(self):
        return self.days * SECONDS_PER_DAY // self.activity_epoch


@dataclass(frozen=True)
class PatientState:
    """Verdeckte Eigenschaften eines synthetischen Patienten."""

    patient_id: str
    baseline_glucose: float
    activity_level: float
    cgm_start: int = BASE_TIMESTAMP
    activity_start: int = BASE_TIMESTAMP
    cgm_samples: Optional[int] = None


def patient_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, index)))


def target_rng(seed, target):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, list(Biomarker).index(target))))


def draw_patient_state(index, config, rng):
    short = rng.random() < config.short_record_rate
    return PatientState(
        patient_id=f"P{index + 1:03d}",
        baseline_glucose=float(rng.uniform(90.0, 180.0)),
        activity_level=float(rng.uniform(0.5, 1.5)),
        cgm_start=BASE_TIMESTAMP + int(rng.integers(0, config.start_offset_max + 1)),
        activity_start=BASE_TIMESTAMP + int(rng.integers(0, config.start_offset_max + 1)),
        cgm_samples=int(config.cgm_samples * 0.55) if short else None,
    )


def _hour_of_day(timestamps):
    return ((timestamps - BASE_TIMESTAMP) % SECONDS_PER_DAY) / 3600.0


def generate_cgm(state, config, rng):
    """
    Glukoseverlauf: Basiswert + Mahlzeitenspitzen + zirkadiane Sinuswelle + weißes Rauschen.

    Eine Mahlzeit zum Zeitpunkt t0 trägt A · x · exp(1 − x) mit x = (t − t0)/τ bei
    (Maximum A nach τ, τ = halbe Abklingzeit von 2–3 h). Ergebnis auf [40, 400] mg/dL begrenzt.
    """
    n = state.cgm_samples or config.cgm_samples
    timestamps = state.cgm_start + np.arange(n, dtype=np.int64) * config.cgm_interval
    hours = _hour_of_day(timestamps)
    glucose = np.full(n, state.baseline_glucose, dtype=np.float64)

    if config.meals_per_day > 0:
        meal_hours = np.linspace(7.0, 20.0, config.meals_per_day)
        elapsed = (timestamps - timestamps[0]) / 3600.0
        first_day = timestamps[0] - (timestamps[0] - BASE_TIMESTAMP) % SECONDS_PER_DAY
        offset_h = (timestamps[0] - first_day) / 3600.0
        for day in range(config.days + 1):
            for meal_hour in meal_hours:
                t0 = day * 24.0 + meal_hour + rng.normal(0.0, 0.5) - offset_h
                amplitude = rng.uniform(30.0, 80.0)
                tau = rng.uniform(2.0, 3.0) / 2.0
                x = (elapsed - t0) / tau
                bump = np.where(x > 0, amplitude * x * np.exp(1.0 - np.maximum(x, 0.0)), 0.0)
                glucose += bump

    if config.circadian_amplitude > 0:
        glucose += config.circadian_amplitude * np.sin(2.0 * np.pi * (hours - 4.0) / 24.0)
    if config.glucose_noise_sd > 0:
        glucose += rng.normal(0.0, config.glucose_noise_sd, size=n)
    np.clip(glucose, GLUCOSE_MIN, GLUCOSE_MAX, out=glucose)
    return CgmSeries(state.patient_id, timestamps, glucose, config.cgm_interval)


def generate_activity(state, config, rng):
    """
    Aktivitätsepochen mit Tagesprofil: tagsüber Grundaktivität mit Aktivitätsschüben,
    nachts nahezu Ruhe. Die vier Inklinometerfelder werden multinomial auf die
    Epochenlänge verteilt und summieren sich exakt zu ``activity_epoch``.
    """
    m = config.activity_epochs
    timestamps = state.activity_start + np.arange(m, dtype=np.int64) * config.activity_epoch
    hours = _hour_of_day(timestamps)
    awake = (hours >= WAKE_HOUR) & (hours < SLEEP_HOUR)
    burst = rng.random(m) < 0.15
    intensity = np.where(awake, np.where(burst, 2.0, 0.3), 0.02) * state.activity_level

    values = np.empty((m, 8), dtype=np.float64)
    scale = intensity * config.activity_epoch
    for axis in range(3):
        values[:, axis] = np.round(rng.gamma(2.0, 1.0, size=m) * scale)
    values[:, 3] = rng.poisson(intensity * config.activity_epoch / 1.5)
    postures = np.empty((m, 4), dtype=np.int64)
    postures[awake] = rng.multinomial(config.activity_epoch, POSTURE_AWAKE, size=int(awake.sum()))
    postures[~awake] = rng.multinomial(config.activity_epoch, POSTURE_NIGHT, size=int((~awake).sum()))
    values[:, 4:] = postures

    keep = rng.random(m) >= config.dropout_rate
    return ActivitySeries(state.patient_id, timestamps[keep], values[keep], config.activity_epoch)


def draw_tabular_features(rng, lipid_baselines):
    height = rng.uniform(1.55, 1.95)
    weight = rng.uniform(60.0, 120.0)
    return TabularFeatures(
        height=float(height),
        weight=float(weight),
        age=float(rng.uniform(35.0, 80.0)),
        waist_circumference=float(rng.uniform(0.75, 1.25)),
        triglycerides=float(lipid_baselines[Biomarker.TRIGLYCERIDES]),
        ldl=float(lipid_baselines[Biomarker.LDL]),
        hdl=float(lipid_baselines[Biomarker.HDL]),
        vldl=float(lipid_baselines[Biomarker.TRIGLYCERIDES] / 5.0),
    )


def planted_features(cgm, activity, features):
    """Die fünf generierenden Merkmale eines Patienten in der Reihenfolge ``PLANTED_FEATURES``."""
    magnitude = np.sqrt(np.sum(activity.values[:, :3] ** 2, axis=1))
    return np.array([
        float(np.mean(cgm.glucose)),
        float(np.var(cgm.glucose)),
        float(np.mean(magnitude)),
        features.age,
        features.weight,
    ])


# =================================================================
# GEPLANTE ZIELWERTE
# =================================================================

def _linear_part(features, coefficients, intercept):
    return intercept + features @ coefficients


@dataclass(eq=False)
class PlantedTruth:
    """Generierende Merkmale, Koeffizienten und Rauschziehungen eines Biomarkers."""

    target: Biomarker
    patient_ids: List[str]
    features: np.ndarray
    coefficients: np.ndarray
    intercept: float
    noise: np.ndarray
    deltas: np.ndarray
    noise_sd: float
    recorded: Optional[np.ndarray] = None

    @property
    def achievable_rmse(self):
        return self.noise_sd

    def reconstruct(self):
        return _linear_part(self.features, self.coefficients, self.intercept) + self.noise

    def to_frame(self):
        df = pd.DataFrame(self.features, columns=list(PLANTED_FEATURES))
        df.insert(0, "patient_id", self.patient_ids)
        df.insert(1, "target", self.target.value)
        df["noise"] = self.noise
        df["delta"] = self.deltas
        df["recorded"] = self.recorded if self.recorded is not None else True
        for name, coefficient in zip(PLANTED_FEATURES, self.coefficients):
            df[f"coef_{name}"] = coefficient
        df["intercept"] = self.intercept
        df["noise_sd"] = self.noise_sd
        return df


def plant_targets(cohort_features, coefficients, noise_sd, rng, intercept=0.0,
                  target=Biomarker.HBA1C, patient_ids=None, baselines=None):
    """
    delta_i = intercept + coefficients · features_i + noise_i mit noise_i ~ N(0, noise_sd²).

    Args:
        cohort_features (np.ndarray): (n, 5) generierende Merkmale.
        baselines: optionale Ausgangswerte; ohne Angabe 0.0, sodass follow-up == delta.

    Returns:
        tuple: (Liste von BiomarkerDelta, PlantedTruth)
    """
    features = np.asarray(cohort_features, dtype=np.float64)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    n = features.shape[0]
    noise = rng.normal(0.0, noise_sd, size=n) if noise_sd > 0 else np.zeros(n)
    deltas = _linear_part(features, coefficients, intercept) + noise
    baselines = np.zeros(n) if baselines is None else np.asarray(baselines, dtype=np.float64)
    # gespeichert wird followup − baseline; das kann vom geplanten Delta um eine Rundung abweichen
    records = [BiomarkerDelta(target, float(b), float(b + d)) for b, d in zip(baselines, deltas)]
    truth = PlantedTruth(
        target=target,
        patient_ids=list(patient_ids) if patient_ids is not None else [f"P{i + 1:03d}" for i in range(n)],
        features=features,
        coefficients=coefficients,
        intercept=float(intercept),
        noise=noise,
        deltas=deltas,
        noise_sd=float(noise_sd),
    )
    return records, truth


def refit_planted_coefficients(truth):
    """
    OLS-Refit der geplanten Beziehung.

    Returns:
        np.ndarray: [intercept, koeffizient_1, ..., koeffizient_5]
    """
    exog = sm.add_constant(truth.features, has_constant="add")
    return np.asarray(sm.OLS(truth.deltas, exog).fit().params)


def read_planted_truth(path):
    """Liest ``planted_truth.csv`` zurück (ein ``PlantedTruth`` pro Biomarker)."""
    path = Path(path)
    if not path.is_file():
        logger.error(f"Datei nicht gefunden: {path}")
        raise FileNotFoundError(f"Datei nicht gefunden: {path}")
    df = pd.read_csv(path, dtype={"patient_id": str}, float_precision="round_trip", encoding="utf-8")
    truths = {}
    for target_value, group in df.groupby("target", sort=False):
        first = group.iloc[0]
        truths[Biomarker.parse(target_value)] = PlantedTruth(
            target=Biomarker.parse(target_value),
            patient_ids=group["patient_id"].tolist(),
            features=group[list(PLANTED_FEATURES)].to_numpy(dtype=np.float64),
            coefficients=np.array([first[f"coef_{name}"] for name in PLANTED_FEATURES], dtype=np.float64),
            intercept=float(first["intercept"]),
            noise=group["noise"].to_numpy(dtype=np.float64),
            deltas=group["delta"].to_numpy(dtype=np.float64),
            noise_sd=float(first["noise_sd"]),
            recorded=group["recorded"].to_numpy(dtype=bool),
        )
    return truths


# =================================================================
# KOHORTE
# =================================================================

@dataclass(eq=False)
class _GeneratedPatient:
    state: PatientState
    cgm: CgmSeries
    activity: ActivitySeries
    features: TabularFeatures
    baselines: Dict[Biomarker, float]
    missing_followup: Dict[Biomarker, bool]


@dataclass(eq=False)
class SyntheticCohort:
    manifest_path: Path
    truths: Dict[Biomarker, PlantedTruth]
    states: List[PatientState] = field(default_factory=list)


class CohortGenerator:
    """Erzeugt eine vollständige synthetische Kohorte im Ingest-Format."""

    def __init__(self, config, max_workers=1):
        self.config = config
        self.max_workers = max_workers

    def _generate_patient(self, index):
        config = self.config
        rng = patient_rng(config.seed, index)
        state = draw_patient_state(index, config, rng)
        cgm = generate_cgm(state, config, rng)
        activity = generate_activity(state, config, rng)
        baselines = {marker: float(rng.uniform(*BASELINE_RANGES[marker])) for marker in Biomarker}
        features = draw_tabular_features(rng, baselines)
        missing = {marker: bool(rng.random() < config.missing_followup_rate) for marker in Biomarker}
        return _GeneratedPatient(state, cgm, activity, features, baselines, missing)

    def generate(self):
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            patients = list(pool.map(self._generate_patient, range(self.config.n_patients)))
        return patients

    def plant(self, patients):
        """Geplante Deltas aller Biomarker; der Achsenabschnitt zentriert die Deltas um 0."""
        ids = [p.state.patient_id for p in patients]
        matrix = np.vstack([planted_features(p.cgm, p.activity, p.features) for p in patients])
        results = {}
        for marker in Biomarker:
            scale = TARGET_SCALE[marker]
            coefficients = self.config.coefficients * scale
            intercept = -float(np.mean(matrix @ coefficients))
            records, truth = plant_targets(
                matrix, coefficients, self.config.noise_sd * scale, target_rng(self.config.seed, marker),
                intercept=intercept, target=marker, patient_ids=ids,
                baselines=[p.baselines[marker] for p in patients],
            )
            truth.recorded = np.array([not p.missing_followup[marker] for p in patients])
            results[marker] = (records, truth)
        return results

    def write(self, out_dir):
        out_dir = Path(out_dir)
        (out_dir / "cgm").mkdir(parents=True, exist_ok=True)
        (out_dir / "activity").mkdir(parents=True, exist_ok=True)
        patients = self.generate()
        planted = self.plant(patients)

        entries = []
        for i, patient in enumerate(patients):
            pid = patient.state.patient_id
            cgm_path = write_cgm_csv(patient.cgm, out_dir / "cgm" / f"{pid}.csv")
            activity_path = write_activity_csv(patient.activity, out_dir / "activity" / f"{pid}.csv")
            targets = {}
            for marker, (records, _) in planted.items():
                targets[marker] = patient.baselines[marker] if patient.missing_followup[marker] else records[i]
            entries.append({
                "patient_id": pid,
                "cgm": Path(cgm_path).relative_to(out_dir),
                "activity": Path(activity_path).relative_to(out_dir),
                "features": patient.features,
                "targets": targets,
            })
        manifest_path = write_manifest(entries, out_dir / "manifest.ini")

        truths = {marker: truth for marker, (_, truth) in planted.items()}
        pd.concat([t.to_frame() for t in truths.values()], ignore_index=True).to_csv(
            out_dir / "planted_truth.csv", index=False, encoding="utf-8"
        )
        logger.info(
            f"Synthetische Kohorte geschrieben: {len(patients)} Patienten nach {out_dir} "
            f"(Seed {self.config.seed}, noise_sd {self.config.noise_sd})"
        )
        return SyntheticCohort(Path(manifest_path), truths, [p.state for p in patients])


def generate_cohort(config, out_dir, max_workers=1):
    return CohortGenerator(config, max_workers).write(out_dir)
