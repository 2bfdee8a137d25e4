"""
Zentrale Laufkonfiguration.

Auflösungsreihenfolge: Dataclass-Defaults < Konfigurationsdatei < Kommandozeilen-Flags.
Die Konfigurationsdatei ist flacher Text mit einer Zuweisung ``key = value`` pro
Zeile; ``#`` leitet einen Kommentar ein, Leerzeilen werden ignoriert.
"""

import logging
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from typing import Optional, get_args, get_origin, Union

from src import __version__
from src.errors import ValidationError
from src.ingest import DEFAULT_MIN_CGM_LENGTH, Biomarker
from src.sync import TRUNCATION_MODES, SyncConfig
from src.synthgen import SynthConfig
from src.train import Experiment, TrainConfig

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE = "resolved_config.txt"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class ConfigError(ValidationError):
    pass


class ConflictingFlagsError(ConfigError):
    pass


@dataclass
class RunConfig:
    # Pfade
    out_dir: str = "runs"
    manifest: Optional[str] = None
    fused_dir: Optional[str] = None
    predictions: Optional[str] = None
    # Ingest / Synchronisation
    min_cgm_length: int = DEFAULT_MIN_CGM_LENGTH
    overlap_ratio: float = 0.5
    cgm_interval: int = 300
    activity_epoch: int = 30
    truncation: str = "earliest"
    # Netz / Training
    experiment: Experiment = Experiment.WIDE_AND_DEEP
    target: Biomarker = Biomarker.HBA1C
    epochs: int = 50
    folds: int = 5
    learning_rate: float = 1e-3
    hidden_dim: int = 64
    max_seq_len: Optional[int] = None
    wide_sigmoid: bool = False
    seed: int = 0
    # Generator
    n_patients: int = 50
    days: int = 7
    noise_sd: float = 0.3
    dropout_rate: float = 0.0
    glucose_noise_sd: float = 5.0
    circadian_amplitude: float = 10.0
    meals_per_day: int = 3
    missing_followup_rate: float = 0.0
    short_record_rate: float = 0.0
    # Laufzeit
    threads: int = 1
    log_level: str = "INFO"

    def validate(self):
        if self.truncation not in TRUNCATION_MODES:
            raise ConfigError(f"truncation muss einer von {TRUNCATION_MODES} sein")
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(f"log_level muss einer von {LOG_LEVELS} sein")
        if self.threads < 1:
            raise ConfigError("threads muss ≥ 1 sein")
        if self.wide_sigmoid and not self.experiment.uses_wide:
            raise ConflictingFlagsError(
                f"wide_sigmoid ist für {self.experiment.value} ohne Wide-Zweig nicht anwendbar"
            )
        # die Modul-Dataclasses prüfen ihre eigenen Invarianten
        try:
            self.train_config()
            self.sync_config()
            self.synth_config()
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            folds=self.folds,
            learning_rate=self.learning_rate,
            seed=self.seed,
            experiment=self.experiment,
            target=self.target,
            hidden_dim=self.hidden_dim,
            max_seq_len=self.max_seq_len,
            wide_sigmoid=self.wide_sigmoid,
            max_workers=self.threads,
        )

    def sync_config(self):
        return SyncConfig(
            overlap_ratio=self.overlap_ratio,
            cgm_interval=self.cgm_interval,
            activity_epoch=self.activity_epoch,
            truncation=self.truncation,
        )

    def synth_config(self):
        return SynthConfig(
            n_patients=self.n_patients,
            days=self.days,
            cgm_interval=self.cgm_interval,
            activity_epoch=self.activity_epoch,
            seed=self.seed,
            noise_sd=self.noise_sd,
            dropout_rate=self.dropout_rate,
            glucose_noise_sd=self.glucose_noise_sd,
            meals_per_day=self.meals_per_day,
            circadian_amplitude=self.circadian_amplitude,
            missing_followup_rate=self.missing_followup_rate,
            short_record_rate=self.short_record_rate,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _base_type(annotation):
    if get_origin(annotation) is Union:
        return next(a for a in get_args(annotation) if a is not type(None)), True
    return annotation, False


def coerce_value(key, raw):
    """Wandelt einen Rohwert (meist Text) anhand des Feldtyps von ``RunConfig`` um."""
    if key not in _FIELDS:
        raise ConfigError(f"Unbekannter Konfigurationsschlüssel {key!r}")
    base, optional = _base_type(_FIELDS[key].type)
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if base is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        if isinstance(base, type) and issubclass(base, Enum):
            return base.parse(text)
    except (ValueError, ValidationError) as exc:
        raise ConfigError(f"Wert {text!r} für {key!r} ist ungültig: {exc}") from exc
    return text


def parse_config_file(path):
    """
    Liest eine Konfigurationsdatei in ein Dict ``key -> Rohwert``.

    Raises:
        ConfigError: fehlende Datei, Zeile ohne ``=``, unbekannter Schlüssel.
    """
    path = Path(path)
    if not path.is_file():
        logger.error(f"Konfigurationsdatei nicht gefunden: {path}")
        raise ConfigError(f"Konfigurationsdatei nicht gefunden: {path}")
    values = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"{path}:{line_no}: erwartet 'key = value', erhalten {line!r}")
        key, value = (part.strip() for part in content.split("=", 1))
        if key == "toolkit_version":
            continue
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{line_no}: unbekannter Schlüssel {key!r}")
        values[key] = value
    return values


def resolve_config(config_path=None, overrides=None):
    """Defaults < Datei < Overrides (nur Werte ungleich ``None``)."""
    merged = {}
    if config_path is not None:
        merged.update(parse_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    config = RunConfig(**{key: coerce_value(key, raw) for key, raw in merged.items()})
    return config.validate()


def _format_value(value):
    if value is None:
        return "none"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config):
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}" for f in fields(config)]
    lines.append(f"toolkit_version = {__version__}")
    return "\n".join(lines) + "\n"


def write_resolved_config(config, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_CONFIG_FILE
    path.write_text(render_config(config), encoding="utf-8")
    return path
