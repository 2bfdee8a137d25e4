"""
Gemeinsame Fehlerhierarchie der Pipeline.

Die Unterscheidung zwischen Validierungs- und Laufzeitfehlern bildet direkt den
Exitcode-Vertrag des Kommandozeilen-Frontends ab (1 = ungültige Eingabe,
2 = Laufzeitfehler).
"""


class GlucoTrendError(Exception):
    """Wurzel aller projektspezifischen Fehler."""


class ValidationError(GlucoTrendError, ValueError):
    """Ungültige Eingabedaten, Dateien oder Konfiguration (Exitcode 1)."""


class PipelineRuntimeError(GlucoTrendError, RuntimeError):
    """Fehler während einer ansonsten gültig konfigurierten Berechnung (Exitcode 2)."""


class LengthMismatchError(ValidationError):
    """Zwei Eingaben, die gleich lang sein müssen, sind es nicht."""
