import unittest
import io
import os
import sys
import tempfile
import logging
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

import pandas as pd

# --- PFAD-KONFIGURATION ---
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.abspath(os.path.join(current_dir, '..'))

if project_root not in sys.path:
    sys.path.insert(0, project_root)

import app
from src import __version__
from src.config import RESOLVED_CONFIG_FILE

# Kleinstmögliche Pipeline: ein Tag Daten, winziges Netz, zwei Epochen
SMOKE_FLAGS = [
    "--n-patients", "10", "--days", "1", "--min-cgm-length", "200",
    "--hidden-dim", "4", "--max-seq-len", "24", "--epochs", "2", "--folds", "2", "--seed", "7",
]


class TestCommandLine(unittest.TestCase):
    """
    Integrationstests für das Kommandozeilen-Frontend und den Exitcode-Vertrag.
    """

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        logging.disable(logging.CRITICAL)

    def tearDown(self):
        self.tmp.cleanup()
        logging.disable(logging.NOTSET)

    def _run(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = app.main(list(argv))
        return code, out.getvalue(), err.getvalue()

    def test_pipeline_smoke(self):
        """
        Integrationstest 1: synth → sync → train → evaluate in einem Aufruf.

        Erwartung: Exitcode 0, Report vorhanden, aufgelöste Konfiguration in jedem Stufenverzeichnis.
        """
        out_dir = self.dir / "run"
        code, _, _ = self._run("pipeline", *SMOKE_FLAGS, "--out-dir", str(out_dir))

        self.assertEqual(code, 0)
        report = pd.read_csv(out_dir / "report.csv")
        self.assertEqual(len(report), 1)
        self.assertEqual(report.loc[0, "n_records"], 10)
        self.assertEqual(report.loc[0, "signal"], "C, A, D, L")
        self.assertTrue((out_dir / "report.txt").is_file())
        self.assertTrue((out_dir / "train" / "fold_0.ckpt").is_file())
        self.assertTrue((out_dir / "fused" / "cohort_summary.csv").is_file())
        for stage in ("", "synth", "fused", "train"):
            text = (out_dir / stage / RESOLVED_CONFIG_FILE).read_text(encoding="utf-8")
            self.assertIn(f"toolkit_version = {__version__}", text)

    def test_pipeline_is_deterministic(self):
        """Integrationstest 2: Zwei identische Läufe → bytegleiche Report-CSVs."""
        first, second = self.dir / "a", self.dir / "b"
        self.assertEqual(self._run("pipeline", *SMOKE_FLAGS, "--out-dir", str(first))[0], 0)
        self.assertEqual(self._run("pipeline", *SMOKE_FLAGS, "--out-dir", str(second))[0], 0)
        self.assertEqual((first / "report.csv").read_bytes(), (second / "report.csv").read_bytes())

    def test_stages_one_by_one(self):
        """Integrationstest 3: Einzelne Subcommands verketten sich über ihre Artefakte."""
        synth_dir, fused_dir, train_dir = self.dir / "synth", self.dir / "fused", self.dir / "train"
        self.assertEqual(self._run(
            "synth", "--n-patients", "6", "--days", "1", "--seed", "2", "--out-dir", str(synth_dir)
        )[0], 0)
        manifest = synth_dir / "manifest.ini"

        code, stdout, _ = self._run(
            "ingest", "--manifest", str(manifest), "--min-cgm-length", "200", "--out-dir", str(self.dir / "ingest")
        )
        self.assertEqual(code, 0)
        self.assertIn("cohort.csv", stdout)

        self.assertEqual(self._run(
            "sync", "--manifest", str(manifest), "--min-cgm-length", "200", "--out-dir", str(fused_dir)
        )[0], 0)
        self.assertTrue((fused_dir / "inputs.csv").is_file())
        self.assertEqual(len(list(fused_dir.glob("fused_*.html"))), 1)

        self.assertEqual(self._run(
            "train", "--fused-dir", str(fused_dir), "--experiment", "WideOnly", "--epochs", "2",
            "--folds", "3", "--out-dir", str(train_dir),
        )[0], 0)
        predictions = pd.read_csv(train_dir / "predictions.csv")
        self.assertEqual(len(predictions), 6)

        report_path = self.dir / "wide.csv"
        self.assertEqual(self._run(
            "evaluate", "--predictions", str(train_dir / "predictions.csv"), "--out", str(report_path),
            "--out-dir", str(self.dir / "eval"),
        )[0], 0)
        self.assertEqual(pd.read_csv(report_path).loc[0, "size"], "[6 × 8]")

        code, stdout, _ = self._run(
            "report", "--reports", str(report_path), "--predictions", str(train_dir / "predictions.csv"),
            "--out-dir", str(self.dir / "report"),
        )
        self.assertEqual(code, 0)
        self.assertIn("D, L", stdout)
        self.assertTrue((self.dir / "report" / "predictions.html").is_file())

    def test_unknown_flag(self):
        """Unit Test: Ein unbekanntes Flag endet mit Exitcode 1 und Usage-Text."""
        code, _, stderr = self._run("train", "--epochz", "3")
        self.assertEqual(code, 1)
        self.assertIn("usage", stderr)

    def test_unknown_subcommand(self):
        code, _, _ = self._run("fly")
        self.assertEqual(code, 1)

    def test_conflicting_flags(self):
        code, _, _ = self._run(
            "train", "--experiment", "DeepCgmOnly", "--wide-sigmoid", "--out-dir", str(self.dir / "x")
        )
        self.assertEqual(code, 1)

    def test_missing_manifest(self):
        code, _, _ = self._run("ingest", "--manifest", str(self.dir / "fehlt.ini"), "--out-dir", str(self.dir))
        self.assertEqual(code, 1)

    def test_version(self):
        code, stdout, _ = self._run("--version")
        self.assertEqual(code, 0)
        self.assertIn(__version__, stdout)


if __name__ == '__main__':
    unittest.main()
