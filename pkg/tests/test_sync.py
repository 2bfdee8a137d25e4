import unittest
import os
import sys
import tempfile
import logging
from pathlib import Path

import numpy as np

# --- PFAD-KONFIGURATION ---
current_dir = os.path.dirname(os.path.abspath(__file__))
project_root = os.path.abspath(os.path.join(current_dir, '..'))

if project_root not in sys.path:
    sys.path.insert(0, project_root)

from src.ingest import ActivitySeries, CgmSeries
from src.sync import (
    EmptyAfterTrimError,
    EmptyWindowError,
    FusedSequence,
    InsufficientActivitySamplesError,
    NonPositiveInputError,
    SensorSynchronizer,
    SyncConfig,
    average_window,
    compute_window_size,
    nearest_activity_window,
    read_fused_csv,
    trim_uncovered_cgm,
    truncate_cohort,
    write_fused_csv,
)


def brute_force_fuse(cgm, act, w):
    """Unabhängiges Orakel: alle Epochen nach (|θ − t|, θ) sortieren, die w besten mitteln."""
    rows = []
    first, last = act.timestamps[0], act.timestamps[-1]
    for t, g in zip(cgm.timestamps.tolist(), cgm.glucose.tolist()):
        if t < first or t > last:
            continue
        ranked = sorted(range(len(act)), key=lambda j: (abs(int(act.timestamps[j]) - t), int(act.timestamps[j])))
        chosen = sorted(ranked[:w])
        total = [0.0] * 8
        for j in chosen:
            for k in range(8):
                total[k] += float(act.values[j, k])
        rows.append([g] + [v / w for v in total])
    return np.array(rows)


def _activity(timestamps, values=None):
    timestamps = np.asarray(timestamps)
    if values is None:
        values = np.zeros((timestamps.size, 8))
    return ActivitySeries("P1", timestamps, values, 30)


class TestWindowSize(unittest.TestCase):

    def test_default_configuration(self):
        """Unit Test: (5 min / 30 s) / 50 % = 20."""
        self.assertEqual(compute_window_size(300, 30, 0.5), 20)
        self.assertEqual(SyncConfig().window_size, 20)

    def test_without_overlap(self):
        self.assertEqual(compute_window_size(300, 30, 1.0), 10)
        self.assertEqual(compute_window_size(120, 30, 0.5), 8)

    def test_rounding_half_away_from_zero(self):
        """Unit Test: Quotient 2.5 wird auf 3 gerundet, nicht auf die gerade Zahl 2."""
        self.assertEqual(compute_window_size(75, 30, 1.0), 3)

    def test_invalid_inputs(self):
        with self.assertRaises(NonPositiveInputError):
            compute_window_size(0, 30, 0.5)
        with self.assertRaises(NonPositiveInputError):
            compute_window_size(300, 30, 0.0)
        with self.assertRaises(NonPositiveInputError):
            compute_window_size(20, 30, 0.5)


class TestWindowPrimitives(unittest.TestCase):

    def test_trim_keeps_covered_points(self):
        """Unit Test: CGM bei 0/300/600, Aktivität in [100, 500] → nur t = 300 bleibt."""
        cgm = CgmSeries("P1", [0, 300, 600], [100.0, 110.0, 120.0])
        act = _activity([100, 130, 500])
        trimmed = trim_uncovered_cgm(cgm, act)
        self.assertEqual(trimmed.timestamps.tolist(), [300])
        self.assertEqual(trimmed.glucose.tolist(), [110.0])

    def test_trim_identity_when_covered(self):
        cgm = CgmSeries("P1", [300, 600], [100.0, 110.0])
        act = _activity(np.arange(0, 901, 30))
        self.assertIs(trim_uncovered_cgm(cgm, act), cgm)

    def test_trim_disjoint(self):
        cgm = CgmSeries("P1", [0, 300], [100.0, 110.0])
        act = _activity([1000, 1030])
        with self.assertRaises(EmptyAfterTrimError):
            trim_uncovered_cgm(cgm, act)

    def test_nearest_window_centered(self):
        """Unit Test: θ ∈ {0,30,60,90,120}, t = 60, w = 3 → {30, 60, 90}."""
        act = _activity([0, 30, 60, 90, 120])
        self.assertEqual(nearest_activity_window(act, 60, 3).tolist(), [1, 2, 3])
        self.assertEqual(nearest_activity_window(act, 60, 5).tolist(), [0, 1, 2, 3, 4])

    def test_nearest_window_tie_prefers_earlier(self):
        """Unit Test: t = 45 liegt genau zwischen 30 und 60; der frühere Zeitpunkt gewinnt."""
        act = _activity([0, 30, 60, 90, 120])
        self.assertEqual(nearest_activity_window(act, 45, 1).tolist(), [1])

    def test_nearest_window_at_boundary(self):
        """Unit Test: Am Rand wird einseitig aufgefüllt."""
        act = _activity([0, 30, 60, 90, 120])
        self.assertEqual(nearest_activity_window(act, 0, 3).tolist(), [0, 1, 2])
        self.assertEqual(nearest_activity_window(act, 500, 2).tolist(), [3, 4])

    def test_nearest_window_insufficient(self):
        act = _activity([0, 30])
        with self.assertRaises(InsufficientActivitySamplesError):
            nearest_activity_window(act, 0, 3)

    def test_average_window(self):
        """Unit Test: Mittelwerte der Fensterfelder."""
        values = np.zeros((4, 8))
        values[:, 3] = [1, 2, 3, 10]
        values[0, 0], values[1, 0] = 2.0, 4.0
        act = _activity([0, 30, 60, 90], values)

        self.assertEqual(average_window(act, [0, 1, 2, 3])[3], 4.0)
        pair = average_window(act, [0, 1])
        self.assertEqual(pair[0], 3.0)
        self.assertEqual(pair[3], 1.5)

    def test_average_of_constant_vector(self):
        v = np.arange(1.0, 9.0)
        act = _activity([0, 30, 60], np.tile(v, (3, 1)))
        np.testing.assert_array_equal(average_window(act, [0, 1, 2]), v)

    def test_average_empty_window(self):
        with self.assertRaises(EmptyWindowError):
            average_window(_activity([0]), [])


class TestSensorSynchronizer(unittest.TestCase):
    """
    Test-Suite für die Fusion ganzer Patientenreihen.
    """

    def setUp(self):
        logging.disable(logging.CRITICAL)

    def tearDown(self):
        logging.disable(logging.NOTSET)

    def test_constant_activity(self):
        """Unit Test: Konstante Aktivität v → jeder Fused-Sample trägt (glucose_i, v)."""
        v = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
        act = _activity(np.arange(0, 1201, 30), np.tile(v, (41, 1)))
        cgm = CgmSeries("P1", [300, 600, 900], [100.0, 120.0, 140.0])

        fused = SensorSynchronizer(SyncConfig()).fuse_patient(cgm, act)

        self.assertEqual(len(fused), 3)
        np.testing.assert_array_equal(fused.glucose, cgm.glucose)
        for row in fused.activity:
            np.testing.assert_array_equal(row, v)
        sample = fused.sample(1)
        self.assertEqual((sample.timestamp, sample.glucose), (600, 120.0))
        self.assertEqual(sample.avg_activity, tuple(v.tolist()))

    def test_wide_window_is_logged(self):
        """
        Unit Test: Ein Fenster über eine Aktivitätslücke wird gewarnt.

        |W| = 4 → Nominalbreite 90 s. Um t = 500 liegen die vier nächsten Epochen
        bei 0, 30, 60 und 1000 (Gleichstand 0/1000 → frühere); Spannweite 1000 s > 180 s.
        """
        logging.disable(logging.NOTSET)
        config = SyncConfig(overlap_ratio=1.0, cgm_interval=120, activity_epoch=30)
        act = _activity([0, 30, 60, 1000, 1030, 1060])
        cgm = CgmSeries("P1", [30, 500, 1030], [100.0, 110.0, 120.0])

        with self.assertLogs("src.sync", level="WARNING") as captured:
            fused = SensorSynchronizer(config).fuse_patient(cgm, act)

        self.assertEqual(len(fused), 3)
        self.assertEqual(len(captured.records), 1)
        self.assertIn("Aktivitätslücken", captured.output[0])
        self.assertIn("P1", captured.output[0])

    def test_matches_brute_force_oracle(self):
        """
        Integrationstest 1: Zufallsinstanz gegen das Brute-Force-Orakel.

        5 CGM-Punkte, 60 Epochen mit unregelmäßigen Abständen, w = 4.
        """
        rng = np.random.default_rng(42)
        act_ts = np.cumsum(rng.integers(20, 45, size=60))
        act = _activity(act_ts, rng.uniform(0, 30, size=(60, 8)))
        cgm_ts = np.sort(rng.choice(np.arange(0, int(act_ts[-1]) + 200), size=5, replace=False))
        cgm = CgmSeries("P1", cgm_ts, rng.uniform(70, 200, size=5))

        config = SyncConfig(overlap_ratio=1.0, cgm_interval=120, activity_epoch=30)
        self.assertEqual(config.window_size, 4)
        fused = SensorSynchronizer(config).fuse_patient(cgm, act)
        oracle = brute_force_fuse(cgm, act, 4)

        self.assertEqual(fused.values.shape, oracle.shape)
        np.testing.assert_allclose(fused.values, oracle, rtol=1e-12, atol=0.0)

    def test_oracle_equivalence_default_window(self):
        """Integrationstest 2: Standardfenster |W| = 20 über 300 Epochen."""
        rng = np.random.default_rng(7)
        act = _activity(np.arange(300) * 30, rng.uniform(0, 30, size=(300, 8)))
        cgm_ts = np.arange(20) * 300 + 150
        cgm = CgmSeries("P1", cgm_ts, rng.uniform(70, 200, size=20))

        fused = SensorSynchronizer().fuse_patient(cgm, act)
        np.testing.assert_allclose(fused.values, brute_force_fuse(cgm, act, 20), rtol=1e-12, atol=0.0)

    def test_consecutive_windows_overlap_by_half(self):
        """Unit Test: Bei lückenloser Aktivität teilen aufeinanderfolgende Fenster genau 10 Epochen."""
        act = _activity(np.arange(200) * 30)
        first = set(nearest_activity_window(act, 1500, 20).tolist())
        second = set(nearest_activity_window(act, 1800, 20).tolist())
        self.assertEqual(len(first & second), 10)

    def test_shift_invariance(self):
        """Unit Test: Ein gemeinsamer Zeitversatz ändert die fusionierten Werte nicht (bitgenau)."""
        rng = np.random.default_rng(5)
        values = rng.uniform(0, 30, size=(100, 8))
        act_ts = np.arange(100) * 30
        cgm_ts = np.arange(8) * 300 + 60
        glucose = rng.uniform(70, 200, size=8)

        sync = SensorSynchronizer()
        base = sync.fuse_patient(CgmSeries("P1", cgm_ts, glucose), _activity(act_ts, values))
        offset = 1_600_000_000
        shifted = sync.fuse_patient(
            CgmSeries("P1", cgm_ts + offset, glucose), _activity(act_ts + offset, values)
        )
        np.testing.assert_array_equal(base.values, shifted.values)
        np.testing.assert_array_equal(base.timestamps + offset, shifted.timestamps)

    def test_output_length_equals_trimmed_length(self):
        act = _activity(np.arange(100) * 30)
        cgm = CgmSeries("P1", np.arange(-3, 20) * 300, np.full(23, 100.0))
        fused = SensorSynchronizer().fuse_patient(cgm, act)
        self.assertEqual(len(fused), len(trim_uncovered_cgm(cgm, act)))
        self.assertTrue(set(fused.timestamps.tolist()) <= set(cgm.timestamps.tolist()))


class TestTruncation(unittest.TestCase):

    def setUp(self):
        logging.disable(logging.CRITICAL)

    def tearDown(self):
        logging.disable(logging.NOTSET)

    @staticmethod
    def _seq(pid, n):
        glucose = np.arange(1, n + 1, dtype=float)
        return FusedSequence(pid, np.arange(n) * 300, glucose, np.zeros((n, 8)))

    def test_common_length(self):
        """Unit Test: Längen {1445, 1500, 2016} → alle 1445."""
        seqs = [self._seq("A", 1445), self._seq("B", 1500), self._seq("C", 2016)]
        truncated, length = truncate_cohort(seqs)
        self.assertEqual(length, 1445)
        self.assertEqual([len(s) for s in truncated], [1445, 1445, 1445])

    def test_earliest_prefix(self):
        """Unit Test: Längen {3, 5} → die zweite Sequenz behält v1..v3."""
        truncated, _ = truncate_cohort([self._seq("A", 3), self._seq("B", 5)])
        self.assertEqual(truncated[1].glucose.tolist(), [1.0, 2.0, 3.0])

    def test_latest_suffix(self):
        truncated, _ = truncate_cohort([self._seq("A", 3), self._seq("B", 5)], mode="latest")
        self.assertEqual(truncated[1].glucose.tolist(), [3.0, 4.0, 5.0])

    def test_single_sequence_unchanged(self):
        truncated, length = truncate_cohort([self._seq("A", 4)])
        self.assertEqual(length, 4)
        self.assertEqual(truncated[0].glucose.tolist(), [1.0, 2.0, 3.0, 4.0])

    def test_fused_csv_round_trip(self):
        """Unit Test: Fused-CSV mit Header timestamp,glucose,dx,...,i_off."""
        rng = np.random.default_rng(1)
        seq = FusedSequence("P7", np.arange(6) * 300, rng.uniform(70, 200, 6), rng.uniform(0, 30, (6, 8)))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_fused_csv(seq, Path(tmp) / "fused_P7.csv")
            header = path.read_text(encoding="utf-8").splitlines()[0]
            loaded = read_fused_csv(path, "P7")

        self.assertEqual(header, "timestamp,glucose,dx,dy,dz,steps,i_sit,i_std,i_lie,i_off")
        np.testing.assert_array_equal(loaded.values, seq.values)
        self.assertEqual(loaded.patient_id, "P7")


if __name__ == '__main__':
    unittest.main()
