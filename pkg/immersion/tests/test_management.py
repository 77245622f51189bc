import json
from io import StringIO
from unittest.mock import Mock, patch

from django.core.management import call_command
from django.core.management.base import CommandError
from django.db.utils import OperationalError
from django.test import override_settings

from immersion.services.exceptions import SolverAbort

from .test_settings import SAMPLE_CONFIG, RegistryTestCase


class ExperimentCommandTest(RegistryTestCase):
    """Test cases for the laboratory management commands."""

    def setUp(self):
        """Set up test data."""
        super().setUp()
        self.out = StringIO()
        self.err = StringIO()
        self.config_path = self.write_config()
        self.bundle = self.tmp / "bundle"

    def run_command(self, name, *args, config=None):
        call_command(
            name,
            "--config",
            str(config or self.config_path),
            "--out",
            str(self.bundle),
            *args,
            stdout=self.out,
            stderr=self.err,
        )
        return self.out.getvalue()

    def error_payload(self):
        return json.loads(self.err.getvalue())

    def test_metric_command(self):
        output = self.run_command("metric")

        self.assertIn("=== metric completed ===", output)
        self.assertIn("C1: ", output)
        self.assertIn("T*: ", output)
        self.assertIn(f"Bundle: {self.bundle}", output)
        self.assertTrue((self.bundle / "metric_summary.json").exists())

    def test_verify_decay_command(self):
        output = self.run_command("verify_decay")

        self.assertIn("p = 2: ", output)
        self.assertIn("< 2 fails", output)
        self.assertIn("< 2 satisfied", output)
        self.assertIn("Threshold p: 3.0", output)
        self.assertIn("Files written: 3", output)

    def test_solve_command(self):
        output = self.run_command("solve")

        self.assertIn("=== solve completed ===", output)
        self.assertIn("Window: [5, 5.5]", output)
        self.assertIn("Steps: ", output)
        self.assertIn("Min hyperbolicity gap: ", output)
        self.assertNotIn("Invariant region left", output)

    def test_sweep_command(self):
        output = self.run_command("sweep")

        self.assertIn("Seed 7: L1 distances [", output)
        self.assertIn("Seed 7: residuals decreasing per function ", output)
        self.assertNotIn("failed solves", output)
        self.assertTrue((self.bundle / "sweep_report.json").exists())

    def test_reconstruct_command(self):
        output = self.run_command("reconstruct")

        self.assertIn("First form residual: ", output)
        self.assertIn("Second form residual: ", output)
        self.assertTrue((self.bundle / "surface.obj").exists())

    def test_seed_override(self):
        self.run_command("verify_decay", "--seed", "11")

        echo = json.loads((self.bundle / "config.json").read_text())
        self.assertEqual(echo["seed"], 11)

    def test_missing_config(self):
        with self.assertRaises(CommandError) as context:
            self.run_command("metric", config=self.tmp / "missing.ini")

        self.assertEqual(context.exception.returncode, 4)
        self.assertEqual(self.error_payload()["error"], "MissingInputError")

    def test_invalid_config(self):
        path = self.write_config("[solver]\nmu = -1\n", name="invalid.ini")

        with self.assertRaises(CommandError) as context:
            self.run_command("solve", config=path)

        self.assertEqual(context.exception.returncode, 2)
        payload = self.error_payload()
        self.assertEqual(payload["error"], "ConfigurationError")
        self.assertEqual(payload["exit_code"], 2)
        self.assertIn("solver", payload["details"])

    def test_invalid_jobs(self):
        with self.assertRaises(CommandError) as context:
            self.run_command("sweep", "--jobs", "0")

        self.assertEqual(context.exception.returncode, 2)

    def test_reconstruct_missing_bundle(self):
        path = self.write_config(
            SAMPLE_CONFIG.replace("source = cylinder", "source = trajectory"),
            name="trajectory.ini",
        )

        with self.assertRaises(CommandError) as context:
            self.run_command("reconstruct", "--bundle", str(self.tmp / "nowhere"), config=path)

        self.assertEqual(context.exception.returncode, 4)
        self.assertIn("reconstruct failed", str(context.exception))

    @patch("immersion.management.commands._experiment.ExperimentService")
    def test_solver_abort_reports_snapshot(self, mock_service_class):
        """An aborted solve exits with code 3 and points at the diagnostic snapshot."""
        mock_service = Mock()
        mock_service.run_solve.side_effect = SolverAbort(
            "gap collapsed", snapshot_path="/bundle/abort_snapshot.bin"
        )
        mock_service_class.return_value = mock_service

        with self.assertRaises(CommandError) as context:
            self.run_command("solve")

        self.assertEqual(context.exception.returncode, 3)
        payload = self.error_payload()
        self.assertEqual(payload["error"], "SolverAbort")
        self.assertEqual(payload["snapshot_path"], "/bundle/abort_snapshot.bin")

    @patch("immersion.management.commands._experiment.ExperimentService")
    def test_region_warning(self, mock_service_class):
        mock_service = Mock(stats={"files_written": 5})
        mock_service.run_solve.return_value = {
            "run_id": "abc",
            "T1": 5.0,
            "T2": 5.5,
            "steps": 12,
            "min_region_margin": -1e-3,
            "min_gap": 0.05,
            "region_tolerance_met": False,
        }
        mock_service_class.return_value = mock_service

        output = self.run_command("solve")

        self.assertIn("Invariant region left beyond tolerance", output)
        self.assertIn("Run id: abc", output)

    def test_default_config_and_output(self):
        output_dir = self.tmp / "output"
        with override_settings(DEFAULT_CONFIG=self.config_path, OUTPUT_DIR=output_dir):
            call_command("verify_decay", stdout=self.out, stderr=self.err)

        self.assertTrue((output_dir / "verify_decay" / "decay_summary.json").exists())


class WaitForDbCommandTest(RegistryTestCase):
    """Test cases for the wait_for_db management command."""

    def setUp(self):
        super().setUp()
        self.out = StringIO()
        self.connection = Mock()
        patcher = patch(
            "immersion.management.commands.wait_for_db.connections",
            {"default": self.connection},
        )
        patcher.start()
        self.addCleanup(patcher.stop)

    def test_database_ready(self):
        call_command("wait_for_db", stdout=self.out)

        self.connection.ensure_connection.assert_called_once()
        self.assertIn("Registry database available", self.out.getvalue())

    @patch("immersion.management.commands.wait_for_db.time")
    def test_database_retry(self, mock_time):
        mock_time.monotonic.return_value = 0.0
        self.connection.ensure_connection.side_effect = [
            OperationalError(),
            OperationalError(),
            None,
        ]

        call_command("wait_for_db", "--interval", "0.5", stdout=self.out)

        self.assertEqual(self.connection.ensure_connection.call_count, 3)
        mock_time.sleep.assert_called_with(0.5)
        self.assertIn("waiting 0.5 seconds", self.out.getvalue())

    @patch("immersion.management.commands.wait_for_db.time")
    def test_timeout(self, mock_time):
        mock_time.monotonic.side_effect = [0.0, 1.0, 3.0]
        self.connection.ensure_connection.side_effect = OperationalError()

        with self.assertRaises(CommandError) as context:
            call_command("wait_for_db", "--timeout", "2", stdout=self.out)

        self.assertEqual(context.exception.returncode, 4)
        self.assertEqual(mock_time.sleep.call_count, 1)
