import json
from io import StringIO
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management import call_command

from immersion.models import ExperimentRun
from immersion.serializers import load_experiment_config
from immersion.services.bundles import read_checkpoint
from immersion.services.experiment_service import ExperimentService
from immersion.services.geometry import ScaledState, gauss_residual
from immersion.services.surface import load_obj, mesh_topology_report

from .test_settings import SAMPLE_CONFIG, RegistryTestCase


class LaboratoryIntegrationTest(RegistryTestCase):
    """Integration tests for the complete solve, sweep and reconstruct flow."""

    def setUp(self):
        """Set up configuration files and output directories."""
        super().setUp()
        self.config_path = self.write_config()
        self.trajectory_config = self.write_config(
            SAMPLE_CONFIG.replace("source = cylinder", "source = trajectory"),
            name="trajectory.ini",
        )

    def call(self, name, config, out, *args):
        stdout = StringIO()
        call_command(
            name,
            "--config",
            str(config),
            "--out",
            str(out),
            *args,
            stdout=stdout,
            stderr=StringIO(),
        )
        return stdout.getvalue()

    def test_solve_then_reconstruct(self):
        """A solve bundle feeds the reconstruction of its immersion."""
        # 1. Solve
        solve_out = self.tmp / "solve"
        self.call("solve", self.config_path, solve_out)

        summary = json.loads((solve_out / "summary.json").read_text())
        checkpoint = read_checkpoint(solve_out / "trajectory.bin")
        np.testing.assert_allclose(checkpoint.times, [5.0, 5.1, 5.2, 5.3, 5.4, 5.5])

        # 2. The CSV export agrees with the checkpoint
        frame = pd.read_csv(solve_out / "trajectory.csv")
        final = checkpoint.snapshots[-1]
        last = frame[frame["t"] == frame["t"].max()]
        np.testing.assert_array_equal(last["u"].to_numpy(), final.u)
        state = ScaledState(*(last[name].to_numpy() for name in ("l", "m", "n")))
        self.assertLess(np.max(np.abs(gauss_residual(state))), 1e-10)

        # 3. Reconstruct from the bundle
        reconstruct_out = self.tmp / "reconstruct"
        output = self.call(
            "reconstruct", self.trajectory_config, reconstruct_out, "--bundle", str(solve_out)
        )
        self.assertIn("First form residual", output)

        residuals = json.loads((reconstruct_out / "residuals.json").read_text())
        self.assertEqual(residuals["grid"], [summary["snapshots"], 33])
        report = mesh_topology_report(load_obj(reconstruct_out / "surface.obj"))
        self.assertTrue(report["manifold"])
        self.assertTrue(report["consistent_winding"])

        # 4. Both runs are in the registry
        self.assertEqual(
            sorted(ExperimentRun.objects.values_list("command", flat=True)),
            ["reconstruct", "solve"],
        )
        self.assertTrue(
            all(
                run.status == ExperimentRun.Status.COMPLETED
                for run in ExperimentRun.objects.all()
            )
        )

    def test_sweep_bundle(self):
        sweep_out = self.tmp / "sweep"
        self.call("sweep", self.config_path, sweep_out)

        report = json.loads((sweep_out / "sweep_report.json").read_text())
        entry = report["reports"][0]
        self.assertEqual(entry["mu_values"], [0.02, 0.01])
        self.assertEqual(entry["bank_version"], 1)
        self.assertLessEqual(entry["linf_max"], entry["linf_bound"])
        self.assertEqual(set(entry["weak_residuals"]), {"0.02", "0.01"})

        echo = json.loads((sweep_out / "config.json").read_text())
        self.assertEqual(echo["sections"]["sweep"]["mu_list"], [0.02, 0.01])
        self.assertIn(str(self.config_path), echo["checksums"])

        run = ExperimentRun.objects.get(command="sweep")
        self.assertEqual(run.summary["seeds"], [7])

    def test_reruns_are_reproducible(self):
        first_out = self.tmp / "first"
        second_out = self.tmp / "second"
        self.call("solve", self.config_path, first_out)
        self.call("solve", self.config_path, second_out)

        self.assertEqual(
            (first_out / "trajectory.bin").read_bytes(),
            (second_out / "trajectory.bin").read_bytes(),
        )
        self.assertEqual(ExperimentRun.objects.count(), 1)

    def test_reconstruction_reruns_are_byte_identical(self):
        solve_out = self.tmp / "solve"
        self.call("solve", self.config_path, solve_out)
        meshes = []
        for name in ("first", "second"):
            out = self.tmp / name
            self.call("reconstruct", self.trajectory_config, out, "--bundle", str(solve_out))
            meshes.append((out / "surface.obj").read_bytes())

        self.assertEqual(meshes[0], meshes[1])
        self.assertTrue(meshes[0].startswith(b"v "))


class DemoSweepTest(RegistryTestCase):
    """
    The demo sweep (J = 128, T1 = 2 T*, ten time units, four viscosities)
    for two data families.
    """

    def sweep(self, text=None):
        path = settings.DEFAULT_CONFIG
        if text is not None:
            path = self.write_config(text, name="demo.ini")
        service = ExperimentService(load_experiment_config(path), self.tmp / "sweep")
        return service.run_sweep()["reports"][0]

    def test_two_step_data(self):
        report = self.sweep()

        self.assertEqual(report["mu_values"], [1e-2, 5e-3, 2.5e-3, 1.25e-3])
        self.assertEqual(report["failures"], {})
        self.assertTrue(report["distances_decreasing"])
        self.assertTrue(report["residuals_decreasing"])
        self.assertTrue(report["max_residual_decreasing"])
        self.assertGreaterEqual(report["dissipation_slope"], -0.1)
        self.assertLessEqual(report["linf_max"], report["linf_bound"])

    def test_piecewise_data_bank_max_decreases(self):
        text = Path(settings.DEFAULT_CONFIG).read_text()
        report = self.sweep(text.replace("kind = two_step", "kind = pieces\npieces = 16"))

        self.assertEqual(report["failures"], {})
        self.assertEqual(len(report["max_residuals"]), 4)
        self.assertTrue(report["max_residual_decreasing"])
