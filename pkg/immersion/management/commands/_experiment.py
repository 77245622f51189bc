import json
import logging
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from immersion.serializers import load_experiment_config
from immersion.services.exceptions import LaboratoryError, SolverAbort
from immersion.services.experiment_service import ExperimentService

logger = logging.getLogger(__name__)


class ExperimentCommand(BaseCommand):
    """
    Shared options and error handling of the laboratory commands.

    Subclasses set `name` and implement `run(service, options)`.
    """

    name = ""

    def add_arguments(self, parser):
        parser.add_argument(
            "--config",
            default=None,
            help="Experiment configuration (INI); defaults to configs/demo.ini",
        )
        parser.add_argument(
            "--out",
            default=None,
            help="Output bundle directory; defaults to OUTPUT_DIR/<command>",
        )
        parser.add_argument(
            "--jobs", type=int, default=None, help="Number of concurrent solves"
        )
        parser.add_argument("--seed", type=int, default=None, help="Override the seed")
        parser.add_argument(
            "--verbose", action="store_true", help="Enable verbose output"
        )

    def handle(self, *args, **options):
        if options["verbose"]:
            logging.getLogger().setLevel(logging.INFO)
            logging.getLogger("immersion").setLevel(logging.INFO)

        try:
            config = load_experiment_config(
                options["config"] or settings.DEFAULT_CONFIG, seed=options["seed"]
            )
            if options["jobs"] is not None and options["jobs"] < 1:
                raise CommandError("--jobs must be at least 1.", returncode=2)
            out_dir = Path(options["out"] or Path(settings.OUTPUT_DIR) / self.name)
            service = ExperimentService(config, out_dir, jobs=options["jobs"])
            summary = self.run(service, options)
        except LaboratoryError as e:
            logger.error(f"{self.name} exited with code {e.exit_code}: {e}")
            self.report_error(e)
            raise CommandError(f"{self.name} failed: {e}", returncode=e.exit_code)

        self.stdout.write(self.style.SUCCESS(f"=== {self.name} completed ==="))
        self.stdout.write(f"Run id: {summary['run_id']}")
        self.stdout.write(f"Bundle: {out_dir}")
        self.stdout.write(f"Files written: {service.stats['files_written']}")
        return None

    def report_error(self, error: LaboratoryError):
        """Write a machine-readable error description to stderr."""
        payload = {
            "error": type(error).__name__,
            "message": str(error),
            "exit_code": error.exit_code,
        }
        details = getattr(error, "details", None)
        if details:
            payload["details"] = details
        if isinstance(error, SolverAbort) and error.snapshot_path:
            payload["snapshot_path"] = error.snapshot_path
        self.stderr.write(json.dumps(payload, sort_keys=True, default=str))

    def run(self, service: ExperimentService, options) -> dict:
        raise NotImplementedError
