"""
Django management command to wait for the run registry database.
"""

import time

from django.core.management.base import BaseCommand, CommandError
from django.db import connections
from django.db.utils import OperationalError


class Command(BaseCommand):
    """Pause until the registry database accepts connections or the timeout expires."""

    help = "Wait for the run registry database to become available"

    def add_arguments(self, parser):
        parser.add_argument(
            "--timeout", type=float, default=60.0, help="Seconds to wait before giving up"
        )
        parser.add_argument(
            "--interval", type=float, default=1.0, help="Seconds between connection attempts"
        )

    def handle(self, *args, **options):
        self.stdout.write("Waiting for the registry database...")
        deadline = time.monotonic() + options["timeout"]
        connection = connections["default"]
        while True:
            try:
                connection.ensure_connection()
                break
            except OperationalError:
                if time.monotonic() >= deadline:
                    raise CommandError(
                        f"Registry database unavailable after {options['timeout']:g} seconds.",
                        returncode=4,
                    )
                self.stdout.write(
                    f"Database unavailable, waiting {options['interval']:g} seconds..."
                )
                time.sleep(options["interval"])

        self.stdout.write(self.style.SUCCESS("Registry database available"))
