from django.db import models


class ExperimentRun(models.Model):
    """Registry entry for one command invocation and its output bundle."""

    class Meta:
        db_table = "experiment_runs"
        ordering = ["-created_at"]

    class Status(models.TextChoices):
        COMPLETED = "completed"
        FAILED = "failed"
        ABORTED = "aborted"

    id = models.AutoField(primary_key=True)
    run_id = models.CharField(max_length=64, unique=True)
    command = models.CharField(max_length=32, db_index=True)
    status = models.CharField(max_length=16, choices=Status.choices)
    seed = models.IntegerField(default=0)
    config = models.JSONField(default=dict)
    summary = models.JSONField(default=dict)
    bundle_path = models.CharField(max_length=1024, blank=True, default="")
    code_version = models.CharField(max_length=32)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    def __str__(self):
        return f"{self.command} {self.run_id} ({self.status})"
