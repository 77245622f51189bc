# Generated by Django 5.2.5

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                ("id", models.AutoField(primary_key=True, serialize=False)),
                ("run_id", models.CharField(max_length=64, unique=True)),
                ("command", models.CharField(db_index=True, max_length=32)),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("completed", "Completed"),
                            ("failed", "Failed"),
                            ("aborted", "Aborted"),
                        ],
                        max_length=16,
                    ),
                ),
                ("seed", models.IntegerField(default=0)),
                ("config", models.JSONField(default=dict)),
                ("summary", models.JSONField(default=dict)),
                (
                    "bundle_path",
                    models.CharField(blank=True, default="", max_length=1024),
                ),
                ("code_version", models.CharField(max_length=32)),
                ("created_at", models.DateTimeField(auto_now_add=True)),
                ("updated_at", models.DateTimeField(auto_now=True)),
            ],
            options={
                "db_table": "experiment_runs",
                "ordering": ["-created_at"],
            },
        ),
    ]
