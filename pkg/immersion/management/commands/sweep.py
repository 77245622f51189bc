from ._experiment import ExperimentCommand


class Command(ExperimentCommand):
    help = "Run the viscosity sweep and write the compactness report"
    name = "sweep"

    def run(self, service, options):
        summary = service.run_sweep()
        for report in summary["reports"]:
            distances = ", ".join(f"{entry['l1']:.4e}" for entry in report["distances"])
            self.stdout.write(f"Seed {report['seed']}: L1 distances [{distances}]")
            self.stdout.write(
                f"Seed {report['seed']}: residuals decreasing "
                f"per function {report['residuals_decreasing']}, "
                f"bank max {report['max_residual_decreasing']}"
            )
            if report["failures"]:
                self.stdout.write(
                    self.style.WARNING(
                        f"Seed {report['seed']}: {len(report['failures'])} failed solves"
                    )
                )
        return summary
