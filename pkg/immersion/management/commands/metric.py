from ._experiment import ExperimentCommand


class Command(ExperimentCommand):
    help = "Solve the metric ODE and report C1, T*, the comparison function and decay checks"
    name = "metric"

    def run(self, service, options):
        summary = service.run_metric()
        self.stdout.write(f"C1: {summary['C1']}")
        self.stdout.write(f"T*: {summary['T_star']}")
        if "decay_scan" in summary:
            self.stdout.write(f"Decay threshold p: {summary['decay_scan']['threshold']}")
        return summary
