from ._experiment import ExperimentCommand


class Command(ExperimentCommand):
    help = "Evaluate the logarithmic-decay sufficiency test over the configured p values"
    name = "verify_decay"

    def run(self, service, options):
        summary = service.run_verify_decay()
        for report in summary["reports"]:
            status = "satisfied" if report["satisfied"] else "fails"
            self.stdout.write(f"p = {report['p']:g}: {report['lhs']:.6f} < 2 {status}")
        self.stdout.write(f"Threshold p: {summary['threshold']}")
        return summary
