from ._experiment import ExperimentCommand


class Command(ExperimentCommand):
    help = "Run one vanishing-viscosity solve and write the trajectory bundle"
    name = "solve"

    def run(self, service, options):
        summary = service.run_solve()
        self.stdout.write(f"Window: [{summary['T1']:.6g}, {summary['T2']:.6g}]")
        self.stdout.write(f"Steps: {summary['steps']}")
        self.stdout.write(f"Min region margin: {summary['min_region_margin']:.3e}")
        self.stdout.write(f"Min hyperbolicity gap: {summary['min_gap']:.3e}")
        if not summary["region_tolerance_met"]:
            self.stdout.write(self.style.WARNING("Invariant region left beyond tolerance"))
        return summary
