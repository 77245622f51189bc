from ._experiment import ExperimentCommand


class Command(ExperimentCommand):
    help = "Reconstruct the surface from its fundamental forms and export an OBJ mesh"
    name = "reconstruct"

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            "--bundle",
            default=None,
            help="Solve bundle to reconstruct from (overrides [reconstruct] bundle)",
        )

    def run(self, service, options):
        summary = service.run_reconstruct(bundle=options["bundle"])
        residuals = summary["residuals"]
        self.stdout.write(f"First form residual: {residuals['first_max']:.3e}")
        self.stdout.write(f"Second form residual: {residuals['second_max']:.3e}")
        return summary
