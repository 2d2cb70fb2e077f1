from django.core.management.base import BaseCommand

from ...serializers import write_rollouts
from ...services.lti import NoiseSpec
from ...services.sysid import simulate_rollouts
from ._base import add_output_argument, load_system, output_dir, toolkit_errors


class Command(BaseCommand):
    help = "Simulate N Gaussian-excited rollouts of length T and write them as CSV plus a JSON header."

    def add_arguments(self, parser):
        parser.add_argument("--system", default="laplacian-example", help='"laplacian-example" or a JSON file with A and B.')
        parser.add_argument("--rollouts", "-N", type=int, required=True)
        parser.add_argument("--horizon", "-T", type=int, default=6)
        parser.add_argument("--sigma-u", type=float, default=1.0)
        parser.add_argument("--sigma-w", type=float, default=1.0)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--jobs", type=int, default=None)
        parser.add_argument("--no-noise", action="store_true", help="Do not record the noise realizations.")
        parser.add_argument("--name", default="rollouts")
        add_output_argument(parser)

    @toolkit_errors
    def handle(self, *args, **options):
        system = load_system(options["system"])
        noise = NoiseSpec(options["sigma_u"], options["sigma_w"])
        data = simulate_rollouts(
            system,
            noise,
            options["rollouts"],
            options["horizon"],
            options["seed"],
            record_noise=not options["no_noise"],
            n_jobs=options["jobs"],
        )
        csv_path, header_path = write_rollouts(data, output_dir(options["output_dir"]) / options["name"])
        self.stdout.write(self.style.SUCCESS(f"Wrote {csv_path} and {header_path}"))
