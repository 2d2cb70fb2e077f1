from django.core.management.base import BaseCommand

from ...serializers import read_estimate, read_rollouts, write_bootstrap_trials, write_estimate
from ...services.bootstrap import BootstrapConfig, bootstrap_errors
from ...services.lti import NoiseSpec
from ...services.sysid import ls_estimate
from ._base import add_output_argument, emit_json, output_dir, toolkit_errors


class Command(BaseCommand):
    help = "Parametric bootstrap of the error radii (eps_A, eps_B) around a least-squares estimate."

    def add_arguments(self, parser):
        parser.add_argument("rollouts")
        parser.add_argument("--estimate", help="Estimate JSON; the full least-squares fit is used when omitted.")
        parser.add_argument("--trials", "-M", type=int, default=500)
        parser.add_argument("--delta", type=float, default=0.05)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--sigma-u", type=float, default=None)
        parser.add_argument("--sigma-w", type=float, default=None)
        parser.add_argument("--estimate-noise", action="store_true", help="Plug in noise levels from the residuals.")
        parser.add_argument("--jobs", type=int, default=None)
        parser.add_argument("--name", default="bootstrap")
        add_output_argument(parser)

    @toolkit_errors
    def handle(self, *args, **options):
        data = read_rollouts(options["rollouts"])
        if options["estimate"]:
            base = read_estimate(options["estimate"])
            estimate = (base.A_hat, base.B_hat)
        else:
            estimate = ls_estimate(data)

        noise = None
        if options["sigma_u"] is not None or options["sigma_w"] is not None:
            recorded = data.noise or NoiseSpec()
            noise = NoiseSpec(
                recorded.sigma_u if options["sigma_u"] is None else options["sigma_u"],
                recorded.sigma_w if options["sigma_w"] is None else options["sigma_w"],
            )
        cfg = BootstrapConfig(
            trials=options["trials"],
            delta=options["delta"],
            seed=options["seed"],
            noise=noise,
            estimate_noise=options["estimate_noise"],
        )
        result = bootstrap_errors(data, estimate, cfg, n_jobs=options["jobs"])

        directory = output_dir(options["output_dir"])
        est_path = write_estimate(result.as_estimate(*estimate), directory / f"{options['name']}.json")
        trials_path = write_bootstrap_trials(result, directory / f"{options['name']}_trials.csv")
        emit_json(
            self,
            {
                "estimate": str(est_path),
                "trials": str(trials_path),
                "eps_A": result.eps_A,
                "eps_B": result.eps_B,
                "percentile_index": result.percentile_index,
                "sigma_u": result.noise.sigma_u,
                "sigma_w": result.noise.sigma_w,
            },
        )
