from django.core.management.base import BaseCommand

from ...serializers import read_rollouts, write_estimate
from ...services.lti import LinearSystem, NoiseSpec, gramians
from ...services.sysid import (
    ErrorSource,
    EstimateWithError,
    RegressionMatrices,
    RegressionMode,
    data_dependent_bound,
    ls_estimate,
    theory_bound_independent,
)
from ._base import add_output_argument, emit_json, load_system, output_dir, toolkit_errors


class Command(BaseCommand):
    help = "Least-squares estimate of (A, B) from rollouts, optionally with closed-form error radii."

    def add_arguments(self, parser):
        parser.add_argument("rollouts", help="Rollout CSV (its JSON header must sit next to it).")
        parser.add_argument("--mode", choices=[m.value for m in RegressionMode], default=RegressionMode.FULL.value)
        parser.add_argument(
            "--errors",
            choices=["none", "data-dependent", "theory"],
            default="none",
            help="Closed-form radii; both bounds use the last-sample regression.",
        )
        parser.add_argument("--delta", type=float, default=0.05)
        parser.add_argument("--sigma-u", type=float, default=None)
        parser.add_argument("--sigma-w", type=float, default=None)
        parser.add_argument(
            "--system",
            default=None,
            help="True system for the Gramian of the theory bound; the estimate is used when omitted.",
        )
        parser.add_argument("--name", default="estimate.json")
        add_output_argument(parser)

    @toolkit_errors
    def handle(self, *args, **options):
        data = read_rollouts(options["rollouts"])
        recorded = data.noise or NoiseSpec()
        noise = NoiseSpec(
            recorded.sigma_u if options["sigma_u"] is None else options["sigma_u"],
            recorded.sigma_w if options["sigma_w"] is None else options["sigma_w"],
        )
        errors = options["errors"]
        mode = RegressionMode.LAST_SAMPLE if errors != "none" else RegressionMode(options["mode"])
        A_hat, B_hat = ls_estimate(data, mode)

        if errors == "data-dependent":
            bound = data_dependent_bound(RegressionMatrices.from_rollouts(data, mode), options["delta"], noise.sigma_w)
            est = EstimateWithError(A_hat, B_hat, bound.eps_A, bound.eps_B, ErrorSource.DATA)
        elif errors == "theory":
            reference = load_system(options["system"]) if options["system"] else LinearSystem(A_hat, B_hat)
            lambda_G = gramians(reference, noise, data.T).lambda_G
            eps_A, eps_B = theory_bound_independent(lambda_G, data.n, data.p, data.N, options["delta"], noise)
            est = EstimateWithError(A_hat, B_hat, eps_A, eps_B, ErrorSource.THEORY)
        else:
            est = EstimateWithError(A_hat, B_hat)

        path = write_estimate(est, output_dir(options["output_dir"]) / options["name"])
        emit_json(self, {"path": str(path), "mode": mode.value, **est.to_dict()})
