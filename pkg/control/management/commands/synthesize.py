from django.core.management.base import BaseCommand, CommandError

from ...serializers import read_estimate, write_fir_coefficients, write_synthesis_result
from ...services.conic import BACKENDS
from ...services.experiments import MethodSpec
from ...services.synthesis import (
    AlphaSearch,
    FirResponse,
    GammaSearch,
    SynthesisStatus,
    cl_synthesis,
    fir_synthesis,
    nominal_lqr,
)
from ._base import add_output_argument, emit_json, load_cost, output_dir, toolkit_errors


class Command(BaseCommand):
    help = "Synthesize a controller for an estimate with error radii: nominal, cl, fir(L) or a fixed-gamma variant."

    def add_arguments(self, parser):
        parser.add_argument("estimate", help="Estimate JSON with A_hat, B_hat, eps_A and eps_B.")
        parser.add_argument("--method", default="cl")
        parser.add_argument("--cost", help="JSON file with Q and R (identity weights when omitted).")
        parser.add_argument("--alpha", type=float, default=None, help="Pin alpha instead of optimizing it.")
        parser.add_argument("--zero-slack", action="store_true", help="FIR programs only: force V = 0.")
        parser.add_argument("--gamma-tol", type=float, default=None)
        parser.add_argument("--backend", choices=sorted(BACKENDS), default=None)
        parser.add_argument("--name", default="synthesis")
        parser.add_argument("--allow-infeasible", action="store_true", help="Exit 0 even when no controller is found.")
        add_output_argument(parser)

    @toolkit_errors
    def handle(self, *args, **options):
        est = read_estimate(options["estimate"])
        cost = load_cost(options["cost"], est.system)
        try:
            method = MethodSpec.parse(options["method"])
        except ValueError as exc:
            raise CommandError(str(exc)) from exc

        if method.program == "nominal":
            result = nominal_lqr(est, cost)
        else:
            if method.fixed_gamma is not None:
                search = GammaSearch.fixed_at(method.fixed_gamma)
            elif options["gamma_tol"] is not None:
                search = GammaSearch(tol=options["gamma_tol"])
            else:
                search = GammaSearch()
            alpha = AlphaSearch(options["alpha"])
            if method.program == "cl":
                result = cl_synthesis(est, cost, search, alpha, backend=options["backend"])
            else:
                zero_slack = options["zero_slack"] or method.zero_slack
                result = fir_synthesis(
                    est, cost, method.L, search, alpha, zero_slack=zero_slack, backend=options["backend"]
                )

        directory = output_dir(options["output_dir"])
        paths = {"result": str(write_synthesis_result(result, directory / f"{options['name']}.json"))}
        if isinstance(result.controller, FirResponse):
            paths["coefficients"] = str(write_fir_coefficients(result.controller, directory / f"{options['name']}_fir.csv"))
        emit_json(
            self,
            {
                **paths,
                "method": result.method,
                "status": result.status.value,
                "gamma": result.gamma_star,
                "alpha": result.alpha,
                "robust_upper_bound": result.robust_upper_bound,
                "nominal_cost": result.nominal_cost,
                "diagnostics": result.diagnostics,
            },
        )
        if result.status is not SynthesisStatus.FEASIBLE and not options["allow_infeasible"]:
            raise CommandError(f"synthesis ended with status {result.status.value}: {result.diagnostics}")
