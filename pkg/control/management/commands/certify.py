from django.core.management.base import BaseCommand, CommandError

from ...serializers import read_controller, read_estimate, write_json
from ...services.synthesis import certify_and_bound
from ._base import emit_json, load_cost, load_system, toolkit_errors


def _alpha(value: str) -> float | None:
    if value == "best":
        return None
    return float(value)


class Command(BaseCommand):
    help = "Small-gain certificate and cost upper bound for a controller against an estimate's uncertainty ball."

    def add_arguments(self, parser):
        parser.add_argument("controller", help="Synthesis result JSON or a JSON file holding a gain K.")
        parser.add_argument("estimate", help="Estimate JSON with the error radii.")
        parser.add_argument("--alpha", type=_alpha, default=0.5, help='Float in (0, 1) or "best".')
        parser.add_argument("--system", help="Model the response is computed on (defaults to the estimate).")
        parser.add_argument("--cost", help="JSON file with Q and R (identity weights when omitted).")
        parser.add_argument("--sigma-w", type=float, default=1.0)
        parser.add_argument("--out", help="Also write the certificate to this JSON file.")

    @toolkit_errors
    def handle(self, *args, **options):
        est = read_estimate(options["estimate"])
        system = load_system(options["system"]) if options["system"] else est.system
        cost = load_cost(options["cost"], system)
        certificate = certify_and_bound(
            system, read_controller(options["controller"]), est, options["alpha"], cost, options["sigma_w"]
        )
        payload = certificate.to_dict()
        if options["out"]:
            write_json(options["out"], payload)
        emit_json(self, payload)
        if not certificate.certified:
            raise CommandError(f"not certified: weighted norm {certificate.h_value:.6g} >= 1")
