from dataclasses import replace

from django.core.management.base import BaseCommand, CommandError

from ...services.reporting import DEFAULT_PLOTS, emit_report, read_results
from ._base import add_output_argument, output_dir, toolkit_errors


class Command(BaseCommand):
    help = "Summarize a result CSV into quartile tables and SVG line plots."

    def add_arguments(self, parser):
        parser.add_argument("results", help="Result CSV written by the experiment command.")
        parser.add_argument(
            "--plots",
            nargs="+",
            choices=[spec.name for spec in DEFAULT_PLOTS],
            default=None,
            help="Subset of plots to draw (all by default).",
        )
        parser.add_argument("--methods", nargs="*", default=None, help="Only these methods; an empty list is an error.")
        parser.add_argument("--error-source", default=None)
        parser.add_argument("--feasible-only", action="store_true")
        parser.add_argument("--x", default="N", choices=["N", "T"], help="Grid column on the horizontal axis.")
        parser.add_argument("--stamp", action="store_true", help="Embed a generation timestamp in the SVGs.")
        add_output_argument(parser)

    @toolkit_errors
    def handle(self, *args, **options):
        rows = read_results(options["results"])
        if not rows:
            raise CommandError(f"{options['results']} has no result rows")
        chosen = [spec for spec in DEFAULT_PLOTS if options["plots"] is None or spec.name in options["plots"]]
        try:
            specs = [
                replace(
                    spec,
                    x=options["x"],
                    methods=None if options["methods"] is None else tuple(options["methods"]),
                    error_source=options["error_source"],
                    only_feasible=options["feasible_only"],
                )
                for spec in chosen
            ]
        except ValueError as exc:
            raise CommandError(str(exc)) from exc
        for path in emit_report(rows, specs, output_dir(options["output_dir"]), stamp=options["stamp"]):
            self.stdout.write(f"Wrote {path}")
