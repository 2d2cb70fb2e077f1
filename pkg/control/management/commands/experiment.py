from django.core.management.base import BaseCommand, CommandError

from ...forms import ExperimentConfigForm
from ...serializers import write_json
from ...services.experiments import run_experiment
from ...services.reporting import emit_report
from ._base import output_dir, toolkit_errors


class Command(BaseCommand):
    help = "Run a config-driven grid of (N, T, trial) cells and write the result CSV."

    def add_arguments(self, parser):
        parser.add_argument("config", help="Experiment JSON (schema version 1).")
        parser.add_argument("--seed", type=int, default=None, help="Override the config's master seed.")
        parser.add_argument("--jobs", type=int, default=None, help="Worker count (defaults to COARSE_ID_POOL_SIZE).")
        parser.add_argument("--output-dir", help="Overrides the config's output_dir and COARSE_ID_OUTPUT_DIR.")
        parser.add_argument("--report", action="store_true", help="Also write the summary CSV and default plots.")

    @toolkit_errors
    def handle(self, *args, **options):
        form = ExperimentConfigForm.from_file(options["config"])
        if not form.is_valid():
            raise CommandError(f"invalid config {options['config']}:\n{form.errors.as_text()}")
        cfg = form.to_config(seed=options["seed"])

        directory = output_dir(options["output_dir"] or (str(cfg.output_dir) if cfg.output_dir else None))
        result = run_experiment(cfg, n_jobs=options["jobs"], csv_path=directory / f"results_{cfg.run_id}.csv")
        write_json(directory / f"config_{cfg.run_id}.json", cfg.to_dict())
        self.stdout.write(f"Wrote {result.csv_path} ({len(result.rows)} rows)")

        if options["report"] and result.rows:
            for path in emit_report(result.rows, output_dir=directory / f"report_{cfg.run_id}"):
                self.stdout.write(f"Wrote {path}")
        for message in result.errors:
            self.stderr.write(f"cell error: {message}")
        if not result.ok:
            raise CommandError(
                f"{len(result.hard_failures)} cell(s) failed unexpectedly: " + "; ".join(result.hard_failures),
                returncode=2,
            )
        self.stdout.write(self.style.SUCCESS(f"Experiment {cfg.run_id} finished"))
