import json
import tempfile
from io import StringIO
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from control.serializers import write_json


def run(name, /, *args, **options):
    out = StringIO()
    call_command(name, *args, stdout=out, stderr=StringIO(), **options)
    return out.getvalue()


class PipelineCommandTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.tmp = Path(self._tmp.name)
        run("simulate", rollouts=20, horizon=6, seed=1, output_dir=str(self.tmp), name="data")
        self.rollouts = str(self.tmp / "data.csv")

    def test_simulate_writes_csv_and_header(self):
        self.assertTrue((self.tmp / "data.csv").exists())
        header = json.loads((self.tmp / "data.json").read_text())
        self.assertEqual((header["N"], header["T"], header["n"]), (20, 6, 3))

    def test_estimate_then_certify_a_nominal_controller(self):
        report = json.loads(run("estimate", self.rollouts, output_dir=str(self.tmp)))
        self.assertEqual(report["mode"], "full")
        self.assertEqual(report["eps_A"], 0.0)

        estimate = str(self.tmp / "estimate.json")
        synthesis = json.loads(run("synthesize", estimate, method="nominal", output_dir=str(self.tmp), name="lqr"))
        self.assertEqual(synthesis["status"], "feasible")

        certificate = json.loads(run("certify", synthesis["result"], estimate))
        self.assertTrue(certificate["certified"])
        self.assertEqual(certificate["h_value"], 0.0)

    def test_estimate_with_data_dependent_radii(self):
        report = json.loads(run("estimate", self.rollouts, errors="data-dependent", output_dir=str(self.tmp)))
        self.assertEqual(report["mode"], "last-sample")
        self.assertEqual(report["source"], "data-dependent")
        self.assertGreater(report["eps_A"], 0.0)

    def test_fir_synthesis_writes_coefficients(self):
        run("estimate", self.rollouts, output_dir=str(self.tmp))
        report = json.loads(run("synthesize", str(self.tmp / "estimate.json"), method="fir(4)", output_dir=str(self.tmp)))
        self.assertEqual(report["status"], "feasible")
        self.assertTrue(Path(report["coefficients"]).exists())

    def test_zero_slack_method_string(self):
        run("estimate", self.rollouts, output_dir=str(self.tmp))
        report = json.loads(run("synthesize", str(self.tmp / "estimate.json"), method="fir(4,v0)", output_dir=str(self.tmp)))
        self.assertEqual(report["method"], "fir(4,v0)")
        self.assertEqual(report["status"], "feasible")
        result = json.loads(Path(report["result"]).read_text())
        np.testing.assert_allclose(result["controller"]["V"], 0.0, atol=1e-6)

    def test_bootstrap(self):
        report = json.loads(run("bootstrap", self.rollouts, trials=10, output_dir=str(self.tmp)))
        self.assertEqual(report["percentile_index"], 10)
        self.assertGreater(report["eps_A"], 0.0)
        self.assertTrue((self.tmp / "bootstrap_trials.csv").exists())

    def test_certify_refuses_a_large_ball(self):
        run("estimate", self.rollouts, output_dir=str(self.tmp))
        estimate = json.loads((self.tmp / "estimate.json").read_text())
        wide = write_json(self.tmp / "wide.json", estimate | {"eps_A": 5.0, "eps_B": 5.0})
        synthesis = json.loads(run("synthesize", str(wide), method="nominal", output_dir=str(self.tmp)))
        with self.assertRaises(CommandError):
            run("certify", synthesis["result"], str(wide), alpha=None)

    def test_unknown_method(self):
        run("estimate", self.rollouts, output_dir=str(self.tmp))
        with self.assertRaises(CommandError):
            run("synthesize", str(self.tmp / "estimate.json"), method="lqg", output_dir=str(self.tmp))

    def test_missing_rollouts(self):
        with self.assertRaises(CommandError):
            run("estimate", str(self.tmp / "nope.csv"), output_dir=str(self.tmp))


class ExperimentCommandTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self._tmp.cleanup)
        self.tmp = Path(self._tmp.name)
        self.config = self.tmp / "config.json"
        self.config.write_text(
            json.dumps(
                {
                    "schema_version": 1,
                    "system": "laplacian-example",
                    "rollout_counts": [20],
                    "methods": ["nominal"],
                    "error_sources": ["oracle"],
                    "trials": 2,
                    "bootstrap_trials": 10,
                }
            )
        )

    def results_in(self, directory):
        (path,) = sorted(Path(directory).glob("results_*.csv"))
        return path

    def test_seeded_reruns_are_byte_identical(self):
        run("experiment", str(self.config), output_dir=str(self.tmp / "a"))
        run("experiment", str(self.config), output_dir=str(self.tmp / "b"))
        first = self.results_in(self.tmp / "a")
        second = self.results_in(self.tmp / "b")
        self.assertEqual(first.name, second.name)
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual(len(first.read_text().splitlines()), 3)

    def test_report_from_results(self):
        run("experiment", str(self.config), output_dir=str(self.tmp), report=True)
        self.assertTrue(list(self.tmp.glob("report_*/summary.csv")))

        output = run("report", str(self.results_in(self.tmp)), plots=["stabilized"], output_dir=str(self.tmp / "plots"))
        self.assertIn("stabilized.svg", output)
        self.assertTrue((self.tmp / "plots" / "summary.csv").exists())

    def test_report_rejects_an_empty_method_filter(self):
        run("experiment", str(self.config), output_dir=str(self.tmp))
        with self.assertRaises(CommandError):
            run("report", str(self.results_in(self.tmp)), methods=[], output_dir=str(self.tmp / "plots"))

    def test_invalid_config(self):
        self.config.write_text(json.dumps({"schema_version": 1, "system": "laplacian-example", "methods": ["lqg"]}))
        with self.assertRaises(CommandError):
            run("experiment", str(self.config), output_dir=str(self.tmp))
