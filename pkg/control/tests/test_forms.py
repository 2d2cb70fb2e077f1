import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from control.forms import ExperimentConfigForm
from control.services.experiments import LAPLACIAN_EXAMPLE, MethodSpec


def document(**overrides):
    payload = {
        "schema_version": 1,
        "system": LAPLACIAN_EXAMPLE,
        "rollout_counts": [10, 20],
        "methods": ["nominal", "fir(4)"],
    }
    payload.update(overrides)
    return payload


class ExperimentConfigFormTests(SimpleTestCase):
    def test_minimal_document_uses_example_defaults(self):
        form = ExperimentConfigForm(document())
        self.assertTrue(form.is_valid(), form.errors)
        cfg = form.to_config()
        self.assertEqual(cfg.system_label, LAPLACIAN_EXAMPLE)
        self.assertEqual(cfg.horizons, (6,))
        self.assertEqual(cfg.error_sources, ("bootstrap",))
        self.assertEqual(cfg.bootstrap_trials, 500)
        self.assertEqual(cfg.methods, (MethodSpec("nominal"), MethodSpec("fir", L=4)))
        np.testing.assert_allclose(cfg.cost.Q, 1e-3 * np.eye(3))

    def test_explicit_system_gets_identity_weights(self):
        form = ExperimentConfigForm(document(system={"A": [[0.5]], "B": [[1.0]]}, horizon=4))
        self.assertTrue(form.is_valid(), form.errors)
        cfg = form.to_config(seed=9)
        self.assertEqual(cfg.system_label, "explicit")
        self.assertEqual(cfg.horizons, (4,))
        self.assertEqual(cfg.seed, 9)
        np.testing.assert_allclose(cfg.cost.R, [[1.0]])

    def test_zero_slack_fir_method_is_accepted(self):
        form = ExperimentConfigForm(document(methods=["fir(32,v0)", "fixed-gamma(0.99):fir(8,v0)"]))
        self.assertTrue(form.is_valid(), form.errors)
        methods = form.to_config().methods
        self.assertEqual(methods[0], MethodSpec("fir", L=32, zero_slack=True))
        self.assertEqual([method.label for method in methods], ["fir(32,v0)", "fixed-gamma(0.99):fir(8,v0)"])

    def test_run_id_survives_a_round_trip(self):
        cfg = ExperimentConfigForm(document(seed=3, error_sources=["oracle"])).to_config()
        again = ExperimentConfigForm(cfg.to_dict()).to_config()
        self.assertEqual(cfg.run_id, again.run_id)

    def test_rejects_unknown_keys(self):
        form = ExperimentConfigForm(document(colour="blue"))
        self.assertFalse(form.is_valid())
        self.assertIn("colour", form.non_field_errors()[0])

    def test_rejects_wrong_schema_version(self):
        form = ExperimentConfigForm(document(schema_version=2))
        self.assertFalse(form.is_valid())
        self.assertIn("schema_version", form.errors)

    def test_field_errors(self):
        cases = {
            "rollout_counts": {"rollout_counts": [10, 0]},
            "methods": {"methods": ["lqg"]},
            "error_sources": {"error_sources": ["psychic"]},
            "delta": {"delta": 1.5},
            "system": {"system": {"A": [[1.0, 2.0]], "B": [[1.0]]}},
            "horizons": {"horizon": 4, "horizons": [4, 6]},
            "cost": {"cost": {"Q": [[1.0]], "R": [[1.0]]}},
        }
        for field, overrides in cases.items():
            with self.subTest(field=field):
                form = ExperimentConfigForm(document(**overrides))
                self.assertFalse(form.is_valid())
                self.assertIn(field, form.errors)

    def test_to_config_raises_on_invalid_document(self):
        with self.assertRaises(ValidationError):
            ExperimentConfigForm(document(methods=[])).to_config()

    def test_from_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "config.json"
            path.write_text(json.dumps(document(trials=2)))
            self.assertEqual(ExperimentConfigForm.from_file(path).to_config().trials, 2)
            path.write_text("{not json")
            with self.assertRaises(ValidationError):
                ExperimentConfigForm.from_file(path)
