import csv
import json
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from control.exceptions import DimensionError
from control.serializers import (
    json_safe,
    read_controller,
    read_json,
    read_rollouts,
    write_bootstrap_trials,
    write_fir_coefficients,
    write_json,
    write_rollouts,
)
from control.services.bootstrap import BootstrapResult
from control.services.lti import LinearSystem, NoiseSpec, StateFeedbackGain, laplacian_example
from control.services.synthesis import FirResponse
from control.services.sysid import simulate_rollouts


class JsonTests(SimpleTestCase):
    def test_non_finite_floats_become_strings(self):
        self.assertEqual(json_safe({"a": [math.inf, -math.inf, np.float64(1.5)]}), {"a": ["inf", "-inf", 1.5]})
        self.assertEqual(json_safe(math.nan), "nan")

    def test_invalid_json(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "broken.json"
            path.write_text("{")
            with self.assertRaises(DimensionError):
                read_json(path)


class RolloutFileTests(SimpleTestCase):
    def setUp(self):
        system, _, noise = laplacian_example()
        self.data = simulate_rollouts(system, noise, 3, 4, seed=2)

    def test_files_reproduce_the_arrays(self):
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, header_path = write_rollouts(self.data, Path(tmp) / "data")
            loaded = read_rollouts(csv_path)
            header = json.loads(header_path.read_text())
        np.testing.assert_array_equal(loaded.states, self.data.states)
        np.testing.assert_array_equal(loaded.inputs, self.data.inputs)
        np.testing.assert_array_equal(loaded.noises, self.data.noises)
        self.assertEqual(loaded.noise, NoiseSpec(1.0, 1.0))
        self.assertEqual(header["N"], 3)
        self.assertTrue(header["noises"])

    def test_final_state_row_has_blank_inputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, _ = write_rollouts(self.data, Path(tmp) / "data.csv")
            with csv_path.open(newline="") as handle:
                rows = list(csv.DictReader(handle))
        self.assertEqual(len(rows), 3 * 5)
        self.assertEqual(rows[4]["t"], "4")
        self.assertEqual(rows[4]["u_1"], "")
        self.assertNotEqual(rows[3]["u_1"], "")

    def test_columns_are_numbered_from_one(self):
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, _ = write_rollouts(self.data, Path(tmp) / "data.csv")
            with csv_path.open(newline="") as handle:
                header = next(csv.reader(handle))
        self.assertEqual(
            header,
            ["rollout", "t", "x_1", "x_2", "x_3", "u_1", "u_2", "u_3", "w_1", "w_2", "w_3"],
        )

    def test_columns_without_recorded_noise(self):
        system, _, noise = laplacian_example()
        data = simulate_rollouts(system, noise, 2, 3, seed=2, record_noise=False)
        with tempfile.TemporaryDirectory() as tmp:
            csv_path, _ = write_rollouts(data, Path(tmp) / "data.csv")
            with csv_path.open(newline="") as handle:
                header = next(csv.reader(handle))
            loaded = read_rollouts(csv_path)
        self.assertEqual(header[-1], "u_3")
        self.assertIsNone(loaded.noises)

    def test_unknown_schema(self):
        with tempfile.TemporaryDirectory() as tmp:
            _, header_path = write_rollouts(self.data, Path(tmp) / "data")
            header = json.loads(header_path.read_text())
            header["schema_version"] = 99
            header_path.write_text(json.dumps(header))
            with self.assertRaises(DimensionError):
                read_rollouts(header_path)


class ControllerFileTests(SimpleTestCase):
    def test_bare_gain_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_json(Path(tmp) / "gain.json", {"K": [[-0.5]]})
            controller = read_controller(path)
        self.assertIsInstance(controller, StateFeedbackGain)
        np.testing.assert_array_equal(controller.K, [[-0.5]])

    def test_fir_result_file(self):
        system = LinearSystem([[0.5]], [[1.0]])
        resp = FirResponse.from_static_gain(system, StateFeedbackGain([[-0.25]]), 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_json(Path(tmp) / "result.json", {"status": "feasible", "controller": {"type": "fir", **resp.to_dict()}})
            controller = read_controller(path)
        np.testing.assert_allclose(controller.phi_u, resp.phi_u)

    def test_failed_result_holds_no_controller(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_json(Path(tmp) / "result.json", {"status": "infeasible", "controller": None})
            with self.assertRaises(DimensionError):
                read_controller(path)

    def test_fir_coefficient_dump(self):
        system = LinearSystem([[0.5]], [[1.0]])
        resp = FirResponse.from_static_gain(system, StateFeedbackGain([[-0.25]]), 3)
        with tempfile.TemporaryDirectory() as tmp:
            path = write_fir_coefficients(resp, Path(tmp) / "fir.csv")
            with path.open(newline="") as handle:
                rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["k", "block", "row", "col", "value"])
        self.assertEqual([row[1] for row in rows[1:]], ["phi_x"] * 3 + ["phi_u"] * 3 + ["V"])
        self.assertEqual(rows[-1][0], "4")
        self.assertEqual(float(rows[1][4]), 1.0)


class BootstrapTrialFileTests(SimpleTestCase):
    def test_per_trial_radii(self):
        result = BootstrapResult(0.3, 0.2, np.array([0.1, 0.3]), np.array([0.2, 0.05]), 2, NoiseSpec(1.0, 1.0))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_bootstrap_trials(result, Path(tmp) / "trials.csv")
            with path.open(newline="") as handle:
                rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["trial", "eps_A_tilde", "eps_B_tilde"])
        self.assertEqual([row[0] for row in rows[1:]], ["0", "1"])
        self.assertEqual(float(rows[2][1]), 0.3)
