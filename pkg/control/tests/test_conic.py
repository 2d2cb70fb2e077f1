import sys
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, override_settings

from control.exceptions import DimensionError
from control.services.conic import (
    Affine,
    ConicProgram,
    ConicStatus,
    bmat,
    get_backend,
    solve_conic,
)


def psd_lower_bound_program():
    program = ConicProgram("lower-bound")
    x = program.variable("x")
    program.add_psd(bmat([[x, 1.0], [1.0, 1.0]]))
    program.minimize(x)
    return program


class AffineTests(SimpleTestCase):
    def test_matrix_products_and_transpose(self):
        program = ConicProgram()
        X = program.variable("X", (2, 3))
        left, right = np.arange(4.0).reshape(2, 2), np.arange(6.0).reshape(3, 2)
        expr = (left @ X @ right).T + np.ones((2, 2))
        value = np.arange(6.0).reshape(2, 3)
        np.testing.assert_allclose(
            expr.evaluate({program.variables[0]: value.ravel()}),
            (left @ value @ right).T + 1.0,
        )

    def test_symmetric_variable_unpacks_symmetric(self):
        program = ConicProgram()
        S = program.variable("S", 3, symmetric=True)
        var = program.variables[0]
        value = var.unpack(np.arange(var.size, dtype=float))
        np.testing.assert_allclose(value, value.T)
        np.testing.assert_allclose(S.trace().evaluate({var: np.arange(var.size, dtype=float)}), [[np.trace(value)]])

    def test_shape_mismatch_is_rejected(self):
        program = ConicProgram()
        X = program.variable("X", (2, 2))
        with self.assertRaises(DimensionError):
            X + np.ones((3, 3))

    def test_bmat_fills_missing_blocks_with_zeros(self):
        program = ConicProgram()
        x = program.variable("x")
        block = bmat([[x, None], [None, Affine.of(np.eye(2))]])
        self.assertEqual(block.shape, (3, 3))
        var = program.variables[0]
        expected = np.eye(3)
        expected[0, 0] = 4.0
        np.testing.assert_allclose(block.evaluate({var: np.array([4.0])}), expected)


class ProgramTests(SimpleTestCase):
    def test_duplicate_variable_names(self):
        program = ConicProgram()
        program.variable("x")
        with self.assertRaises(DimensionError):
            program.variable("x")

    def test_foreign_variable_is_rejected(self):
        first, second = ConicProgram("first"), ConicProgram("second")
        x = first.variable("x")
        with self.assertRaises(DimensionError):
            second.minimize(x)

    def test_objective_must_be_scalar(self):
        program = ConicProgram()
        X = program.variable("X", (2, 1))
        with self.assertRaises(DimensionError):
            program.minimize(X)

    def test_missing_objective(self):
        program = ConicProgram()
        program.variable("x")
        with self.assertRaises(DimensionError):
            program.standard_form()

    def test_writes_sdpa_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = psd_lower_bound_program().to_sdpa(Path(tmp) / "lower.dat-s")
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], '"lower-bound"')
        self.assertEqual(lines[1:4], ["1", "1", "2"])
        self.assertEqual(float(lines[4]), 1.0)
        self.assertIn("1 1 1 1 1", lines)


class SolveTests(SimpleTestCase):
    def test_psd_lower_bound(self):
        solution = solve_conic(psd_lower_bound_program())
        self.assertIs(solution.status, ConicStatus.OPTIMAL)
        self.assertAlmostEqual(solution["x"].item(), 1.0, places=6)
        self.assertAlmostEqual(solution.objective, 1.0, places=6)

    def test_trace_minimization(self):
        program = ConicProgram()
        X = program.variable("X", 2, symmetric=True)
        program.add_psd(X - np.diag([1.0, -1.0]))
        program.add_psd(X)
        program.minimize(X.trace())
        solution = solve_conic(program)
        self.assertTrue(solution.is_optimal)
        self.assertAlmostEqual(solution.objective, 1.0, places=6)
        np.testing.assert_allclose(solution["X"], np.diag([1.0, 0.0]), atol=1e-5)

    def test_second_order_cone(self):
        program = ConicProgram()
        t = program.variable("t")
        program.add_soc(t, Affine.of([[3.0], [4.0]]))
        program.minimize(t)
        self.assertAlmostEqual(solve_conic(program).objective, 5.0, places=6)

    def test_equality_and_nonnegativity(self):
        program = ConicProgram()
        x, y = program.variable("x"), program.variable("y")
        program.add_equality(x + y, 1.0)
        program.add_nonneg(x)
        program.add_nonneg(y)
        program.minimize(x * 2.0 + y)
        solution = solve_conic(program)
        self.assertAlmostEqual(solution["x"].item(), 0.0, places=6)
        self.assertAlmostEqual(solution.objective, 1.0, places=6)
        self.assertAlmostEqual(solution.value(x + y).item(), 1.0, places=6)

    def test_infeasible_bounds(self):
        program = ConicProgram()
        x = program.variable("x")
        program.add_less_equal(x, -1.0)
        program.add_nonneg(x - 1.0)
        program.minimize(x)
        solution = solve_conic(program)
        self.assertIs(solution.status, ConicStatus.INFEASIBLE)
        self.assertEqual(solution.values, {})

    def test_inconsistent_equalities_are_caught_in_presolve(self):
        program = ConicProgram()
        x = program.variable("x")
        program.add_equality(x, 1.0)
        program.add_equality(x * 2.0, 3.0)
        program.minimize(x)
        self.assertIs(solve_conic(program).status, ConicStatus.INFEASIBLE)

    def test_unconstrained_objective_is_unbounded(self):
        program = ConicProgram()
        x = program.variable("x")
        program.minimize(x)
        self.assertIs(solve_conic(program).status, ConicStatus.UNBOUNDED)

    def test_cvxpy_backend_agrees(self):
        solution = solve_conic(psd_lower_bound_program(), tol=1e-6, backend="cvxpy")
        self.assertEqual(solution.backend, "cvxpy")
        self.assertIs(solution.status, ConicStatus.OPTIMAL)
        self.assertAlmostEqual(solution["x"].item(), 1.0, places=5)
        residuals = solution.residuals
        self.assertLessEqual(max(residuals.primal, residuals.dual, residuals.gap), 1e-6)

    def test_missing_binding_is_reported(self):
        with mock.patch.dict(sys.modules, {"cvxopt": None, "cvxopt.solvers": None}):
            with self.assertRaisesMessage(ValueError, "not installed"):
                get_backend("cvxopt")
            solution = solve_conic(psd_lower_bound_program(), tol=1e-6, backend="cvxpy")
        self.assertIs(solution.status, ConicStatus.OPTIMAL)

    @override_settings(COARSE_ID={"CONIC_BACKEND": "cvxopt"})
    def test_backend_comes_from_settings(self):
        self.assertEqual(get_backend().name, "cvxopt")

    def test_unknown_backend(self):
        with self.assertRaises(ValueError):
            get_backend("sdpa")
