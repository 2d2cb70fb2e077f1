import math

import numpy as np
from django.test import SimpleTestCase

from control.exceptions import DimensionError, NotStabilizableError, UnstableSystemError
from control.services.lti import (
    CostWeights,
    LinearSystem,
    NoiseSpec,
    StateFeedbackGain,
    StateSpace,
    dare_lqr,
    decay_envelope,
    dlyap,
    gramians,
    hinf_norm_lti,
    laplacian_example,
    lqr_cost_closed_loop,
    random_system,
    riccati_residual,
    spectral_radius,
)


def scalar(a, b=1.0):
    return LinearSystem([[a]], [[b]])


class ValueObjectTests(SimpleTestCase):
    def test_rejects_non_square_state_matrix(self):
        with self.assertRaises(DimensionError):
            LinearSystem(np.ones((2, 3)), np.ones((2, 1)))

    def test_rejects_mismatched_input_matrix(self):
        with self.assertRaises(DimensionError):
            LinearSystem(np.eye(2), np.ones((3, 1)))

    def test_rejects_non_finite_entries(self):
        with self.assertRaises(DimensionError):
            LinearSystem([[np.nan]], [[1.0]])

    def test_cost_weights_need_positive_definite_R(self):
        with self.assertRaises(DimensionError):
            CostWeights(np.eye(2), np.zeros((1, 1)))

    def test_cost_weights_accept_semidefinite_Q(self):
        weights = CostWeights(np.diag([1.0, 0.0]), np.eye(1))
        np.testing.assert_allclose(weights.Q_half, np.diag([1.0, 0.0]))

    def test_noise_levels_must_be_nonnegative(self):
        with self.assertRaises(DimensionError):
            NoiseSpec(sigma_u=-1.0)
        self.assertEqual(NoiseSpec(0.0, 0.0).sigma_w, 0.0)

    def test_round_trip_through_dict(self):
        system, _, _ = laplacian_example()
        self.assertTrue(np.array_equal(LinearSystem.from_dict(system.to_dict()).A, system.A))


class SpectralRadiusTests(SimpleTestCase):
    def test_identity(self):
        self.assertAlmostEqual(spectral_radius(np.eye(3)), 1.0)

    def test_nilpotent(self):
        self.assertAlmostEqual(spectral_radius(np.array([[0.0, 1.0], [0.0, 0.0]])), 0.0)

    def test_example_system(self):
        system, _, _ = laplacian_example()
        self.assertAlmostEqual(spectral_radius(system.A), 1.01 + 0.01 * math.sqrt(2), places=9)

    def test_non_square_is_rejected(self):
        with self.assertRaises(DimensionError):
            spectral_radius(np.ones((2, 3)))


class LyapunovTests(SimpleTestCase):
    def test_zero_dynamics(self):
        np.testing.assert_allclose(dlyap(np.zeros((2, 2)), np.eye(2)), np.eye(2))

    def test_scalar_geometric_series(self):
        self.assertAlmostEqual(dlyap(np.array([[0.5]]), np.array([[1.0]]))[0, 0], 4 / 3)

    def test_matches_fixed_point_iteration(self):
        M = np.array([[0.5, 0.1], [0.0, 0.5]])
        X = np.eye(2)
        for _ in range(500):
            X = M @ X @ M.T + np.eye(2)
        solution = dlyap(M, np.eye(2))
        np.testing.assert_allclose(solution, X, atol=1e-10)
        np.testing.assert_allclose(solution, solution.T)
        self.assertLess(np.linalg.norm(solution - M @ solution @ M.T - np.eye(2)), 1e-10)

    def test_unstable_matrix_is_rejected(self):
        with self.assertRaises(UnstableSystemError):
            dlyap(np.array([[1.0]]), np.array([[1.0]]))


class RiccatiTests(SimpleTestCase):
    def test_zero_dynamics(self):
        solution = dare_lqr(scalar(0.0), CostWeights([[1.0]], [[1.0]]))
        self.assertAlmostEqual(solution.P[0, 0], 1.0)
        self.assertAlmostEqual(solution.K.K[0, 0], 0.0)
        self.assertAlmostEqual(solution.J_per_sigma, 1.0)

    def test_scalar_closed_form(self):
        solution = dare_lqr(scalar(0.5), CostWeights([[1.0]], [[1.0]]))
        self.assertAlmostEqual(solution.P[0, 0], (0.25 + math.sqrt(4.0625)) / 2, places=8)
        self.assertAlmostEqual(solution.K.K[0, 0], -0.26556, places=5)

    def test_example_system_is_stabilized(self):
        system, cost, _ = laplacian_example()
        solution = dare_lqr(system, cost)
        self.assertLess(spectral_radius(system.closed_loop(solution.K)), 1.0)
        self.assertLess(riccati_residual(system.A, system.B, cost.Q, cost.R, solution.P), 1e-8)

    def test_uncontrollable_unstable_mode(self):
        system = LinearSystem(np.diag([2.0, 0.5]), np.array([[0.0], [1.0]]))
        with self.assertRaises(NotStabilizableError):
            dare_lqr(system, CostWeights.identity(2, 1))

    def test_closed_loop_cost_matches_riccati_trace(self):
        cost = CostWeights([[1.0]], [[1.0]])
        solution = dare_lqr(scalar(0.5), cost)
        self.assertAlmostEqual(lqr_cost_closed_loop(scalar(0.5), solution.K, cost), solution.J_per_sigma, places=8)

    def test_closed_loop_cost_without_control(self):
        cost = CostWeights([[1.0]], [[1.0]])
        self.assertAlmostEqual(lqr_cost_closed_loop(scalar(0.5), StateFeedbackGain([[0.0]]), cost), 4 / 3)
        self.assertAlmostEqual(lqr_cost_closed_loop(scalar(0.5), StateFeedbackGain([[0.0]]), cost, 2.0), 16 / 3)

    def test_unstable_closed_loop_costs_infinity(self):
        cost = CostWeights([[1.0]], [[1.0]])
        self.assertEqual(lqr_cost_closed_loop(scalar(2.0), StateFeedbackGain([[0.0]]), cost), math.inf)

    def test_optimal_gain_beats_perturbations(self):
        rng = np.random.default_rng(4)
        cost = CostWeights.identity(3, 2)
        for _ in range(100):
            system = random_system(3, 2, rng.uniform(0.5, 1.1), rng)
            solution = dare_lqr(system, cost)
            for _ in range(20):
                direction = rng.standard_normal(solution.K.K.shape)
                perturbed = solution.K.K + 1e-3 * direction / np.linalg.norm(direction)
                self.assertGreaterEqual(
                    lqr_cost_closed_loop(system, perturbed, cost), solution.J_per_sigma * (1 - 1e-9)
                )


class HinfNormTests(SimpleTestCase):
    def test_resolvent_of_zero(self):
        self.assertAlmostEqual(hinf_norm_lti(StateSpace.resolvent(np.zeros((1, 1)))), 1.0, places=5)

    def test_resolvent_peaks_at_dc(self):
        self.assertAlmostEqual(hinf_norm_lti(StateSpace.resolvent(np.array([[0.5]]))), 2.0, places=5)

    def test_resolvent_peaks_at_nyquist(self):
        self.assertAlmostEqual(hinf_norm_lti(StateSpace.resolvent(np.array([[-0.5]]))), 2.0, places=5)

    def test_fir_norm_bounded_below_by_coefficients(self):
        rng = np.random.default_rng(0)
        coefficients = [rng.standard_normal((2, 2)) for _ in range(4)]
        norm = hinf_norm_lti(StateSpace.fir(coefficients))
        for G in coefficients:
            self.assertGreaterEqual(norm, np.linalg.norm(G, 2) - 1e-9)
        self.assertLessEqual(norm, sum(np.linalg.norm(G, 2) for G in coefficients) + 1e-6)

    def test_upper_bound_dominates_dense_grid(self):
        M = np.array([[0.9, 0.5], [0.0, -0.7]])
        ss = StateSpace.resolvent(M)
        norm = hinf_norm_lti(ss)
        grid = max(np.linalg.norm(ss.frequency_response(theta), 2) for theta in np.linspace(0, np.pi, 4001))
        self.assertGreaterEqual(norm, grid * (1 - 1e-9))
        self.assertLessEqual(norm, grid * (1 + 1e-3))

    def test_unstable_realization_is_rejected(self):
        with self.assertRaises(UnstableSystemError):
            hinf_norm_lti(StateSpace.resolvent(np.array([[1.5]])))


class GramianTests(SimpleTestCase):
    def test_zero_dynamics(self):
        result = gramians(LinearSystem(np.zeros((3, 3)), np.eye(3)), NoiseSpec(), 3)
        np.testing.assert_allclose(result.controllability, np.eye(3))
        np.testing.assert_allclose(result.noise, np.eye(3))
        self.assertAlmostEqual(result.lambda_G, 2.0)

    def test_scalar_two_steps(self):
        result = gramians(scalar(0.5), NoiseSpec(), 2)
        self.assertAlmostEqual(result.controllability[0, 0], 1.25)
        self.assertAlmostEqual(result.noise[0, 0], 1.25)

    def test_single_step(self):
        B = np.array([[1.0], [2.0]])
        result = gramians(LinearSystem(np.eye(2) * 0.3, B), NoiseSpec(), 1)
        np.testing.assert_allclose(result.controllability, B @ B.T)

    def test_longer_horizons_only_add_excitation(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            system = random_system(3, 2, rng.uniform(0.3, 1.05), rng)
            previous = gramians(system, NoiseSpec(), 1)
            for T in range(2, 11):
                current = gramians(system, NoiseSpec(), T)
                self.assertGreaterEqual(current.lambda_G, previous.lambda_G - 1e-12)
                growth = current.controllability - previous.controllability
                self.assertGreaterEqual(np.linalg.eigvalsh(growth).min(), -1e-10)
                previous = current
        np.testing.assert_allclose(result.noise, np.eye(2))


class DecayEnvelopeTests(SimpleTestCase):
    def test_symmetric_matrix(self):
        envelope = decay_envelope(np.diag([0.5, -0.3]))
        self.assertAlmostEqual(envelope.rho, 0.75)
        self.assertAlmostEqual(envelope.C, 1.0)

    def test_non_normal_matrix_has_overshoot(self):
        M = np.array([[0.5, 1.0], [0.0, 0.5]])
        envelope = decay_envelope(M)
        self.assertGreater(envelope.C, 1.0)
        power = np.eye(2)
        for t in range(1, 2 * envelope.horizon):
            power = power @ M
            self.assertLessEqual(np.linalg.norm(power, 2), envelope.C * envelope.rho**t * (1 + 1e-12))

    def test_zero_matrix(self):
        envelope = decay_envelope(np.zeros((2, 2)))
        self.assertAlmostEqual(envelope.C, 1.0)
        self.assertAlmostEqual(envelope.rho, 0.5)


class RandomSystemTests(SimpleTestCase):
    def test_spectral_radius_is_the_diagonal(self):
        system = random_system(4, 2, 0.8, np.random.default_rng(1))
        self.assertAlmostEqual(spectral_radius(system.A), 0.8)
        self.assertTrue(np.all(np.abs(system.B) <= 1.0))
