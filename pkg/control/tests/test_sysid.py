import math

import numpy as np
from django.test import SimpleTestCase, tag

from control.exceptions import DimensionError, PreconditionError, RankDeficientError
from control.services.lti import LinearSystem, NoiseSpec, gramians, laplacian_example, random_system
from control.services.sysid import (
    ErrorSource,
    EstimateWithError,
    RegressionMatrices,
    RegressionMode,
    RolloutData,
    data_dependent_bound,
    estimate_noise_levels,
    independent_sample_threshold,
    ls_estimate,
    simulate_rollouts,
    theory_bound_independent,
    true_errors,
)


class RolloutTests(SimpleTestCase):
    def test_noiseless_integrator_follows_inputs(self):
        data = simulate_rollouts(LinearSystem([[0.0]], [[1.0]]), NoiseSpec(1.0, 0.0), 3, 4, seed=7)
        np.testing.assert_allclose(data.states[:, 1:, :], data.inputs)
        np.testing.assert_allclose(data.noises, 0.0)

    def test_same_seed_same_data(self):
        system, _, noise = laplacian_example()
        first = simulate_rollouts(system, noise, 5, 6, seed=11)
        second = simulate_rollouts(system, noise, 5, 6, seed=11)
        np.testing.assert_array_equal(first.states, second.states)
        np.testing.assert_array_equal(first.inputs, second.inputs)
        other = simulate_rollouts(system, noise, 5, 6, seed=12)
        self.assertFalse(np.array_equal(first.states, other.states))

    def test_worker_count_does_not_change_the_data(self):
        system, _, noise = laplacian_example()
        serial = simulate_rollouts(system, noise, 4, 3, seed=2, n_jobs=1)
        pooled = simulate_rollouts(system, noise, 4, 3, seed=2, n_jobs=2)
        np.testing.assert_array_equal(serial.states, pooled.states)

    def test_states_obey_the_dynamics(self):
        system, _, noise = laplacian_example()
        data = simulate_rollouts(system, noise, 2, 5, seed=0)
        for t in range(data.T):
            expected = data.states[:, t] @ system.A.T + data.inputs[:, t] @ system.B.T + data.noises[:, t]
            np.testing.assert_allclose(data.states[:, t + 1], expected)

    def test_noise_can_be_dropped(self):
        system, _, noise = laplacian_example()
        data = simulate_rollouts(system, noise, 2, 2, seed=0, record_noise=False)
        self.assertIsNone(data.noises)
        self.assertEqual(data.header()["N"], 2)

    def test_nonzero_initial_state_is_rejected(self):
        states = np.ones((1, 3, 2))
        with self.assertRaises(DimensionError):
            RolloutData(states, np.zeros((1, 2, 1)))

    def test_bad_grid(self):
        with self.assertRaises(DimensionError):
            simulate_rollouts(LinearSystem([[0.5]], [[1.0]]), NoiseSpec(), 0, 3, seed=0)


class LeastSquaresTests(SimpleTestCase):
    def setUp(self):
        self.system = random_system(3, 2, 0.7, np.random.default_rng(5))

    def test_noiseless_data_recovers_the_system(self):
        data = simulate_rollouts(self.system, NoiseSpec(1.0, 0.0), 10, 5, seed=1)
        for mode in (RegressionMode.FULL, RegressionMode.LAST_SAMPLE):
            A_hat, B_hat = ls_estimate(data, mode)
            np.testing.assert_allclose(A_hat, self.system.A, atol=1e-8)
            np.testing.assert_allclose(B_hat, self.system.B, atol=1e-8)

    def test_last_sample_mode_uses_one_row_per_rollout(self):
        data = simulate_rollouts(self.system, NoiseSpec(), 8, 4, seed=1)
        self.assertEqual(RegressionMatrices.from_rollouts(data, "last-sample").rows, 8)
        self.assertEqual(RegressionMatrices.from_rollouts(data, "full").rows, 32)

    def test_too_few_rollouts_for_last_sample(self):
        data = simulate_rollouts(self.system, NoiseSpec(), 1, 4, seed=1)
        with self.assertRaises(RankDeficientError) as ctx:
            ls_estimate(data, RegressionMode.LAST_SAMPLE)
        self.assertEqual(ctx.exception.required, 5)
        self.assertEqual(ctx.exception.rank, 1)

    def test_error_shrinks_with_data(self):
        system, _, noise = laplacian_example()
        errors = []
        for N in (20, 2000):
            A_hat, B_hat = ls_estimate(simulate_rollouts(system, noise, N, 6, seed=3))
            errors.append(max(true_errors(system, A_hat, B_hat)))
        self.assertLess(errors[1], errors[0])

    def test_noise_levels_are_recovered(self):
        system, _, _ = laplacian_example()
        data = simulate_rollouts(system, NoiseSpec(2.0, 0.5), 400, 6, seed=9)
        estimated = estimate_noise_levels(data, *ls_estimate(data))
        self.assertAlmostEqual(estimated.sigma_u, 2.0, delta=0.1)
        self.assertAlmostEqual(estimated.sigma_w, 0.5, delta=0.03)


class TheoryBoundTests(SimpleTestCase):
    def test_closed_form_radius(self):
        eps_A, eps_B = theory_bound_independent(1.0, 3, 3, 200, 0.05, NoiseSpec())
        self.assertAlmostEqual(eps_B, 16 * math.sqrt(9 * math.log(720) / 200), places=9)
        self.assertAlmostEqual(eps_B, 8.706, places=3)
        self.assertAlmostEqual(eps_A, eps_B)

    def test_radius_scales_with_gramian(self):
        eps_A, _ = theory_bound_independent(4.0, 3, 3, 200, 0.05, NoiseSpec())
        self.assertAlmostEqual(eps_A, 8.706 / 2, places=3)

    def test_too_few_rollouts(self):
        self.assertAlmostEqual(independent_sample_threshold(3, 3, 0.05), 48 + 16 * math.log(80))
        with self.assertRaises(PreconditionError) as ctx:
            theory_bound_independent(1.0, 3, 3, 100, 0.05, NoiseSpec())
        self.assertEqual(ctx.exception.actual, 100)

    def test_zero_input_level(self):
        with self.assertRaises(PreconditionError):
            theory_bound_independent(1.0, 1, 1, 500, 0.05, NoiseSpec(0.0, 1.0))

    def test_delta_range(self):
        with self.assertRaises(DimensionError):
            theory_bound_independent(1.0, 1, 1, 500, 1.5, NoiseSpec())


class DataDependentBoundTests(SimpleTestCase):
    def scaled_identity(self, scale):
        return RegressionMatrices.from_samples(np.zeros((2, 1)), [[scale], [0.0]], [[0.0], [scale]])

    def test_isotropic_samples(self):
        bound = data_dependent_bound(self.scaled_identity(10.0), 0.05, 1.0)
        expected = (math.sqrt(2) + 1 + math.sqrt(2 * math.log(20))) / 10
        self.assertAlmostEqual(bound.eps_A, expected, places=9)
        self.assertAlmostEqual(bound.eps_B, expected, places=9)
        self.assertAlmostEqual(bound.eps_A, 0.486, places=3)

    def test_noiseless_system_has_zero_radius(self):
        bound = data_dependent_bound(self.scaled_identity(10.0), 0.05, 0.0)
        self.assertEqual((bound.eps_A, bound.eps_B), (0.0, 0.0))

    def test_singular_design_is_unbounded(self):
        samples = RegressionMatrices.from_samples(np.zeros((2, 1)), [[1.0], [2.0]], [[2.0], [4.0]])
        bound = data_dependent_bound(samples, 0.05, 1.0)
        self.assertEqual(bound.eps_A, math.inf)
        self.assertEqual(bound.eps_B, math.inf)

    def test_needs_enough_samples(self):
        samples = RegressionMatrices.from_samples(np.zeros((1, 1)), [[1.0]], [[1.0]])
        with self.assertRaises(PreconditionError):
            data_dependent_bound(samples, 0.05, 1.0)


class EstimateTests(SimpleTestCase):
    def test_negative_radius_is_rejected(self):
        with self.assertRaises(DimensionError):
            EstimateWithError([[0.5]], [[1.0]], eps_A=-0.1)

    def test_round_trip_keeps_radii_and_source(self):
        est = EstimateWithError([[0.5]], [[1.0]]).with_errors(0.1, 0.2, "bootstrap")
        restored = EstimateWithError.from_dict(est.to_dict())
        self.assertEqual((restored.eps_A, restored.eps_B), (0.1, 0.2))
        self.assertIs(restored.source, ErrorSource.BOOTSTRAP)


@tag("slow")
class EstimationStatisticsTests(SimpleTestCase):
    def setUp(self):
        self.system, _, self.noise = laplacian_example()

    def test_error_decays_like_inverse_root_of_rollouts(self):
        counts = (20, 40, 80, 160, 320, 640)
        medians = []
        for N in counts:
            errors = []
            for trial in range(50):
                data = simulate_rollouts(self.system, self.noise, N, 6, seed=1000 * N + trial, record_noise=False)
                A_hat, B_hat = ls_estimate(data)
                errors.append(true_errors(self.system, A_hat, B_hat)[0])
            medians.append(np.median(errors))
        slope, _ = np.polyfit(np.log(counts), np.log(medians), 1)
        self.assertGreaterEqual(slope, -0.7)
        self.assertLessEqual(slope, -0.3)

    def test_closed_form_radius_covers_the_last_sample_error(self):
        delta, N, T = 0.05, 200, 6
        lambda_G = gramians(self.system, self.noise, T).lambda_G
        eps_A, eps_B = theory_bound_independent(lambda_G, 3, 3, N, delta, self.noise)
        covered = 0
        trials = 200
        for trial in range(trials):
            data = simulate_rollouts(self.system, self.noise, N, T, seed=trial, record_noise=False)
            err_A, err_B = true_errors(self.system, *ls_estimate(data, RegressionMode.LAST_SAMPLE))
            covered += err_A <= eps_A and err_B <= eps_B
        self.assertGreaterEqual(covered / trials, 0.95)

    def test_data_dependent_radius_covers_the_last_sample_error(self):
        covered = 0
        trials = 200
        for trial in range(trials):
            data = simulate_rollouts(self.system, self.noise, 50, 6, seed=5000 + trial, record_noise=False)
            samples = RegressionMatrices.from_rollouts(data, RegressionMode.LAST_SAMPLE)
            bound = data_dependent_bound(samples, 0.05, self.noise.sigma_w)
            err_A, err_B = true_errors(self.system, *ls_estimate(data, RegressionMode.LAST_SAMPLE))
            covered += err_A <= bound.eps_A and err_B <= bound.eps_B
        self.assertGreaterEqual(covered / trials, 0.95)
