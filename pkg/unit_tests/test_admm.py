import itertools
import math
import time
import unittest
from unittest import mock

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as nps

from onebit_precoding import admm
from onebit_precoding.admm import (
    AdmmConfig,
    AdmmPrecoder,
    AdmmState,
    ContinuationSchedule,
    SpectralCache,
    UpdateOrder,
    lambda_target,
    project_omega,
    reg_coefficient,
    solve,
    stationarity_residual,
    v_update,
    v_update_dense,
)
from onebit_precoding.baselines import LinearKind, build_linear, precode_linear_quantized
from onebit_precoding.errors import InputError
from onebit_precoding.model import ComplexChannel, SystemConfig, precoding_objective, stack_real
from onebit_precoding.sim import draw_channel
from timing_report import TimedTestCase, run_with_report

QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2)


def random_instance(seed, num_users=4, num_antennas=16, snr_db=0.0):
    rng = np.random.default_rng(seed)
    sys = SystemConfig.from_snr_db(num_users, num_antennas, snr_db)
    channel = draw_channel(num_users, num_antennas, rng)
    s = rng.choice(QPSK, size=num_users)
    return channel, s, sys


def brute_force_distance(omega):
    n = omega.size
    best = math.inf
    for signs in itertools.product((-1.0, 1.0), repeat=n):
        theta = np.array(signs)
        a = max(0.0, float(theta @ omega) / n)
        best = min(best, float(np.linalg.norm(omega - a * theta)))
    return best


def assert_monotone_at_target(test, output, slack=1e-10):
    pairs = zip(output.lagrangian_trace, output.lagrangian_trace[1:], output.lambda_trace, output.lambda_trace[1:])
    for k, (previous, current, lam_prev, lam_cur) in enumerate(pairs):
        if k == 0 or lam_prev != output.lambda_target or lam_cur != output.lambda_target:
            continue
        test.assertLessEqual(current, previous + slack * abs(previous), f"increase at iteration {k + 1}")


class TestPenaltyRules(TimedTestCase):
    test_timings = {}

    def test_noiseless_target(self):
        self.assertAlmostEqual(lambda_target(1.0, 0.0, 1e-3), 8.0 * 1.001, places=12)

    def test_zero_curvature_target(self):
        self.assertAlmostEqual(lambda_target(0.0, 1.0, 1e-3), 8.0 * 1.001, places=12)

    def test_mixed_target(self):
        expected = 1.001 * max(math.sqrt(0.25 + 50.0) - 0.5, 16.0, 4.0)
        self.assertAlmostEqual(lambda_target(2.0, 0.5, 1e-3), expected, places=12)

    def test_target_satisfies_condition_strictly(self):
        for phi, c in ((3.0, 0.0), (0.1, 2.0), (10.0, 10.0)):
            lam = lambda_target(phi, c, 1e-3)
            self.assertGreater((2 * c + lam) / 2 - 4 * (phi + c) ** 2 / lam, 0.0)

    def test_invalid_arguments(self):
        with self.assertRaises(InputError):
            lambda_target(-1.0, 0.0, 1e-3)
        with self.assertRaises(InputError):
            lambda_target(1.0, 0.0, 0.0)

    def test_reg_coefficient(self):
        self.assertEqual(reg_coefficient(3, 0.0, 1.0), 0.0)
        self.assertEqual(reg_coefficient(10, 1.0, 1.0), 10.0)
        sys = SystemConfig.from_snr_db(4, 16, 10.0)
        self.assertAlmostEqual(reg_coefficient(4, sys.noise_variance, sys.total_power), 0.4, places=14)

    def test_continuation_reaches_target_at_level_six(self):
        schedule = ContinuationSchedule()
        self.assertEqual(schedule.top_level, 6)
        penalties = [schedule.penalty(5.0, level) for level in range(8)]
        self.assertEqual(penalties[0], 5.0 / 64)
        self.assertLess(penalties[5], 5.0)
        self.assertEqual(penalties[6:], [5.0, 5.0])

    def test_top_level_rounds_up(self):
        schedule = ContinuationSchedule(lambda_init_divisor=10.0)
        self.assertEqual(schedule.top_level, 4)
        self.assertEqual(schedule.penalty(1.0, 3), 0.8)
        self.assertEqual(schedule.penalty(1.0, 4), 1.0)
        self.assertEqual(ContinuationSchedule(lambda_init_divisor=1.0).top_level, 0)

    def test_levels_are_held_then_advanced(self):
        schedule = ContinuationSchedule(hold_iters=3)
        self.assertEqual(schedule.advance(0, 1, False), (0, 1))
        self.assertEqual(schedule.advance(0, 3, False), (1, 0))
        self.assertEqual(schedule.advance(5, 3, False), (6, 0))
        self.assertEqual(schedule.advance(6, 40, False), (6, 40))

    def test_settled_level_jumps_to_target(self):
        schedule = ContinuationSchedule(hold_iters=3)
        self.assertEqual(schedule.advance(2, 1, True), (6, 0))
        self.assertEqual(schedule.advance(6, 1, True), (6, 1))

    def test_config_validation(self):
        with self.assertRaises(InputError):
            AdmmConfig(max_iters=0)
        with self.assertRaises(InputError):
            AdmmConfig(rel_tol=0.0)
        with self.assertRaises(InputError):
            ContinuationSchedule(growth_factor=1.0)
        with self.assertRaises(InputError):
            ContinuationSchedule(lambda_init_divisor=0.5)
        with self.assertRaises(InputError):
            ContinuationSchedule(hold_iters=0)


class TestSpectralCache(TimedTestCase):
    test_timings = {}

    def setUp(self):
        super().setUp()
        rng = np.random.default_rng(21)
        self.h_tilde = stack_real(rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8)))

    def test_reconstructs_gram(self):
        gram = self.h_tilde.T @ self.h_tilde
        for cache in (SpectralCache.from_channel(self.h_tilde), SpectralCache.from_gram(self.h_tilde)):
            rebuilt = cache.basis @ np.diag(cache.eigvals) @ cache.basis.T
            self.assertLess(np.linalg.norm(rebuilt - gram) / np.linalg.norm(gram), 1e-9)
            np.testing.assert_allclose(cache.basis.T @ cache.basis, np.eye(16), atol=1e-12)
            self.assertTrue(np.all(cache.eigvals >= 0))

    def test_phi_is_largest_squared_singular_value(self):
        cache = SpectralCache.from_channel(self.h_tilde)
        sigma = np.linalg.svd(self.h_tilde, compute_uv=False)[0]
        self.assertAlmostEqual(cache.phi, sigma**2, places=9)
        self.assertAlmostEqual(SpectralCache.from_gram(self.h_tilde).phi, cache.phi, places=9)


class TestVUpdate(TimedTestCase):
    test_timings = {}

    def test_zero_channel_is_diagonal(self):
        cache = SpectralCache.from_channel(np.zeros((4, 6)))
        rng = np.random.default_rng(0)
        u, w = rng.standard_normal(6), rng.standard_normal(6)
        v = v_update(cache, np.zeros(4), u, w, 0.0, 3.0)
        np.testing.assert_allclose(v, (3.0 * u + w) / 3.0, atol=1e-14)

    def test_normal_equation_residual(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            h_tilde = rng.standard_normal((8, 16))
            s_tilde, u, w = rng.standard_normal(8), rng.standard_normal(16), rng.standard_normal(16)
            c, lam = rng.uniform(0, 2), rng.uniform(0.1, 50)
            v = v_update(SpectralCache.from_channel(h_tilde), s_tilde, u, w, c, lam)
            d = 2 * h_tilde.T @ s_tilde + lam * u + w
            system = 2 * h_tilde.T @ h_tilde + (2 * c + lam) * np.eye(16)
            self.assertLess(np.linalg.norm(system @ v - d) / np.linalg.norm(d), 1e-9)

    def test_matches_dense_solve(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            channel = draw_channel(8, 32, rng)
            h_tilde = channel.real_stacked
            s_tilde, u, w = rng.standard_normal(16), rng.standard_normal(64), rng.standard_normal(64)
            c, lam = rng.uniform(0, 1), rng.uniform(1, 1000)
            fast = v_update(SpectralCache.from_channel(h_tilde), s_tilde, u, w, c, lam)
            dense = v_update_dense(h_tilde, s_tilde, u, w, c, lam)
            self.assertLess(np.max(np.abs(fast - dense)), 1e-8)


class TestProjection(TimedTestCase):
    test_timings = {}

    def test_example(self):
        np.testing.assert_array_equal(project_omega(np.array([1.0, -2.0, 3.0, -4.0])), [2.5, -2.5, 2.5, -2.5])

    def test_zero_entry_goes_positive(self):
        omega = np.array([1.0, 0.0])
        np.testing.assert_array_equal(project_omega(omega), [0.5, 0.5])
        distance = np.linalg.norm(omega - project_omega(omega))
        self.assertAlmostEqual(distance, brute_force_distance(omega), places=15)

    def test_zero_vector(self):
        np.testing.assert_array_equal(project_omega(np.zeros(4)), np.zeros(4))

    def test_empty_rejected(self):
        with self.assertRaises(InputError):
            project_omega(np.array([]))

    @settings(max_examples=200, deadline=None)
    @given(nps.arrays(np.float64, st.integers(1, 10), elements=st.floats(-10, 10, allow_nan=False)))
    def test_optimal_against_brute_force(self, omega):
        projected = project_omega(omega)
        self.assertEqual(len(set(np.abs(projected))), 1)
        distance = float(np.linalg.norm(omega - projected))
        self.assertLessEqual(distance, brute_force_distance(omega) + 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(nps.arrays(np.float64, st.integers(1, 16), elements=st.floats(-1e3, 1e3, allow_nan=False)))
    def test_idempotent(self, omega):
        once = project_omega(omega)
        np.testing.assert_array_equal(project_omega(once), once)

    def test_fixed_point(self):
        omega = 0.37 * np.array([1.0, -1.0, -1.0, 1.0, 1.0, -1.0])
        np.testing.assert_array_equal(project_omega(omega), omega)


class TestSolve(TimedTestCase):
    test_timings = {}

    def test_scalar_channel(self):
        sys = SystemConfig(1, 1)
        output = solve(ComplexChannel(np.array([[1.0]])), np.array([(1 + 1j) / math.sqrt(2)]), sys)
        kappa = sys.quantizer.kappa
        self.assertEqual(output.z[0], kappa * (1 + 1j))

    def test_output_in_alphabet(self):
        for seed in range(10):
            channel, s, sys = random_instance(seed)
            output = solve(channel, s, sys)
            np.testing.assert_array_equal(np.isin(output.z, sys.quantizer.alphabet), True)
            self.assertGreater(output.rho, 0)
            self.assertTrue(all(gv >= 0 and gu >= 0 for gv, gu in output.gap_history))

    def test_converges_to_tolerance(self):
        cfg = AdmmConfig(max_iters=1000)
        for snr_db in (-10.0, 0.0, 10.0):
            channel, s, sys = random_instance(3, snr_db=snr_db)
            output = solve(channel, s, sys, cfg)
            self.assertTrue(output.converged)
            gap_v, gap_u = output.gap_history[-1]
            self.assertLess(gap_v, 1e-7)
            self.assertLess(gap_u, 1e-7)
            self.assertEqual(output.lambda_trace[-1], output.lambda_target)

    def test_penalty_levels_are_held(self):
        channel, s, sys = random_instance(4)
        output = solve(channel, s, sys, AdmmConfig(max_iters=100, rel_tol=1e-300))
        target = output.lambda_target
        expected = [target / 64 * 2.0**level for level in range(6) for _ in range(12)]
        self.assertEqual(output.lambda_trace[:72], expected)
        self.assertTrue(all(lam == target for lam in output.lambda_trace[72:]))

    def test_settled_iterate_jumps_to_target(self):
        # one level below the target, left only once the gaps settle
        schedule = ContinuationSchedule(lambda_init_divisor=2.0, hold_iters=10_000)
        cfg = AdmmConfig(max_iters=3000, continuation=schedule)
        jumps = 0
        for seed in range(10):
            channel, s, sys = random_instance(seed, snr_db=-10.0)
            output = solve(channel, s, sys, cfg)
            trace, target = output.lambda_trace, output.lambda_target
            if trace[-1] != target:
                continue
            first = trace.index(target)
            self.assertLess(max(output.gap_history[first - 1]), cfg.rel_tol)
            self.assertTrue(output.converged)
            self.assertLessEqual(len(trace) - first, 10)
            jumps += 1
        self.assertGreaterEqual(jumps, 8)

    def test_rounded_objective_beats_quantized_zero_forcing(self):
        wins = 0
        for seed in range(20):
            channel, s, sys = random_instance(seed, 8, 64, snr_db=10.0)
            output = solve(channel, s, sys)
            zf = precode_linear_quantized(build_linear(channel, LinearKind.ZF, sys), s, sys)
            admm_objective = precoding_objective(channel, s, output.z, output.rho, sys.noise_variance)
            wins += admm_objective < precoding_objective(channel, s, zf.z, zf.rho, sys.noise_variance)
        self.assertGreaterEqual(wins, 15)

    def test_lagrangian_nonincreasing_at_target(self):
        for seed in range(20):
            channel, s, sys = random_instance(seed)
            assert_monotone_at_target(self, solve(channel, s, sys))

    def test_lagrangian_nonincreasing_without_continuation(self):
        cfg = AdmmConfig(continuation=ContinuationSchedule(lambda_init_divisor=1.0))
        for seed in range(100):
            channel, s, sys = random_instance(seed)
            output = solve(channel, s, sys, cfg)
            self.assertTrue(all(lam == output.lambda_target for lam in output.lambda_trace))
            assert_monotone_at_target(self, output)

    def test_dual_matches_gradient(self):
        for seed in range(10):
            channel, s, sys = random_instance(seed)
            precoder = AdmmPrecoder(channel, sys)
            h_tilde, s_tilde = channel.real_stacked, stack_real(s)
            for state in precoder.iterate(s):
                gradient = 2 * (h_tilde.T @ (h_tilde @ state.v_tilde) + precoder.c * state.v_tilde) - 2 * h_tilde.T @ s_tilde
                self.assertLess(np.max(np.abs(state.w - gradient)), 1e-9 * (1 + np.max(np.abs(state.w))))

    def test_u_stays_constant_modulus(self):
        channel, s, sys = random_instance(8)
        for state in AdmmPrecoder(channel, sys).iterate(s):
            if state.iteration > 1:
                self.assertLess(np.ptp(np.abs(state.u)), 1e-12 * (1 + np.max(np.abs(state.u))))

    def test_quadratic_first_order(self):
        cfg = AdmmConfig(update_order=UpdateOrder.QUADRATIC_FIRST, max_iters=300)
        channel, s, sys = random_instance(9)
        output = solve(channel, s, sys, cfg)
        np.testing.assert_array_equal(np.isin(output.z, sys.quantizer.alphabet), True)

    def test_no_factorization_while_iterating(self):
        channel, s, sys = random_instance(10)
        precoder = AdmmPrecoder(channel, sys)
        with mock.patch.object(admm.linalg, "svd") as svd, \
                mock.patch.object(admm.linalg, "eigh") as eigh, \
                mock.patch.object(admm.linalg, "solve") as dense:
            for _ in range(3):
                precoder.precode(s)
        svd.assert_not_called()
        eigh.assert_not_called()
        dense.assert_not_called()

    def test_mismatched_inputs_rejected(self):
        channel, s, sys = random_instance(0)
        with self.assertRaises(InputError):
            solve(channel, s[:2], sys)
        with self.assertRaises(InputError):
            solve(channel, s, SystemConfig(4, 8))


class TestStationarity(TimedTestCase):
    test_timings = {}

    def test_small_at_convergence(self):
        for seed in range(10):
            channel, s, sys = random_instance(seed)
            precoder = AdmmPrecoder(channel, sys, AdmmConfig(max_iters=1000))
            states = list(precoder.iterate(s))
            self.assertTrue(precoder.has_converged(states[-1]))
            s_tilde = stack_real(s)
            residual = stationarity_residual(states[-1], channel.real_stacked, s_tilde, precoder.c)
            self.assertLess(residual, 1e-5 * (1 + np.linalg.norm(s_tilde)))

    def test_matches_definition(self):
        rng = np.random.default_rng(12)
        channel, s, sys = random_instance(12)
        precoder = AdmmPrecoder(channel, sys)
        start = AdmmState(
            v_tilde=rng.standard_normal(32), u=np.zeros(32), w=rng.standard_normal(32),
            lam=1.0, lagrangian=math.nan, iteration=0,
        )
        s_tilde = stack_real(s)
        state = precoder.step(start, s_tilde)
        h = channel.real_stacked
        gram = h.T @ h + precoder.c * np.eye(32)
        expected = np.linalg.norm(2 * gram @ state.v_tilde - 2 * h.T @ s_tilde - state.w) + np.linalg.norm(state.v_tilde - state.u)
        residual = stationarity_residual(state, h, s_tilde, precoder.c)
        self.assertTrue(math.isfinite(residual))
        self.assertAlmostEqual(residual, expected, delta=1e-9 * (1 + expected))

    def test_identity_channel_fixed_point(self):
        sys = SystemConfig(2, 2)
        channel = ComplexChannel(np.eye(2))
        s = np.array([1 + 1j, -1 + 1j]) / math.sqrt(2)
        precoder = AdmmPrecoder(channel, sys, AdmmConfig(max_iters=1000))
        final = list(precoder.iterate(s))[-1]
        np.testing.assert_allclose(final.w, 2 * (final.v_tilde - stack_real(s)), atol=1e-9)


class TestAcceptanceScale(TimedTestCase):
    test_timings = {}

    def test_convergence_within_budget(self):
        cfg = AdmmConfig(max_iters=200)
        for snr_db in (-10.0, 0.0, 10.0):
            hits = 0
            for seed in range(100):
                channel, s, sys = random_instance(seed, snr_db=snr_db)
                output = solve(channel, s, sys, cfg)
                fixed = sum(1 for lam in output.lambda_trace if lam == output.lambda_target)
                hits += output.converged and fixed <= 60
            self.assertGreaterEqual(hits, 95)

    def test_monotone_lagrangian_many_instances(self):
        cfg = AdmmConfig(continuation=ContinuationSchedule(lambda_init_divisor=1.0))
        for num_users, num_antennas in ((4, 16), (8, 64)):
            for seed in range(1000):
                channel, s, sys = random_instance(seed, num_users, num_antennas)
                assert_monotone_at_target(self, solve(channel, s, sys, cfg))

    def test_per_iteration_cost_scaling(self):
        sizes, per_iteration = [64, 128, 256, 512], []
        for num_antennas in sizes:
            channel, s, sys = random_instance(0, 10, num_antennas)
            precoder = AdmmPrecoder(channel, sys, AdmmConfig(max_iters=50, rel_tol=1e-300))
            state = precoder.initial_state()
            s_tilde = stack_real(s)
            start = time.perf_counter()
            for _ in range(50):
                state = precoder.step(state, s_tilde)
            per_iteration.append((time.perf_counter() - start) / 50)
        slope, _ = np.polyfit(np.log(sizes), np.log(per_iteration), 1)
        self.assertLessEqual(slope, 2.5)


if __name__ == "__main__":
    for case in (TestPenaltyRules, TestSpectralCache, TestVUpdate, TestProjection, TestSolve, TestStationarity,
                 TestAcceptanceScale):
        run_with_report(case, "testing_report_admm.csv")
