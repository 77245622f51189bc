"""
Tests for curvature profiles, the metric ODE and the comparison function.
"""

import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from immersion.services.exceptions import (
    BlowUpError,
    DivergenceError,
    DomainError,
    MissingInputError,
    RefinementError,
)
from immersion.services.metric import (
    ConstantProfile,
    HongPower,
    LogDecay,
    Tabulated,
    build_profile,
    compute_C1,
    decay_sufficiency_log,
    find_T_star,
    metric_from_frame,
    sandwich_bounds_violation,
    metric_asymptotics,
    phi_explicit,
    phi_ode,
    profile_moments,
    scan_decay_thresholds,
    sign_switch,
    solve_h,
)

from .test_settings import LaboratoryTestCase, hong_metric, log_metric


class ProfileTest(LaboratoryTestCase):
    def test_hong_power_values(self):
        profile = HongPower(C=2.0, delta=2.0)
        self.assertAlmostEqual(float(profile.k_star(1.0)), 2.0 / 8.0)
        self.assertAlmostEqual(float(profile.dlnk_dt(1.0)), -1.5)

    def test_hong_power_log_derivative_at_kink(self):
        profile = HongPower(delta=2.0)
        self.assertEqual(float(profile.dlnk_dt(0.0)), -3.0)
        self.assertAlmostEqual(float(profile.dlnk_dt(-1.0)), 1.5)
        assert_allclose(profile.dlnk_dt(np.array([-0.5, 0.0, 0.5])), [2.0, -3.0, -2.0])

    def test_hong_power_rejects_delta_outside_range(self):
        with self.assertRaises(DomainError):
            HongPower(delta=4.0)
        with self.assertRaises(DomainError):
            HongPower(delta=0.0)

    def test_log_decay_requires_p_above_one(self):
        with self.assertRaises(DomainError):
            LogDecay(p=1.0)

    def test_build_profile(self):
        profile = build_profile("tabulated", times=[0, 1, 3], values=[1.0, 0.125, 1.0 / 64.0])
        self.assertIsInstance(profile, Tabulated)
        self.assertEqual(profile.times, (0, 1, 3))
        self.assertAlmostEqual(profile.tail_exponent, 3.0)

    def test_build_profile_unknown_kind(self):
        with self.assertRaises(DomainError):
            build_profile("spiral")

    def test_tabulated_interpolates_log_linearly(self):
        profile = Tabulated(times=(0.0, 2.0), values=(1.0, 0.25))
        self.assertAlmostEqual(float(profile.k_star(1.0)), 0.5)

    def test_tabulated_validation(self):
        with self.assertRaises(DomainError):
            Tabulated(times=(1.0, 2.0), values=(1.0, 0.5))
        with self.assertRaises(DomainError):
            Tabulated(times=(0.0, 2.0), values=(1.0, 0.0))

    def test_describe(self):
        self.assertEqual(HongPower().describe(), {"kind": "hong_power", "C": 1.0, "delta": 2.0})


class ProfileMomentsTest(LaboratoryTestCase):
    def test_C1_closed_form(self):
        """For delta = 2, int k* = 1/2 and int s k* = 1/2."""
        moments = profile_moments(HongPower(delta=2.0))
        self.assertAlmostEqual(moments.integral, 0.5, places=10)
        self.assertAlmostEqual(moments.first_moment, 0.5, places=10)
        self.assertAlmostEqual(compute_C1(HongPower(delta=2.0)), 0.5 * math.exp(0.5), delta=1e-8)

    def test_zero_curvature(self):
        self.assertEqual(compute_C1(ConstantProfile(value=0.0)), 0.0)

    def test_constant_curvature_diverges(self):
        with self.assertRaises(DivergenceError):
            compute_C1(ConstantProfile(value=1.0))

    def test_slow_tabulated_tail_diverges(self):
        with self.assertRaises(DivergenceError):
            compute_C1(Tabulated(times=(0.0, 1.0, 3.0), values=(1.0, 0.5, 0.25)))


class SolveMetricTest(LaboratoryTestCase):
    def test_zero_curvature_is_flat(self):
        metric = solve_h(ConstantProfile(value=0.0), 10.0, 0.1)
        assert_allclose(metric.h, 1.0)
        assert_allclose(metric.dh, 0.0)

    def test_unit_curvature_is_cosh(self):
        metric = solve_h(ConstantProfile(value=1.0), 5.0, 0.005)
        assert_allclose(metric.h, np.cosh(metric.t), rtol=1e-10, atol=1e-8)
        assert_allclose(metric.dh, np.sinh(metric.t), rtol=1e-10, atol=1e-8)
        self.assertIsNone(metric.C1)

    def test_coarse_step_rejected(self):
        with self.assertRaises(RefinementError):
            solve_h(ConstantProfile(value=100.0), 1.0, 0.5)

    def test_invalid_arguments(self):
        with self.assertRaises(DomainError):
            solve_h(HongPower(), -1.0, 0.01)

    def test_grid_ends_at_t_max(self):
        metric = solve_h(HongPower(), 1.0, 0.0099)
        self.assertAlmostEqual(metric.t_max, 1.0)
        self.assertEqual(metric.t.size, 103)
        self.assertLessEqual(metric.step, 0.0099)

    def test_interpolation_range(self):
        metric = hong_metric()
        self.assertAlmostEqual(float(metric.h_at(0.0)), 1.0)
        with self.assertRaises(DomainError):
            metric.h_at(metric.t_max + 1.0)

    def test_frame_columns(self):
        frame = hong_metric().to_frame()
        self.assertEqual(list(frame.columns), ["t", "k_star", "h", "dh", "dln_h", "S"])

    def test_rebuild_from_frame(self):
        metric = hong_metric()
        rebuilt = metric_from_frame(metric.profile, metric.to_frame(), metric.error_estimate)

        assert_array_equal(rebuilt.h, metric.h)
        assert_array_equal(rebuilt.integral_k, metric.integral_k)
        self.assertEqual(rebuilt.T_star, metric.T_star)
        self.assertEqual(rebuilt.C1, metric.C1)
        self.assertEqual(float(rebuilt.h_at(3.3)), float(metric.h_at(3.3)))

    def test_rebuild_from_incomplete_frame(self):
        frame = hong_metric().to_frame().drop(columns=["dh"])
        with self.assertRaises(MissingInputError):
            metric_from_frame(HongPower(), frame)

    def test_sandwich_bounds(self):
        """int k* <= h' <= C1 and 1 + int int k* <= h <= 1 + C1 t on [0, 200]."""
        for delta in (1.0, 2.0, 3.0):
            with self.subTest(delta=delta):
                violations = sandwich_bounds_violation(hong_metric(delta, 200.0, 0.01))
                for name, value in violations.items():
                    self.assertLessEqual(value, 1e-6, name)

    def test_sandwich_bounds_need_C1(self):
        metric = solve_h(ConstantProfile(value=1.0), 1.0, 0.01)
        with self.assertRaises(DivergenceError):
            sandwich_bounds_violation(metric)

    def test_asymptotically_linear(self):
        """t d/dt ln h approaches 1."""
        deviations = metric_asymptotics(hong_metric(2.0, 200.0, 0.01), [50.0, 100.0, 200.0])
        self.assertGreater(deviations[0], deviations[1])
        self.assertGreater(deviations[1], deviations[2])
        self.assertLess(deviations[2], 0.05)


class SignSwitchTest(LaboratoryTestCase):
    def assert_positive_tail(self, metric):
        T_star = find_T_star(metric)
        self.assertEqual(T_star, metric.T_star)
        self.assertGreater(T_star, 0.0)
        self.assertLessEqual(10.0 * T_star, metric.t_max)
        tail = (metric.t >= T_star) & (metric.t <= 10.0 * T_star)
        self.assertTrue(np.all(metric.sign_switch()[tail] > 0))

    def test_sign_switch_exists(self):
        for delta in (1.0, 2.0, 3.0):
            with self.subTest(delta=delta):
                self.assert_positive_tail(hong_metric(delta, 200.0, 0.01))

    def test_sign_switch_near_upper_delta(self):
        self.assert_positive_tail(solve_h(HongPower(delta=3.9), 3000.0, 0.01))

    def test_sign_switch_function_matches_grid(self):
        metric = hong_metric()
        t = metric.t[100]
        self.assertAlmostEqual(
            float(sign_switch(metric, None, t)), float(metric.sign_switch()[100]), places=8
        )

    def test_no_sign_switch_on_short_grid(self):
        metric = solve_h(HongPower(delta=3.9), 1.0, 0.01)
        self.assertIsNone(metric.T_star)


class ComparisonFunctionTest(LaboratoryTestCase):
    def setUp(self):
        super().setUp()
        self.metric = hong_metric()
        self.profile = self.metric.profile
        self.T = self.metric.T_star

    def test_explicit_formula_solves_ode(self):
        explicit = phi_explicit(self.metric, self.profile, self.T, 0.1, t_max=self.T + 10.0)
        numerical = phi_ode(self.metric, self.profile, self.T, 0.1, t_max=self.T + 10.0)
        self.assertEqual(explicit.phi[0], 0.1)
        assert_allclose(explicit.phi, numerical.phi, rtol=1e-6)
        self.assertAlmostEqual(float(explicit.evaluate(self.T)), 0.1)

    def test_decreasing_over_long_window(self):
        metric = hong_metric(2.0, 200.0, 0.01)
        T = metric.T_star
        explicit = phi_explicit(metric, metric.profile, T, 0.1, t_max=T + 100.0)
        numerical = phi_ode(metric, metric.profile, T, 0.1, t_max=T + 100.0)

        self.assertAlmostEqual(explicit.t[-1], T + 100.0)
        self.assertTrue(explicit.is_decreasing())
        self.assertTrue(numerical.is_decreasing())
        assert_allclose(explicit.phi, numerical.phi, rtol=1e-8)

    def test_large_data_blows_up(self):
        with self.assertRaises(BlowUpError):
            phi_explicit(self.metric, self.profile, self.T, 50.0)

    def test_invalid_anchor(self):
        with self.assertRaises(DomainError):
            phi_explicit(self.metric, self.profile, self.metric.t_max, 0.1)
        with self.assertRaises(DomainError):
            phi_explicit(self.metric, self.profile, self.T, -0.1)


class DecaySufficiencyTest(LaboratoryTestCase):
    def test_p3_satisfies_shortcut(self):
        report = decay_sufficiency_log(3.0)
        self.assertAlmostEqual(report.lhs, 1.5236, places=3)
        self.assertAlmostEqual(report.lhs, math.exp(1.0 / (2.0 * 1.09**2)), places=12)
        self.assertTrue(report.satisfied)
        self.assertTrue(report.first_moment_bound_holds)

    def test_p2_fails(self):
        report = decay_sufficiency_log(2.0)
        self.assertGreater(report.lhs, 2.0)
        self.assertFalse(report.satisfied)

    def test_invalid_p(self):
        with self.assertRaises(DomainError):
            decay_sufficiency_log(1.0)

    def test_scan_threshold(self):
        scan = scan_decay_thresholds([2.0, 3.0, 4.0, 5.0])
        self.assertEqual(scan.threshold, 3.0)
        self.assertTrue(scan.is_monotone)
        self.assertEqual(len(scan.reports), 4)


class LogDecayMetricTest(LaboratoryTestCase):
    """Metric, sign switch and comparison function for k* = 1/((3+t)^2 ln(3+t)^p)."""

    def test_sandwich_bounds(self):
        for p, t_max in ((3.0, 200.0), (5.0, 400.0)):
            with self.subTest(p=p):
                violations = sandwich_bounds_violation(log_metric(p, t_max))
                for name, value in violations.items():
                    self.assertLessEqual(value, 1e-6, name)

    def test_C1(self):
        metric = log_metric(3.0)
        self.assertAlmostEqual(metric.C1, 0.0949, delta=1e-4)
        self.assertEqual(metric.C1, decay_sufficiency_log(3.0).C1)

    def test_sign_switch_detected(self):
        for p, t_max, expected in ((3.0, 200.0, 17.52), (5.0, 400.0, 68.27)):
            with self.subTest(p=p):
                metric = log_metric(p, t_max)
                self.assertAlmostEqual(metric.T_star, expected, delta=0.05)
                tail = metric.t >= metric.T_star
                self.assertTrue(np.all(metric.sign_switch()[tail] > 0))
                self.assertLessEqual(float(metric.sign_switch()[metric.t < metric.T_star][-1]), 0.0)

    def test_comparison_function_decreases(self):
        metric = log_metric(3.0)
        T = metric.T_star
        explicit = phi_explicit(metric, metric.profile, T, 0.1, t_max=T + 100.0)
        numerical = phi_ode(metric, metric.profile, T, 0.1, t_max=T + 100.0)

        self.assertTrue(explicit.is_decreasing())
        self.assertTrue(numerical.is_decreasing())
        assert_allclose(explicit.phi, numerical.phi, rtol=1e-8)
        self.assertLess(explicit.phi[-1], 0.1)
