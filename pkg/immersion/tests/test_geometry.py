"""
Tests for the algebraic layer: scalings, Riemann invariants and Christoffel symbols.
"""

import numpy as np
from numpy.testing import assert_allclose

from immersion.services.exceptions import DomainError, HyperbolicityError
from immersion.services.geometry import (
    RawForms,
    RiemannState,
    ScaledState,
    christoffel,
    eigenvalues,
    from_riemann,
    from_scaled,
    fundamental_forms,
    gauss_residual,
    hyperbolicity_gap,
    normalized_coefficients,
    to_riemann,
    to_scaled,
)

from .test_settings import LaboratoryTestCase


class ScalingTest(LaboratoryTestCase):
    def setUp(self):
        super().setUp()
        self.rng = np.random.default_rng(11)

    def test_scaled_roundtrip(self):
        """to_scaled followed by from_scaled returns the raw coefficients."""
        size = 200
        B = self.rng.uniform(0.5, 3.0, size)
        K = -self.rng.uniform(0.1, 2.0, size)
        forms = RawForms(
            L=self.rng.normal(size=size),
            M=self.rng.normal(size=size),
            N=self.rng.normal(size=size),
            B=B,
            K=K,
        )
        back = from_scaled(to_scaled(forms), B, K)
        assert_allclose(back.L, forms.L, rtol=1e-13)
        assert_allclose(back.M, forms.M, rtol=1e-13)
        assert_allclose(back.N, forms.N, rtol=1e-13)

    def test_scaling_values(self):
        forms = RawForms(L=8.0, M=2.0, N=3.0, B=2.0, K=-4.0)
        state = to_scaled(forms)
        self.assertAlmostEqual(state.l, 1.0)
        self.assertAlmostEqual(state.m, 0.5)
        self.assertAlmostEqual(state.n, 1.5)

    def test_vanishing_curvature_rejected(self):
        with self.assertRaises(DomainError):
            to_scaled(RawForms(L=1.0, M=0.0, N=1.0, B=1.0, K=0.0))

    def test_nonpositive_metric_rejected(self):
        with self.assertRaises(DomainError):
            from_scaled(ScaledState(l=-1.0, m=0.0, n=1.0), B=0.0, K=-1.0)

    def test_raw_gauss_residual_matches_scaled(self):
        """L N - M^2 - K B^2 equals |K| B^2 (l n - m^2 + 1) for K < 0."""
        state = from_riemann(RiemannState(u=np.array([-0.3, -0.05]), v=np.array([0.2, 0.07])))
        B, K = np.array([1.5, 2.5]), np.array([-0.4, -0.1])
        raw = from_scaled(state, B, K)
        assert_allclose(raw.gauss_residual(), np.abs(K) * B**2 * gauss_residual(state), atol=1e-14)
        assert_allclose(raw.gauss_residual(), 0.0, atol=1e-13)


class RiemannInvariantTest(LaboratoryTestCase):
    def test_region_state(self):
        """(u, v) = (-0.1, 0.1) gives l = -10, m = 0, n = 0.1."""
        state = from_riemann(RiemannState(u=-0.1, v=0.1))
        self.assertAlmostEqual(float(state.l), -10.0, places=12)
        self.assertAlmostEqual(float(state.m), 0.0, places=12)
        self.assertAlmostEqual(float(state.n), 0.1, places=12)

    def test_to_riemann_values(self):
        state = to_riemann(-2.0, 1.0)
        self.assertEqual(float(state.u), 0.0)
        self.assertAlmostEqual(float(state.v), 1.0)

    def test_zero_l_rejected(self):
        with self.assertRaises(HyperbolicityError):
            to_riemann(np.array([-1.0, 0.0]), np.array([0.0, 0.0]))

    def test_degenerate_state_rejected(self):
        with self.assertRaises(HyperbolicityError):
            from_riemann(RiemannState(u=0.2, v=0.2))

    def test_randomized_roundtrip(self):
        """(u, v) -> (l, m, n) -> (u, v) recovers the invariants for gaps down to 1e-6."""
        rng = np.random.default_rng(2024)
        u = rng.uniform(-1.0, 1.0, 10_000)
        v = u + 10.0 ** rng.uniform(-6.0, 0.0, 10_000)
        scaled = from_riemann(RiemannState(u=u, v=v))
        back = to_riemann(scaled.l, scaled.m)
        assert_allclose(back.u, u, rtol=0, atol=1e-12)
        assert_allclose(back.v, v, rtol=0, atol=1e-12)

    def test_gauss_constraint_holds(self):
        """Recovered (l, m, n) satisfy l n - m^2 + 1 = 0 up to rounding."""
        rng = np.random.default_rng(5)
        u = -rng.uniform(0.005, 1.0, 10_000)
        v = rng.uniform(0.005, 1.0, 10_000)
        state = from_riemann(RiemannState(u=u, v=v))
        residual = np.abs(gauss_residual(state))
        self.assertTrue(np.all(residual <= 1e-12 * (1.0 + state.m**2)))

    def test_eigenvalues_are_negated_invariants(self):
        u = np.array([-0.4, -0.01])
        v = np.array([0.3, 0.02])
        state = from_riemann(RiemannState(u=u, v=v))
        first, second = eigenvalues(state.l, state.m)
        assert_allclose(first, -u, rtol=1e-12)
        assert_allclose(second, -v, rtol=1e-12)

    def test_gap(self):
        gap = hyperbolicity_gap(RiemannState(u=np.array([-0.2]), v=np.array([0.3])))
        assert_allclose(gap, [0.5])


class ChristoffelTest(LaboratoryTestCase):
    def test_geodesic_symbols(self):
        symbols = christoffel(2.0, 0.5)
        self.assertAlmostEqual(symbols.x_xt, 0.25)
        self.assertAlmostEqual(symbols.t_xx, -1.0)
        self.assertEqual(symbols.x_xx, 0.0)

    def test_array_layout_is_symmetric(self):
        gamma = christoffel(1.5, 0.3, 0.6).as_array()
        assert_allclose(gamma, np.transpose(gamma, (0, 2, 1)))
        self.assertAlmostEqual(gamma[0, 0, 0], 0.4)
        self.assertAlmostEqual(gamma[0, 0, 1], 0.2)
        self.assertAlmostEqual(gamma[1, 0, 0], -0.45)
        self.assertEqual(gamma[1, 1, 1], 0.0)

    def test_nonpositive_metric_rejected(self):
        with self.assertRaises(DomainError):
            christoffel(-1.0, 0.0)


class FundamentalFormsTest(LaboratoryTestCase):
    def test_geodesic_gauge(self):
        raw = RawForms(
            L=np.array([1.0]),
            M=np.array([0.5]),
            N=np.array([2.0]),
            B=np.array([3.0]),
            K=np.array([-1.0]),
        )
        forms = fundamental_forms(raw)
        assert_allclose(forms.g11, [9.0])
        assert_allclose(forms.g12, [0.0])
        assert_allclose(forms.g22, [1.0])
        assert_allclose(forms.h12, [0.5])
        self.assertTrue(forms.is_positive_definite())

    def test_normalized_coefficients(self):
        raw = RawForms(L=6.0, M=3.0, N=9.0, B=3.0, K=-1.0)
        self.assertEqual(normalized_coefficients(raw), (2.0, 1.0, 3.0))
