import math

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from immersion.services.data_generator import (
    DataSpec,
    RoughDataGenerator,
    generate_rough_data,
    generate_run_id,
)
from immersion.services.exceptions import DomainError
from immersion.services.fields import Representation

from .test_settings import LaboratoryTestCase


class DataSpecTest(LaboratoryTestCase):
    """Test cases for DataSpec validation."""

    def test_defaults(self):
        spec = DataSpec()
        self.assertEqual(spec.kind, "pieces")
        self.assertEqual(spec.pieces, 16)

    def test_unknown_kind(self):
        with self.assertRaises(DomainError):
            DataSpec(kind="noise")

    def test_inverted_box(self):
        with self.assertRaises(DomainError):
            DataSpec(inner_low=0.8, inner_high=0.5)


class RoughDataGeneratorTest(LaboratoryTestCase):
    """Test cases for RoughDataGenerator."""

    def assert_inside_region(self, state, T1, psi0):
        inner = math.exp(-T1) * psi0
        self.assertTrue(np.all(-state.u > inner))
        self.assertTrue(np.all(-state.u <= psi0))
        self.assertTrue(np.all(state.v > inner))
        self.assertTrue(np.all(state.v <= psi0))

    def test_every_kind_is_inside_region(self):
        """Generated data lies strictly inside the invariant region."""
        for kind in DataSpec.KINDS:
            with self.subTest(kind=kind):
                state = generate_rough_data(DataSpec(kind=kind), 64, 4.0, 0.1, seed=1)
                self.assertIs(state.representation, Representation.UV)
                self.assertEqual(state.J, 64)
                self.assertEqual(state.t, 4.0)
                self.assert_inside_region(state, 4.0, 0.1)

    def test_same_seed_same_data(self):
        first = generate_rough_data(DataSpec(kind="random_cell"), 32, 4.0, 0.1, seed=9)
        second = generate_rough_data(DataSpec(kind="random_cell"), 32, 4.0, 0.1, seed=9)
        other = generate_rough_data(DataSpec(kind="random_cell"), 32, 4.0, 0.1, seed=10)
        assert_array_equal(first.first, second.first)
        assert_array_equal(first.second, second.second)
        self.assertFalse(np.array_equal(first.first, other.first))

    def test_constant_level(self):
        state = generate_rough_data(DataSpec(kind="constant", level=0.5), 16, 4.0, 0.2, seed=0)
        assert_allclose(state.u, -0.1)
        assert_allclose(state.v, 0.1)

    def test_piecewise_blocks(self):
        """Two-step data has exactly two values per invariant."""
        state = generate_rough_data(DataSpec(kind="two_step"), 32, 4.0, 0.1, seed=2)
        self.assertEqual(np.unique(state.u).size, 2)
        assert_array_equal(state.u[:16], state.u[0])
        assert_array_equal(state.u[16:], state.u[-1])

    def test_box_clipped_near_inner_edge(self):
        """At small T1 the lower bound moves inside e^{-T1} psi0."""
        low, high = RoughDataGenerator.admissible_box(DataSpec(inner_low=0.1), 1.0, 1.0)
        inner = math.exp(-1.0)
        self.assertAlmostEqual(low, inner + 0.25 * (0.7 - inner))
        self.assertAlmostEqual(high, 0.7)

    def test_empty_box(self):
        with self.assertRaises(DomainError):
            RoughDataGenerator.admissible_box(DataSpec(inner_high=0.5), 0.5, 0.1)

    def test_constant_level_outside_region(self):
        with self.assertRaises(DomainError):
            RoughDataGenerator.admissible_box(DataSpec(kind="constant", level=0.01), 1.0, 0.1)

    def test_nonpositive_psi0(self):
        with self.assertRaises(DomainError):
            RoughDataGenerator.admissible_box(DataSpec(), 4.0, 0.0)


class RunIdTest(LaboratoryTestCase):
    def test_deterministic(self):
        self.assertEqual(generate_run_id("solve", 3), generate_run_id("solve", 3))

    def test_distinct_per_job(self):
        ids = {generate_run_id("sweep", 3, index) for index in range(4)}
        self.assertEqual(len(ids), 4)
        self.assertNotEqual(generate_run_id("solve", 3), generate_run_id("sweep", 3))
