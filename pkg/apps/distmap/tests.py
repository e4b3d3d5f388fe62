import numpy as np
import pytest
from django.test import SimpleTestCase
from scipy.integrate import trapezoid

from apps.core.exceptions import ConfigurationError, InsufficientDataError
from apps.distmap.divergence import energy_distance
from apps.distmap.minimax import MinimaxConfig, train_minimax, verify_distribution_mapping
from apps.distmap.toys import ToyPair, make_toy_pair


class ToyTests(SimpleTestCase):
    def test_sampling_is_deterministic(self):
        toy = make_toy_pair("two-moons-2d")
        first = toy.p1.sample(50, np.random.default_rng(3))
        second = toy.p1.sample(50, np.random.default_rng(3))
        np.testing.assert_array_equal(first, second)

    def test_shapes_per_kind(self):
        rng = np.random.default_rng(0)
        for kind, dim in [("gaussian-mixture-1d", 1), ("two-moons-2d", 2), ("masked-patch-4x4", 16)]:
            toy = make_toy_pair(kind)
            self.assertEqual(toy.p0.sample(7, rng).shape, (7, dim))
            self.assertEqual(toy.p1.sample(7, rng).shape, (7, dim))

    def test_one_dimensional_density_integrates_to_one(self):
        toy = make_toy_pair("gaussian-mixture-1d", p1_components=[(-2.0, 0.5, 1.0), (3.0, 1.0, 3.0)])
        grid = np.linspace(-10, 12, 4001)
        self.assertAlmostEqual(trapezoid(toy.p1.density(grid), grid), 1.0, places=4)
        self.assertAlmostEqual(toy.p1.mean, 1.75)

    def test_foreground_patches_are_brighter(self):
        toy = make_toy_pair("masked-patch-4x4")
        rng = np.random.default_rng(1)
        self.assertGreater(toy.p1.sample(200, rng).max(axis=1).mean(), toy.p0.sample(200, rng).max(axis=1).mean())

    def test_unknown_kind(self):
        with self.assertRaises(ConfigurationError):
            make_toy_pair("swiss-roll")


class EnergyDistanceTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(5)
        self.near = rng.normal(size=2000)
        self.far = rng.normal(loc=4.0, size=2000)

    def test_identical_sets_are_zero(self):
        self.assertAlmostEqual(energy_distance(self.near, self.near), 0.0, places=10)

    def test_symmetric(self):
        self.assertAlmostEqual(energy_distance(self.near, self.far), energy_distance(self.far, self.near))

    def test_matches_pairwise_definition_in_one_dimension(self):
        a, b = self.near[:, None], self.far[:, None]
        cross = np.abs(a - b.T).mean()
        within_a = np.abs(a - a.T).mean()
        within_b = np.abs(b - b.T).mean()
        self.assertAlmostEqual(energy_distance(self.near, self.far), 2 * cross - within_a - within_b, places=8)

    def test_multivariate(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(1000, 2))
        b = rng.normal(loc=1.0, size=(1000, 2))
        self.assertGreater(energy_distance(a, b), energy_distance(a, rng.normal(size=(1000, 2))))
        self.assertAlmostEqual(energy_distance(a, b), energy_distance(b, a), places=8)

    def test_too_few_samples(self):
        with self.assertRaises(InsufficientDataError):
            energy_distance(self.near[:999], self.far)


class MinimaxTests(SimpleTestCase):
    def test_zero_steps_keep_identity_mapper(self):
        toy = make_toy_pair("gaussian-mixture-1d")
        pair = train_minimax(toy, MinimaxConfig(steps=0))
        samples = np.random.default_rng(2).normal(size=(20, 1))
        np.testing.assert_array_equal(pair.generator.transform(samples), samples)

    def test_identical_distributions_keep_discriminator_at_chance(self):
        toy = make_toy_pair("gaussian-mixture-1d", p1_components=[(0.0, 1.0, 1.0)])
        pair = train_minimax(toy, MinimaxConfig(steps=200, log_every=20))
        for record in pair.log:
            self.assertLessEqual(abs(record["d_accuracy"] - 0.5), 0.1)

    def test_config_validation(self):
        with self.assertRaises(ConfigurationError):
            MinimaxConfig(objective="reversed")
        with self.assertRaises(ConfigurationError):
            MinimaxConfig(generator_loss="wasserstein")

    def test_toy_pair_dimension(self):
        self.assertIsInstance(make_toy_pair("masked-patch-4x4"), ToyPair)
        self.assertEqual(make_toy_pair("masked-patch-4x4").dim, 16)


@pytest.mark.slow
class DistributionMappingTests(SimpleTestCase):
    def test_one_dimensional_default_reaches_equilibrium(self):
        report = verify_distribution_mapping(MinimaxConfig())
        self.assertLess(report["post_divergence"], 0.1 * report["pre_divergence"])
        self.assertTrue(0.4 <= report["d_accuracy"] <= 0.6)
        self.assertLessEqual(abs(report["mapped_mean"][0]), 0.5)
        self.assertTrue(0.5 <= report["mapped_variance"][0] <= 2.0)
