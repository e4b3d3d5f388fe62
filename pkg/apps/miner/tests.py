import copy
import tempfile

import numpy as np
import pytest
from django.test import SimpleTestCase

from apps.autodiff import ops
from apps.autodiff.tensor import Tensor
from apps.core.exceptions import (
    ConfigurationError,
    DimensionError,
    MergeError,
    PoolClosedError,
    PretrainingFailedError,
)
from apps.core.runlog import RunLog
from apps.miner.engine import (
    FeatureCache,
    MiningConfig,
    accumulated_mask,
    emit_and_store,
    emit_maps,
    generator_loss,
    generator_phase,
    is_empty_map,
    mask_features,
    merge_final,
    modulator_phase,
    run_mining,
    scale_for_step,
)
from apps.miner.networks import ExtractorConfig, HeadConfig, MinerNetworks, load_networks, save_networks
from apps.miner.pools import PoolSet, RegionMap, RegionMapPool
from apps.miner.pretraining import PretrainConfig, classify, f1_scores, pretrain_classifier
from apps.scenes.synth import DatasetSpec, generate_dataset, stack_images, stack_labels

TINY_EXTRACTOR = ExtractorConfig(stages=((4, 1, 2), (8, 1, 2), (8, 1, 1)))


def tiny_networks(num_categories=4, seed=0):
    return MinerNetworks(TINY_EXTRACTOR, HeadConfig(hidden=8, num_categories=num_categories), seed=seed)


def tiny_dataset(num_scenes=10, seed=4, **kwargs):
    return generate_dataset(DatasetSpec(num_scenes=num_scenes, image_size=32, seed=seed, **kwargs))


def tiny_mining_config(**overrides):
    values = dict(
        scales=(16, 32),
        batch_sizes=(4, 4),
        modulator_epochs=1,
        generator_epochs=1,
        max_steps=2,
    )
    values.update(overrides)
    return MiningConfig(**values)


def pool_with(category, *arrays, image_id="scene-00000"):
    pool = RegionMapPool(image_id=image_id, category=category)
    for step, values in enumerate(arrays, start=1):
        pool.append(RegionMap(np.asarray(values, dtype=float), category, step, 32))
    return pool


class NetworkTests(SimpleTestCase):
    def setUp(self):
        self.nets = MinerNetworks(ExtractorConfig(), HeadConfig(hidden=8, num_categories=3), seed=1)
        self.rng = np.random.default_rng(2)

    def test_extractor_output_stride(self):
        for size, expected in [(64, 16), (80, 20)]:
            features = self.nets.forward_extractor(Tensor(self.rng.uniform(size=(1, 3, size, size))))
            self.assertEqual(features.shape, (1, 64, expected, expected))

    def test_extractor_rejects_indivisible_size(self):
        with self.assertRaises(DimensionError):
            self.nets.forward_extractor(Tensor(np.zeros((1, 3, 62, 62))))

    def test_stride_must_be_four(self):
        with self.assertRaises(ConfigurationError):
            ExtractorConfig(stages=((8, 1, 2), (8, 1, 1)))

    def test_forward_passes_are_pure(self):
        images = Tensor(self.rng.uniform(size=(2, 3, 32, 32)))
        first = self.nets.forward_extractor(images)
        second = self.nets.forward_extractor(images)
        np.testing.assert_array_equal(first.data, second.data)
        np.testing.assert_array_equal(
            self.nets.forward_modulator(first).data, self.nets.forward_modulator(second).data
        )
        np.testing.assert_array_equal(
            self.nets.forward_generator(first).data, self.nets.forward_generator(second).data
        )

    def test_zero_features_give_spatially_invariant_scores(self):
        small = self.nets.forward_modulator(Tensor(np.zeros((1, 64, 4, 4))))
        large = self.nets.forward_modulator(Tensor(np.zeros((1, 64, 9, 9))))
        np.testing.assert_allclose(small.data, large.data)

    def test_modulator_gradient_reaches_features(self):
        features = Tensor(self.rng.uniform(size=(2, 64, 6, 6)), requires_grad=True)
        self.nets.forward_modulator(features).sum().backward()
        self.assertGreater(np.abs(features.grad).sum(), 0.0)

    def test_generator_is_nonnegative_at_feature_resolution(self):
        maps = self.nets.forward_generator(Tensor(self.rng.normal(size=(2, 64, 5, 5))))
        self.assertEqual(maps.shape, (2, 3, 5, 5))
        self.assertGreaterEqual(maps.data.min(), 0.0)


class GeneratorInitializationTests(SimpleTestCase):
    def setUp(self):
        self.nets = tiny_networks(num_categories=3, seed=5)
        self.features = Tensor(np.random.default_rng(6).normal(size=(2, 8, 6, 6)))

    def test_generator_matches_modulator_maps_after_copy(self):
        self.nets.init_generator_from_modulator()
        np.testing.assert_array_equal(
            self.nets.generator_logits(self.features).data,
            self.nets.modulator_maps(self.features).data,
        )
        self.assertTrue(self.nets.generator_initialized)

    def test_copy_is_deep(self):
        self.nets.init_generator_from_modulator()
        before = self.nets.modulator[0][0].data.copy()
        self.nets.generator[0][0].data += 1.0
        np.testing.assert_array_equal(self.nets.modulator[0][0].data, before)

    def test_copy_is_idempotent(self):
        self.nets.init_generator_from_modulator()
        once = [p.data.copy() for p in self.nets.parameters("generator")]
        self.nets.init_generator_from_modulator()
        for value, param in zip(once, self.nets.parameters("generator")):
            np.testing.assert_array_equal(value, param.data)

    def test_checkpoint_round_trip(self):
        self.nets.freeze("extractor")
        self.nets.init_generator_from_modulator()
        with tempfile.TemporaryDirectory() as directory:
            save_networks(self.nets, directory)
            loaded = load_networks(directory)
        self.assertEqual(loaded.frozen, self.nets.frozen)
        self.assertTrue(loaded.generator_initialized)
        for (name, original), (_, restored) in zip(
            self.nets.named_parameters(), loaded.named_parameters()
        ):
            np.testing.assert_array_equal(original.data, restored.data, err_msg=name)


class PretrainingTests(SimpleTestCase):
    def test_f1_by_hand(self):
        scores = np.array([[1.0, -1.0], [1.0, -1.0], [-1.0, -1.0]])
        labels = np.array([[1, 0], [0, 0], [1, 0]])
        macro, per_category = f1_scores(scores, labels)
        self.assertAlmostEqual(per_category[0], 0.5)
        self.assertEqual(per_category[1], 1.0)
        self.assertAlmostEqual(macro, 0.75)

    def test_zero_learning_rate_leaves_parameters(self):
        nets = tiny_networks()
        before = [p.data.copy() for p in nets.parameters()]
        config = PretrainConfig(epochs=1, lr_extractor=0.0, lr_modulator=0.0, weight_decay=0.0)
        pretrain_classifier(nets, tiny_dataset(), config, enforce_gate=False)
        for value, param in zip(before, nets.parameters()):
            np.testing.assert_array_equal(value, param.data)

    def test_extractor_frozen_after_pretraining(self):
        nets = tiny_networks()
        pretrain_classifier(nets, tiny_dataset(), PretrainConfig(epochs=1), enforce_gate=False)
        self.assertTrue(nets.is_frozen("extractor"))

    def test_missed_gate_raises_with_metrics(self):
        with self.assertRaises(PretrainingFailedError) as raised:
            pretrain_classifier(tiny_networks(), tiny_dataset(), PretrainConfig(epochs=1, f1_gate=1.01))
        self.assertIn("macro_f1", raised.exception.details)
        self.assertEqual(raised.exception.exit_code, 4)


@pytest.mark.slow
class PretrainingGateTests(SimpleTestCase):
    def test_default_dataset_passes_gate(self):
        dataset = generate_dataset(DatasetSpec())
        nets = MinerNetworks(ExtractorConfig(), HeadConfig(num_categories=4), seed=dataset.spec.seed)
        result = pretrain_classifier(nets, dataset, PretrainConfig())
        self.assertGreaterEqual(result.macro_f1, 0.95)
        self.assertLessEqual(np.mean(result.losses[-3:]), np.mean(result.losses[:3]))


class ScheduleTests(SimpleTestCase):
    def test_scale_for_step(self):
        scales = [256, 321, 417]
        self.assertEqual(scale_for_step(1, scales), 256)
        self.assertEqual(scale_for_step(3, scales), 417)
        self.assertEqual(scale_for_step(7, scales), 417)

    def test_schedule_validation(self):
        with self.assertRaises(ConfigurationError):
            MiningConfig(scales=(32,), batch_sizes=(8,))
        with self.assertRaises(ConfigurationError):
            MiningConfig(scales=(48, 32), batch_sizes=(8, 8))

    def test_single_scale_ablation(self):
        config = MiningConfig.single_scale(48)
        self.assertEqual(config.scales, (48,))
        self.assertEqual(config.batch_sizes, (16,))
        self.assertTrue(config.ablation)
        self.assertEqual(config.batch_size_for_step(5), 16)

    def test_single_scale_outside_schedule_is_rejected(self):
        with self.assertRaises(ConfigurationError):
            MiningConfig.single_scale(40)


class MaskingTests(SimpleTestCase):
    def test_empty_pools_give_all_ones(self):
        np.testing.assert_array_equal(accumulated_mask({}, 3, 4), np.ones((3, 4)))

    def test_min_across_categories(self):
        pools = {0: pool_with(0, [[0.2]]), 1: pool_with(1, [[0.6]])}
        np.testing.assert_allclose(accumulated_mask(pools, 1, 1), [[0.2]])

    def test_adding_a_step_never_increases_the_mask(self):
        rng = np.random.default_rng(9)
        first, second = rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4))
        before = accumulated_mask({0: pool_with(0, first)}, 8, 8)
        after = accumulated_mask({0: pool_with(0, first, second)}, 8, 8)
        self.assertTrue(np.all(after <= before))

    def test_mask_features(self):
        features = np.random.default_rng(3).normal(size=(1, 2, 3, 3))
        np.testing.assert_array_equal(mask_features(features, np.ones((1, 1, 3, 3))).data, features)
        mask = np.ones((1, 1, 3, 3))
        mask[0, 0, 1, 2] = 0.0
        np.testing.assert_array_equal(mask_features(features, mask).data[0, :, 1, 2], [0.0, 0.0])
        np.testing.assert_allclose(mask_features(features, np.full((1, 1, 3, 3), 0.5)).data, 0.5 * features)

    def test_no_gradient_flows_into_masks(self):
        features = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        masked = mask_features(features, np.full((1, 1, 2, 2), 0.5))
        masked.sum().backward()
        np.testing.assert_allclose(features.grad, 0.5)

    def test_removing_one_category_keeps_other_pools(self):
        pools = {0: pool_with(0, [[0.1, 0.9]]), 1: pool_with(1, [[0.7, 0.3]])}
        stored = pools[1].maps[0].values.copy()
        accumulated_mask({1: pools[1]}, 1, 2)
        np.testing.assert_array_equal(pools[1].maps[0].values, stored)


class MergeTests(SimpleTestCase):
    def test_single_map_pool(self):
        values = np.array([[0.1, 0.4], [0.9, 1.0]])
        np.testing.assert_allclose(merge_final(pool_with(0, values), 2, 2), values)

    def test_entrywise_min(self):
        np.testing.assert_allclose(merge_final(pool_with(0, [[1.0, 0.2]], [[0.3, 1.0]]), 1, 2), [[0.3, 0.2]])

    def test_merge_is_monotone_in_steps(self):
        rng = np.random.default_rng(12)
        arrays = [rng.uniform(size=(4, 4)) for _ in range(4)]
        previous = None
        for count in range(1, 5):
            merged = merge_final(pool_with(0, *arrays[:count]), 8, 8)
            if previous is not None:
                self.assertTrue(np.all(merged <= previous))
            previous = merged

    def test_merge_is_idempotent_and_commutative(self):
        a, b = np.array([[0.2, 0.8]]), np.array([[0.5, 0.1]])
        ab = merge_final(pool_with(0, a, b), 1, 2)
        ba = merge_final(pool_with(0, b, a), 1, 2)
        aab = merge_final(pool_with(0, a, a, b), 1, 2)
        np.testing.assert_array_equal(ab, ba)
        np.testing.assert_array_equal(ab, aab)

    def test_empty_pool_raises(self):
        with self.assertRaises(MergeError):
            merge_final(RegionMapPool(image_id="scene-00000", category=0), 4, 4)

    def test_horizon_limits_merged_steps(self):
        pool = pool_with(0, [[1.0, 0.2]], [[0.3, 1.0]])
        np.testing.assert_allclose(merge_final(pool, 1, 2, horizon=1), [[1.0, 0.2]])
        np.testing.assert_allclose(merge_final(pool, 1, 2, horizon=2), merge_final(pool, 1, 2))

    def test_horizon_before_first_map_raises(self):
        pool = RegionMapPool(image_id="scene-00000", category=0)
        pool.append(RegionMap(np.ones((2, 2)), 0, 2, 32))
        with self.assertRaises(MergeError):
            merge_final(pool, 2, 2, horizon=1)


class PoolTests(SimpleTestCase):
    def test_stopped_pool_rejects_maps(self):
        pool = pool_with(0, [[0.0]])
        pool.stop(1)
        with self.assertRaises(PoolClosedError):
            pool.append(RegionMap(np.zeros((1, 1)), 0, 2, 32))

    def test_steps_strictly_increase(self):
        pool = pool_with(0, [[0.0]], [[0.5]])
        with self.assertRaises(PoolClosedError):
            pool.append(RegionMap(np.zeros((1, 1)), 0, 2, 32))

    def test_failed_pool(self):
        pool = RegionMapPool(image_id="scene-00001", category=2)
        pool.stop(0)
        self.assertTrue(pool.failed)

    def test_save_and_load(self):
        pools = PoolSet([pool_with(0, [[0.1, 0.2]], [[0.3, 0.4]]), pool_with(1, [[0.5, 0.6]])])
        pools.get("scene-00000", 1).stop(1)
        with tempfile.TemporaryDirectory() as directory:
            pools.save(directory)
            loaded = PoolSet.load(directory)
        self.assertEqual(len(loaded), 2)
        restored = loaded.get("scene-00000", 0)
        self.assertEqual(restored.steps, [1, 2])
        np.testing.assert_array_equal(restored.maps[1].values, [[0.3, 0.4]])
        self.assertTrue(loaded.get("scene-00000", 1).stopped)
        self.assertEqual(loaded.get("scene-00000", 1).stop_step, 1)


class StopTestTests(SimpleTestCase):
    def setUp(self):
        self.config = MiningConfig()

    def test_all_ones_map_is_empty(self):
        self.assertTrue(is_empty_map(np.ones((8, 8)), 0.99, self.config))

    def test_partially_mined_map_is_stored(self):
        values = np.ones((10, 10))
        values[:3] = 0.1
        self.assertFalse(is_empty_map(values, 0.9, self.config))

    def test_unrecognized_object_is_empty(self):
        values = np.ones((10, 10))
        values[:3] = 0.1
        self.assertTrue(is_empty_map(values, 0.05, self.config))

    def test_all_ones_regularizer_value(self):
        self.assertEqual(ops.frobenius_norm(Tensor(np.ones((2, 2)))).item(), 2.0)


class MiningPhaseTests(SimpleTestCase):
    def setUp(self):
        self.dataset = tiny_dataset(num_scenes=6)
        self.nets = tiny_networks(seed=3)
        pretrain_classifier(self.nets, self.dataset, PretrainConfig(epochs=1), enforce_gate=False)
        self.nets.init_generator_from_modulator()
        self.cache = FeatureCache(self.nets, self.dataset.train)
        self.pools = PoolSet.for_samples(self.dataset.train)

    def test_zero_modulator_epochs_leave_modulator(self):
        before = [p.data.copy() for p in self.nets.parameters("modulator")]
        modulator_phase(self.nets, self.cache, self.pools, tiny_mining_config(modulator_epochs=0), 1)
        for value, param in zip(before, self.nets.parameters("modulator")):
            np.testing.assert_array_equal(value, param.data)

    def test_generator_phase_only_moves_generator(self):
        frozen = [p.data.copy() for p in self.nets.parameters("extractor") + self.nets.parameters("modulator")]
        generator_phase(self.nets, self.cache, self.pools, tiny_mining_config(lr=0.1), 1)
        for value, param in zip(frozen, self.nets.parameters("extractor") + self.nets.parameters("modulator")):
            np.testing.assert_array_equal(value, param.data)

    def test_generator_loss_is_scalar_with_region_maps(self):
        masked = self.cache.masked_features(self.pools, 1, 16)[:2]
        loss, maps = generator_loss(self.nets, masked, self.cache.labels[:2], tiny_mining_config())
        self.assertEqual(loss.shape, ())
        self.assertEqual(maps.shape, (2, 4, 4, 4))
        self.assertTrue(np.all((maps >= 0) & (maps <= 1)))

    def test_stopped_pools_never_grow(self):
        for pool in self.pools:
            pool.stop(0)
        emit_and_store(self.nets, self.cache, self.pools, tiny_mining_config(), 1)
        self.assertTrue(all(not pool.maps for pool in self.pools))

    def test_max_steps_one_stores_at_most_one_map(self):
        result = run_mining(self.nets, self.dataset.train, tiny_mining_config(max_steps=1))
        self.assertTrue(result.pools.all_stopped())
        for pool in result.pools:
            self.assertEqual(len(pool.maps), 0 if pool.failed else 1)

    def test_extractor_unchanged_by_mining(self):
        before = [p.data.copy() for p in self.nets.parameters("extractor")]
        with tempfile.TemporaryDirectory() as directory:
            result = run_mining(self.nets, self.dataset.train, tiny_mining_config(), snapshot_dir=directory)
        for value, param in zip(before, self.nets.parameters("extractor")):
            np.testing.assert_array_equal(value, param.data)
        self.assertLessEqual(result.steps_run, 2)
        self.assertEqual(result.natural_stops + result.forced_stops, len(result.pools))


@pytest.mark.slow
class RegularizerLimitTests(SimpleTestCase):
    def test_large_lambda_drives_maps_to_all_ones(self):
        dataset = tiny_dataset(num_scenes=5, seed=21)
        nets = tiny_networks(seed=8)
        pretrain_classifier(nets, dataset, PretrainConfig(epochs=1), enforce_gate=False)
        nets.init_generator_from_modulator()
        cache = FeatureCache(nets, dataset.samples)
        pools = PoolSet.for_samples(dataset.samples)
        config = tiny_mining_config(lam=1e3, lr=1e-3, generator_epochs=30, batch_sizes=(5, 5))
        history = generator_phase(nets, cache, pools, config, 1)
        self.assertGreaterEqual(history[-1]["mean_map"], 0.95)


class DefaultPretrainedCase(SimpleTestCase):
    """Pretrains the default networks once per class and hands out fresh copies"""

    spec = DatasetSpec()

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = generate_dataset(cls.spec)
        cls.checkpoint = tempfile.TemporaryDirectory()
        nets = MinerNetworks(ExtractorConfig(), HeadConfig(num_categories=4), seed=cls.spec.seed)
        cls.pretrain_log = RunLog()
        pretrain_classifier(nets, cls.dataset, PretrainConfig(), cls.pretrain_log, enforce_gate=False)
        save_networks(nets, cls.checkpoint.name)

    @classmethod
    def tearDownClass(cls):
        cls.checkpoint.cleanup()
        super().tearDownClass()

    def pretrained(self):
        return load_networks(self.checkpoint.name)


@pytest.mark.slow
class MiningPhaseTrendTests(DefaultPretrainedCase):
    def test_pretraining_loss_trends_down(self):
        losses = [event["loss"] for event in self.pretrain_log.of("pretrain_epoch")]
        self.assertEqual(len(losses), PretrainConfig().epochs)
        self.assertLess(np.mean(losses[-3:]), np.mean(losses[:3]))

    def test_modulator_phase_on_unmasked_features(self):
        nets = self.pretrained()
        nets.init_generator_from_modulator()
        samples = self.dataset.train
        cache = FeatureCache(nets, samples)
        run_log = RunLog()
        config = MiningConfig(seed=self.spec.seed)
        losses = modulator_phase(nets, cache, PoolSet.for_samples(samples), config, 1, run_log)

        self.assertEqual(len(losses), config.modulator_epochs)
        self.assertEqual([event["loss"] for event in run_log.of("modulator_epoch")], losses)
        self.assertLessEqual(np.mean(losses[-3:]), np.mean(losses[:3]))
        macro_f1, _ = f1_scores(classify(nets, stack_images(self.dataset.eval)), stack_labels(self.dataset.eval))
        self.assertGreaterEqual(macro_f1, 0.95)

    def test_generator_without_regularizer_mines_more(self):
        nets = self.pretrained()
        nets.init_generator_from_modulator()
        samples = self.dataset.train
        cache = FeatureCache(nets, samples)
        pools = PoolSet.for_samples(samples)
        config = MiningConfig(lam=0.0, generator_epochs=3, seed=self.spec.seed)
        masked = cache.masked_features(pools, 1, config.scales[0])
        positive = cache.labels > 0.5

        before, _ = emit_maps(nets, masked, config)
        generator_phase(nets, cache, pools, config, 1)
        after, _ = emit_maps(nets, masked, config)
        self.assertLess(after.mean(axis=(2, 3))[positive].mean(), before.mean(axis=(2, 3))[positive].mean())


@pytest.mark.slow
class ErasedCategoryStoppingTests(DefaultPretrainedCase):
    def test_erased_category_gives_all_ones_map_and_stops(self):
        samples = [copy.deepcopy(s) for s in self.dataset.train]
        erased = [s for s in samples if s.labels[0] == 1][:5]
        for sample in erased:
            sample.image = sample.image * ~sample.gt_masks[0][None]

        nets = self.pretrained()
        nets.init_generator_from_modulator()
        config = MiningConfig(max_steps=2, seed=self.spec.seed)
        cache = FeatureCache(nets, erased)
        pools = PoolSet.for_samples(erased)
        generator_phase(nets, cache, pools, config, 1)
        maps, _ = emit_maps(nets, cache.masked_features(pools, 1, config.scales[0]), config)
        for row in range(len(erased)):
            self.assertGreaterEqual(maps[row, 0].mean(), 0.95)

        result = run_mining(self.pretrained(), samples, config)
        for sample in erased:
            pool = result.pools.get(sample.id, 0)
            self.assertTrue(pool.stopped)
            self.assertFalse(pool.forced)
            self.assertLessEqual(pool.stop_step, 1)


def median_stop_step(spec):
    dataset = generate_dataset(spec)
    nets = MinerNetworks(ExtractorConfig(), HeadConfig(num_categories=4), seed=spec.seed)
    pretrain_classifier(nets, dataset, PretrainConfig(), enforce_gate=False)
    result = run_mining(nets, dataset.train, MiningConfig(seed=spec.seed))
    return float(np.median([pool.stop_step for pool in result.pools]))


@pytest.mark.slow
class ObjectSizeAdaptivityTests(SimpleTestCase):
    def test_large_objects_take_more_steps(self):
        tiny = median_stop_step(DatasetSpec(size_range=(0.02, 0.04)))
        large = median_stop_step(DatasetSpec(size_range=(0.25, 0.30)))
        self.assertLessEqual(tiny, 2)
        self.assertGreater(large, tiny)
