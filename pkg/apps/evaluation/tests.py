import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import DimensionError, InsufficientDataError, LabelError
from apps.evaluation.metrics import (
    BACKGROUND,
    EvalConfig,
    acceptance_checks,
    adaptivity_stats,
    build_report,
    merged_map,
    newly_mined_fractions,
    pseudo_mask,
    region_metrics,
    region_rows,
    spearman,
    step_curve,
)
from apps.miner.engine import MiningConfig, merge_final
from apps.miner.pools import PoolSet, RegionMap, RegionMapPool
from apps.scenes.synth import SceneSample

SIZE = 8


def square(rows, cols):
    mask = np.zeros((SIZE, SIZE), dtype=bool)
    mask[rows, cols] = True
    return mask


def make_sample(index, masks):
    labels = np.zeros(3, dtype=np.int64)
    for category in masks:
        labels[category] = 1
    return SceneSample(
        id=f"scene-{index:05d}",
        image=np.zeros((3, SIZE, SIZE)),
        labels=labels,
        gt_masks=masks,
        object_areas={c: int(m.sum()) for c, m in masks.items()},
    )


def make_pool(sample, category, regions, stop_step=None):
    """One map per region; the region gets value 0, the rest 1"""
    pool = RegionMapPool(image_id=sample.id, category=category)
    for step, region in enumerate(regions, start=1):
        pool.append(RegionMap(np.where(region, 0.0, 1.0), category, step, SIZE * 4))
    pool.stop(len(regions) if stop_step is None else stop_step)
    return pool


class PseudoMaskTests(SimpleTestCase):
    def test_all_ones_map_is_background(self):
        mask = pseudo_mask({0: np.ones((4, 4))})
        self.assertTrue(np.all(mask.assignment == BACKGROUND))

    def test_zero_disk_is_labeled(self):
        yy, xx = np.mgrid[0:9, 0:9]
        disk = (yy - 4) ** 2 + (xx - 4) ** 2 <= 4
        mask = pseudo_mask({2: np.where(disk, 0.0, 1.0)})
        np.testing.assert_array_equal(mask.region(2), disk)

    def test_strongest_evidence_wins(self):
        mask = pseudo_mask({0: np.array([[0.2]]), 1: np.array([[0.4]])})
        self.assertEqual(mask.assignment[0, 0], 0)

    def test_ties_go_to_lowest_category(self):
        mask = pseudo_mask({3: np.array([[0.1]]), 1: np.array([[0.1]])})
        self.assertEqual(mask.assignment[0, 0], 1)

    def test_raising_threshold_never_adds_foreground(self):
        rng = np.random.default_rng(0)
        maps = {0: rng.uniform(size=(6, 6)), 1: rng.uniform(size=(6, 6))}
        previous = None
        for theta in np.linspace(0.0, 1.0, 11):
            foreground = pseudo_mask(maps, theta).assignment != BACKGROUND
            if previous is not None:
                self.assertFalse(np.any(foreground & ~previous))
            previous = foreground

    def test_no_categories(self):
        with self.assertRaises(LabelError):
            pseudo_mask({})


class RegionMetricTests(SimpleTestCase):
    def test_identical_masks(self):
        mask = square(slice(2, 5), slice(2, 5))
        self.assertEqual(region_metrics(mask, mask)["iou"], 1.0)

    def test_disjoint_masks(self):
        self.assertEqual(region_metrics(square(0, 0), square(1, 1))["iou"], 0.0)

    def test_top_half_against_left_half(self):
        top = square(slice(0, 4), slice(None))
        left = square(slice(None), slice(0, 4))
        metrics = region_metrics(top, left)
        self.assertAlmostEqual(metrics["iou"], 1 / 3)
        self.assertAlmostEqual(metrics["precision"], 0.5)
        self.assertAlmostEqual(metrics["recall"], 0.5)

    def test_empty_against_empty(self):
        empty = np.zeros((3, 3), dtype=bool)
        self.assertEqual(region_metrics(empty, empty), {"precision": 1.0, "recall": 1.0, "iou": 1.0})

    def test_empty_prediction(self):
        metrics = region_metrics(np.zeros((3, 3), dtype=bool), np.ones((3, 3), dtype=bool))
        self.assertEqual(metrics, {"precision": 0.0, "recall": 0.0, "iou": 0.0})

    def test_resolution_mismatch(self):
        with self.assertRaises(DimensionError):
            region_metrics(np.zeros((2, 2)), np.zeros((3, 3)))


class StepCurveTests(SimpleTestCase):
    def setUp(self):
        truth = square(slice(0, 4), slice(0, 8))
        self.sample = make_sample(0, {0: truth, 1: square(slice(6, 8), slice(0, 2))})
        self.pools = PoolSet(
            [
                make_pool(
                    self.sample,
                    0,
                    [square(slice(0, 2), slice(0, 8)), square(slice(2, 4), slice(0, 8))],
                ),
                make_pool(self.sample, 1, [square(slice(6, 8), slice(0, 2))]),
            ]
        )
        self.config = EvalConfig()

    def test_first_horizon_uses_first_maps_only(self):
        curve = step_curve(self.pools, [self.sample], SIZE, self.config, t_max=3)
        self.assertAlmostEqual(curve[0]["recall"], (0.5 + 1.0) / 2)
        self.assertAlmostEqual(curve[1]["recall"], 1.0)

    def test_last_horizon_equals_full_merge(self):
        curve = step_curve(self.pools, [self.sample], SIZE, self.config, t_max=5)
        rows = region_rows(self.pools, [self.sample], SIZE, self.config)
        for key in ("precision", "recall", "iou", "pseudo_iou"):
            self.assertEqual(curve[-1][key], float(np.mean([row[key] for row in rows])))

    def test_full_merge_matches_merge_final(self):
        pool = self.pools.get(self.sample.id, 0)
        rows = region_rows(self.pools, [self.sample], SIZE, self.config)
        expected = region_metrics(1.0 - merge_final(pool, SIZE, SIZE) >= 0.5, self.sample.gt_masks[0])
        self.assertEqual(rows[0]["iou"], expected["iou"])

    def test_recall_curve_is_non_decreasing(self):
        curve = step_curve(self.pools, [self.sample], SIZE, self.config, t_max=4)
        recalls = [row["recall"] for row in curve]
        self.assertTrue(all(b >= a - 0.01 for a, b in zip(recalls, recalls[1:])))

    def test_failed_pool_contributes_an_empty_region(self):
        sample = make_sample(1, {2: square(0, 0)})
        failed = RegionMapPool(image_id=sample.id, category=2)
        failed.stop(0)
        rows = region_rows(PoolSet([failed]), [sample], SIZE, self.config)
        self.assertEqual(rows[0]["recall"], 0.0)
        self.assertEqual(rows[0]["steps"], 0)

    def test_merged_map_follows_merge_final(self):
        pool = self.pools.get(self.sample.id, 0)
        np.testing.assert_allclose(merged_map(pool, SIZE, SIZE), merge_final(pool, SIZE, SIZE))
        np.testing.assert_allclose(merged_map(pool, SIZE, SIZE, horizon=1), merge_final(pool, SIZE, SIZE, horizon=1))

    def test_nothing_to_merge_counts_as_unmined(self):
        pool = RegionMapPool(image_id=self.sample.id, category=0)
        np.testing.assert_array_equal(merged_map(pool, SIZE, SIZE), np.ones((SIZE, SIZE)))
        late = RegionMapPool(image_id=self.sample.id, category=0)
        late.append(RegionMap(np.zeros((SIZE, SIZE)), 0, 3, SIZE * 4))
        np.testing.assert_array_equal(merged_map(late, SIZE, SIZE, horizon=2), np.ones((SIZE, SIZE)))


class NewlyMinedTests(SimpleTestCase):
    def test_fractions_count_only_fresh_area(self):
        sample = make_sample(0, {0: square(slice(0, 8), slice(0, 8))})
        first = square(slice(0, 4), slice(0, 8))
        second = square(slice(0, 6), slice(0, 8))
        pools = PoolSet([make_pool(sample, 0, [first, second])])
        fractions = newly_mined_fractions(pools, SIZE, theta_mask=0.5)
        self.assertEqual([row["step"] for row in fractions], [1, 2])
        self.assertAlmostEqual(fractions[0]["fraction"], 0.5)
        self.assertAlmostEqual(fractions[1]["fraction"], 0.25)


class AdaptivityTests(SimpleTestCase):
    def test_monotone_pairs(self):
        areas = list(range(10, 30))
        stats = adaptivity_stats(areas, [a // 5 for a in areas])
        self.assertGreater(stats["spearman"], 0.9)
        self.assertAlmostEqual(spearman(areas, areas), 1.0)
        medians = {row["bin"]: row["median_steps"] for row in stats["bins"]}
        self.assertGreater(medians["large"], medians["small"])

    def test_constant_steps_give_zero(self):
        self.assertEqual(adaptivity_stats(list(range(20)), [2] * 20)["spearman"], 0.0)

    def test_too_few_pairs(self):
        with self.assertRaises(InsufficientDataError):
            adaptivity_stats(list(range(19)), list(range(19)))


class ReportTests(SimpleTestCase):
    def test_build_report_and_checks(self):
        samples, pools = [], []
        rng = np.random.default_rng(4)
        for index in range(24):
            height = int(rng.integers(1, 8))
            truth = square(slice(0, height), slice(0, 8))
            sample = make_sample(index, {0: truth})
            steps = [square(slice(row, row + 1), slice(0, 8)) for row in range(height)]
            samples.append(sample)
            pools.append(make_pool(sample, 0, steps))
        mining_config = MiningConfig(scales=(16, SIZE * 4), batch_sizes=(4, 4))
        report = build_report(PoolSet(pools), samples, mining_config, EvalConfig()).to_dict()

        self.assertEqual(len(report["regions"]), 24)
        self.assertAlmostEqual(report["adaptivity"]["spearman"], 1.0)
        for row in report["regions"]:
            for key in ("precision", "recall", "iou", "pseudo_iou"):
                self.assertTrue(0.0 <= row[key] <= 1.0)

        checks = acceptance_checks(report, mining_config)
        self.assertTrue(checks["spearman_at_least_0_5"])
        self.assertTrue(checks["recall_non_decreasing"])
        self.assertIsNone(checks["multi_scale_not_worse"])
