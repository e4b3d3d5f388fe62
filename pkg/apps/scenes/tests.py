import json
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import ChecksumError, ConfigurationError, FormatVersionError
from apps.scenes.storage import load_dataset, save_dataset
from apps.scenes.synth import DatasetSpec, generate_dataset, generate_scene


class DatasetSpecTests(SimpleTestCase):
    def test_rejects_inverted_size_range(self):
        with self.assertRaises(ConfigurationError):
            DatasetSpec(size_range=(0.3, 0.1))

    def test_rejects_minimum_size_above_coverage_cap(self):
        with self.assertRaises(ConfigurationError):
            DatasetSpec(num_scenes=5, size_range=(0.5, 0.6), max_objects=1)

    def test_rejects_more_categories_than_shape_families(self):
        with self.assertRaises(ConfigurationError):
            DatasetSpec(num_categories=7)

    def test_dict_round_trip(self):
        spec = DatasetSpec(num_scenes=12, seed=5)
        self.assertEqual(DatasetSpec.from_dict(spec.to_dict()), spec)


class GenerateSceneTests(SimpleTestCase):
    def test_single_object_area_matches_fixed_fraction(self):
        spec = DatasetSpec(num_scenes=20, max_objects=1, size_range=(0.05, 0.05), seed=3)
        target = 0.05 * spec.image_size**2
        for index in range(spec.num_scenes):
            sample = generate_scene(spec, index)
            self.assertEqual(len(sample.gt_masks), 1)
            (area,) = sample.object_areas.values()
            self.assertLessEqual(abs(area - target), 0.1 * target)

    def test_deterministic_in_seed_and_index(self):
        spec = DatasetSpec(num_scenes=4, seed=11)
        first, second = generate_scene(spec, 2), generate_scene(spec, 2)
        np.testing.assert_array_equal(first.image, second.image)
        np.testing.assert_array_equal(first.labels, second.labels)
        self.assertEqual(first.id, second.id)

    def test_every_scene_keeps_one_object_under_a_tight_cap(self):
        spec = DatasetSpec(num_scenes=12, image_size=32, size_range=(0.25, 0.3), max_coverage=0.45, seed=9)
        for index in range(spec.num_scenes):
            sample = generate_scene(spec, index)
            self.assertEqual(len(sample.categories), 1)
            self.assertEqual(set(sample.gt_masks), set(sample.categories))

    def test_index_out_of_range(self):
        with self.assertRaises(ConfigurationError):
            generate_scene(DatasetSpec(num_scenes=3), 3)

    def test_image_range(self):
        sample = generate_scene(DatasetSpec(num_scenes=1, seed=2), 0)
        self.assertEqual(sample.image.shape, (3, 64, 64))
        self.assertGreaterEqual(sample.image.min(), 0.0)
        self.assertLessEqual(sample.image.max(), 1.0)


class GenerateDatasetTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.dataset = generate_dataset(DatasetSpec())

    def test_split_sizes_and_disjointness(self):
        self.assertEqual(len(self.dataset.train_indices), 180)
        self.assertEqual(len(self.dataset.eval_indices), 20)
        self.assertFalse(set(self.dataset.train_indices) & set(self.dataset.eval_indices))

    def test_label_mask_consistency_and_disjoint_masks(self):
        for sample in self.dataset.samples:
            present = set(np.flatnonzero(sample.labels).tolist())
            self.assertEqual(present, set(sample.gt_masks))
            self.assertEqual(present, {c for c, a in sample.object_areas.items() if a > 0})
            self.assertTrue(1 <= len(present) <= self.dataset.spec.max_objects)
            stacked = np.stack(list(sample.gt_masks.values())).astype(int)
            self.assertLessEqual(stacked.sum(axis=0).max(), 1)

    def test_every_category_is_common(self):
        counts = np.stack([s.labels for s in self.dataset.samples]).sum(axis=0)
        self.assertTrue(np.all(counts >= 20), counts)

    def test_label_marginals_agree_across_split(self):
        train = np.stack([s.labels for s in self.dataset.train]).mean(axis=0)
        evaluation = np.stack([s.labels for s in self.dataset.eval]).mean(axis=0)
        self.assertTrue(np.all(np.abs(train - evaluation) < 0.2))

    def test_areas_cover_both_tails(self):
        pixels = self.dataset.spec.image_size**2
        fractions = [a / pixels for s in self.dataset.samples for a in s.object_areas.values()]
        self.assertTrue(any(f < 0.05 for f in fractions))
        self.assertTrue(any(f > 0.2 for f in fractions))


class StorageTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dataset = generate_dataset(DatasetSpec(num_scenes=10, seed=8))

    def test_round_trip_is_bitwise(self):
        save_dataset(self.dataset, self.tmp.name, previews=True)
        loaded = load_dataset(self.tmp.name)
        self.assertEqual(loaded.spec, self.dataset.spec)
        self.assertEqual(loaded.train_indices, self.dataset.train_indices)
        for original, restored in zip(self.dataset.samples, loaded.samples):
            self.assertEqual(original.image.tobytes(), restored.image.tobytes())
            np.testing.assert_array_equal(original.labels, restored.labels)
            self.assertEqual(original.object_areas, restored.object_areas)
            for category, mask in original.gt_masks.items():
                np.testing.assert_array_equal(mask, restored.gt_masks[category])
        self.assertTrue((Path(self.tmp.name) / "previews" / "scene-00000.png").exists())

    def test_manifest_labels_match(self):
        manifest_path = save_dataset(self.dataset, self.tmp.name)
        manifest = json.loads(manifest_path.read_text())
        for record, sample in zip(manifest["scenes"], self.dataset.samples):
            self.assertEqual(record["labels"], sample.labels.tolist())

    def test_corrupted_byte_raises(self):
        save_dataset(self.dataset, self.tmp.name)
        blob = Path(self.tmp.name) / "scenes" / "scene-00004.f64"
        payload = bytearray(blob.read_bytes())
        payload[17] ^= 0x01
        blob.write_bytes(bytes(payload))
        with self.assertRaises(ChecksumError):
            load_dataset(self.tmp.name)

    def test_version_mismatch_raises(self):
        manifest_path = save_dataset(self.dataset, self.tmp.name)
        manifest = json.loads(manifest_path.read_text())
        manifest["format_version"] = 2
        manifest_path.write_text(json.dumps(manifest))
        with self.assertRaises(FormatVersionError):
            load_dataset(self.tmp.name)
