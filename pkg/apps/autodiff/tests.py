import json

import numpy as np
from django.test import SimpleTestCase

from apps.autodiff import ops
from apps.autodiff.checkpoint import load_parameters, restore_parameters, save_parameters
from apps.autodiff.gradcheck import check_gradient
from apps.autodiff.optim import Adam, sgd_step
from apps.autodiff.tensor import Parameter, Tensor, no_grad
from apps.core.exceptions import (
    ChecksumError,
    ConfigurationError,
    DimensionError,
    FormatVersionError,
    LabelError,
    MissingGradientError,
    NonFiniteError,
)

CASES = 100
TOLERANCE = 1e-4


def away_from_zero(rng, shape, gap=1e-3):
    values = rng.uniform(-2.0, 2.0, size=shape)
    return np.where(np.abs(values) < gap, np.sign(values + 1e-12) * (gap + 0.1), values)


def distinct_values(rng, shape):
    # Values separated by >= 1e-2 so windowed max/min have no near-ties
    count = int(np.prod(shape))
    grid = np.linspace(-2.0, 2.0, count)
    return rng.permutation(grid).reshape(shape)


class Conv2dTests(SimpleTestCase):
    def test_one_by_one_kernel_scales(self):
        out = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor([[[[2.0]]]]), Tensor([0.0]))
        np.testing.assert_array_equal(out.data, np.full((1, 1, 3, 3), 2.0))

    def test_hand_evaluated_sum(self):
        x = Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        out = ops.conv2d(x, Tensor(np.ones((1, 1, 2, 2))))
        np.testing.assert_array_equal(out.data, [[[[10.0]]]])

    def test_kernel_gradient_equals_input(self):
        kernel = Parameter(np.ones((1, 1, 2, 2)))
        out = ops.conv2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), kernel)
        out.sum().backward()
        np.testing.assert_allclose(kernel.grad, [[[[1.0, 2.0], [3.0, 4.0]]]])

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(1)
        for case in range(CASES):
            stride, padding = [(1, 0), (1, 1), (2, 1)][case % 3]
            size = 5 if stride == 2 else 4
            x = rng.uniform(-2, 2, (1, 2, size, size))
            w = rng.uniform(-2, 2, (2, 2, 3, 3))
            b = rng.uniform(-2, 2, 2)

            def fn(x, w, b):
                return ops.conv2d(x, w, b, stride=stride, padding=padding)

            for index in range(3):
                self.assertLess(check_gradient(fn, [x, w, b], index, rng), TOLERANCE)

    def test_shape_mismatch_is_dimension_error(self):
        with self.assertRaises(DimensionError):
            ops.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))

    def test_non_integer_output_is_configuration_error(self):
        with self.assertRaises(ConfigurationError):
            ops.conv2d(Tensor(np.ones((1, 1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), stride=2)


class ReluTests(SimpleTestCase):
    def test_values(self):
        np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_all_negative_has_zero_gradient(self):
        x = Tensor(-np.ones(4), requires_grad=True)
        out = ops.relu(x)
        np.testing.assert_array_equal(out.data, np.zeros(4))
        out.sum().backward()
        np.testing.assert_array_equal(x.grad, np.zeros(4))

    def test_gradient(self):
        rng = np.random.default_rng(2)
        for _ in range(CASES):
            x = away_from_zero(rng, (3, 4))
            self.assertLess(check_gradient(ops.relu, [x], 0, rng), TOLERANCE)


class MaxPoolTests(SimpleTestCase):
    def test_two_by_two(self):
        out = ops.max_pool(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
        np.testing.assert_array_equal(out.data, [[[[4.0]]]])

    def test_constant_routes_to_first_element(self):
        x = Tensor(np.full((1, 1, 2, 2), 5.0), requires_grad=True)
        out = ops.max_pool(x, 2, 2)
        self.assertEqual(out.data[0, 0, 0, 0], 5.0)
        out.sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_paper_pooling_shape_and_gradient(self):
        rng = np.random.default_rng(3)
        for _ in range(CASES):
            x = distinct_values(rng, (1, 1, 8, 8))
            self.assertEqual(ops.max_pool(Tensor(x), 3, 2, 1).shape, (1, 1, 4, 4))

            def fn(x):
                return ops.max_pool(x, 3, 2, 1)

            self.assertLess(check_gradient(fn, [x], 0, rng), TOLERANCE)


class GlobalAvgPoolTests(SimpleTestCase):
    def test_mean(self):
        out = ops.global_avg_pool(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]))
        np.testing.assert_array_equal(out.data, [[2.5]])

    def test_constant(self):
        out = ops.global_avg_pool(Tensor(np.full((1, 1, 3, 5), 0.7)))
        self.assertAlmostEqual(out.data[0, 0], 0.7)

    def test_backward_distributes_evenly(self):
        x = Tensor(np.zeros((1, 1, 2, 3)), requires_grad=True)
        ops.global_avg_pool(x).backward(np.array([[6.0]]))
        np.testing.assert_allclose(x.grad, np.ones((1, 1, 2, 3)))

    def test_gradient(self):
        rng = np.random.default_rng(4)
        for _ in range(CASES):
            x = rng.uniform(-2, 2, (2, 3, 3, 3))
            self.assertLess(check_gradient(ops.global_avg_pool, [x], 0, rng), TOLERANCE)


class BilinearResizeTests(SimpleTestCase):
    def test_identity_size(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(1, 2, 5, 7))
        np.testing.assert_array_equal(ops.bilinear_resize(Tensor(x), 5, 7).data, x)

    def test_hand_evaluated_upsample(self):
        out = ops.bilinear_resize(Tensor([[[[0.0, 1.0]]]]), 1, 4)
        np.testing.assert_allclose(out.data[0, 0, 0], [0.0, 0.25, 0.75, 1.0])

    def test_constant_preserved_exactly(self):
        for size in [(1, 1), (3, 9), (16, 16), (40, 7)]:
            out = ops.bilinear_resize(Tensor(np.full((1, 1, 6, 4), 0.3)), *size)
            self.assertTrue(np.all(out.data == 0.3))

    def test_range_preserved(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 3, size=(1, 1, 5, 5))
        out = ops.bilinear_resize(Tensor(x), 13, 3).data
        self.assertGreaterEqual(out.min(), x.min())
        self.assertLessEqual(out.max(), x.max())

    def test_gradient(self):
        rng = np.random.default_rng(7)
        for case in range(CASES):
            x = rng.uniform(-2, 2, (1, 1, 3, 4))
            out_h, out_w = [(6, 8), (2, 3), (5, 5)][case % 3]

            def fn(x):
                return ops.bilinear_resize(x, out_h, out_w)

            self.assertLess(check_gradient(fn, [x], 0, rng), TOLERANCE)


class ElementwiseMinTests(SimpleTestCase):
    def test_values(self):
        out = ops.elementwise_min([Tensor([1.0, 0.3]), Tensor([0.5, 1.0])])
        np.testing.assert_array_equal(out.data, [0.5, 0.3])

    def test_single_input_is_identity(self):
        np.testing.assert_array_equal(ops.elementwise_min([Tensor([0.2, 0.9])]).data, [0.2, 0.9])

    def test_algebra(self):
        rng = np.random.default_rng(8)
        a, b, c = (Tensor(rng.uniform(size=6)) for _ in range(3))
        ab = ops.elementwise_min([a, b])
        np.testing.assert_array_equal(ops.elementwise_min([a, ab]).data, ab.data)
        np.testing.assert_array_equal(ab.data, ops.elementwise_min([b, a]).data)
        np.testing.assert_array_equal(
            ops.elementwise_min([ab, c]).data,
            ops.elementwise_min([a, ops.elementwise_min([b, c])]).data,
        )
        self.assertTrue(np.all(ops.elementwise_min([a, b, c]).data <= ab.data))

    def test_tie_goes_to_first(self):
        a = Tensor([0.5], requires_grad=True)
        b = Tensor([0.5], requires_grad=True)
        ops.elementwise_min([a, b]).sum().backward()
        np.testing.assert_array_equal(a.grad, [1.0])
        self.assertTrue(b.grad is None or b.grad[0] == 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(9)
        for _ in range(CASES):
            a = rng.uniform(-2, 2, 6)
            b = a + np.where(rng.uniform(size=6) < 0.5, -1, 1) * rng.uniform(0.01, 1, 6)

            def fn(a, b):
                return ops.elementwise_min([a, b])

            self.assertLess(check_gradient(fn, [a, b], 0, rng), TOLERANCE)
            self.assertLess(check_gradient(fn, [a, b], 1, rng), TOLERANCE)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            ops.elementwise_min([Tensor(np.ones(2)), Tensor(np.ones(3))])


class MultiplyTests(SimpleTestCase):
    def test_identity_and_zero_masks(self):
        rng = np.random.default_rng(10)
        features = Tensor(rng.uniform(size=(2, 3, 4, 4)))
        ones = ops.multiply(features, Tensor(np.ones((2, 1, 4, 4))))
        zeros = ops.multiply(features, Tensor(np.zeros((2, 1, 4, 4))))
        np.testing.assert_array_equal(ones.data, features.data)
        np.testing.assert_array_equal(zeros.data, np.zeros((2, 3, 4, 4)))

    def test_gradient_with_channel_broadcast(self):
        rng = np.random.default_rng(11)
        for _ in range(CASES):
            a = rng.uniform(-2, 2, (1, 3, 2, 2))
            b = rng.uniform(-2, 2, (1, 1, 2, 2))
            self.assertLess(check_gradient(ops.multiply, [a, b], 0, rng), TOLERANCE)
            self.assertLess(check_gradient(ops.multiply, [a, b], 1, rng), TOLERANCE)

    def test_incompatible_shapes(self):
        with self.assertRaises(DimensionError):
            ops.multiply(Tensor(np.ones((1, 3, 4, 4))), Tensor(np.ones((1, 2, 4, 4))))


class MultilabelBceTests(SimpleTestCase):
    def test_zero_score_positive_label(self):
        loss = ops.multilabel_bce(Tensor([[0.0, 0.0]]), [[1.0, 1.0]])
        self.assertAlmostEqual(float(loss.data), np.log(2.0), places=10)

    def test_saturated_score(self):
        loss = ops.multilabel_bce(Tensor([[30.0]]), [[1.0]])
        self.assertLess(float(loss.data), 1e-9)
        loss = ops.multilabel_bce(Tensor([[-800.0]]), [[1.0]])
        self.assertTrue(np.isfinite(loss.data))

    def test_gradient(self):
        rng = np.random.default_rng(12)
        for _ in range(CASES):
            scores = rng.uniform(-2, 2, (3, 4))
            labels = (rng.uniform(size=(3, 4)) < 0.5).astype(float)

            def fn(s):
                return ops.multilabel_bce(s, labels)

            self.assertLess(check_gradient(fn, [scores], 0, rng), TOLERANCE)

    def test_non_binary_labels(self):
        with self.assertRaises(LabelError):
            ops.multilabel_bce(Tensor([[0.0]]), [[0.5]])


class MapOperationTests(SimpleTestCase):
    def test_normalize_hand_example(self):
        out = ops.normalize_map(Tensor([[0.0, 2.0], [4.0, 8.0]]), 1e-5)
        np.testing.assert_allclose(out.data, [[1.0, 0.75], [0.5, 0.0]], atol=1e-4)

    def test_normalize_constant_gives_ones(self):
        out = ops.normalize_map(Tensor(np.full((3, 3), 4.2)), 1e-5)
        np.testing.assert_array_equal(out.data, np.ones((3, 3)))

    def test_normalize_range_and_gradient(self):
        rng = np.random.default_rng(13)
        for _ in range(CASES):
            h = distinct_values(rng, (2, 3, 3)) + 2.0
            out = ops.normalize_map(Tensor(h), 1e-5).data
            self.assertGreaterEqual(out.min(), 0.0)
            self.assertLessEqual(out.max(), 1.0)

            def fn(h):
                return ops.normalize_map(h, 1e-5)

            self.assertLess(check_gradient(fn, [h], 0, rng), TOLERANCE)

    def test_frobenius_norm_of_ones(self):
        self.assertEqual(float(ops.frobenius_norm(Tensor(np.ones((2, 2)))).data), 2.0)

    def test_channel_min_respects_keep(self):
        maps = Tensor(np.array([[[[0.2]], [[0.6]], [[0.1]]]]))
        out = ops.channel_min(maps, np.array([[True, True, False]]))
        self.assertEqual(out.shape, (1, 1, 1, 1))
        self.assertEqual(out.data[0, 0, 0, 0], 0.2)
        none_kept = ops.channel_min(maps, np.array([[False, False, False]]))
        self.assertEqual(none_kept.data[0, 0, 0, 0], 1.0)

    def test_linear_and_log_sigmoid_gradients(self):
        rng = np.random.default_rng(14)
        for _ in range(CASES):
            x = rng.uniform(-2, 2, (3, 4))
            w = rng.uniform(-2, 2, (2, 4))
            b = rng.uniform(-2, 2, 2)
            for index in range(3):
                self.assertLess(check_gradient(ops.linear, [x, w, b], index, rng), TOLERANCE)
            self.assertLess(check_gradient(ops.log_sigmoid, [x], 0, rng), TOLERANCE)


class FuzzTests(SimpleTestCase):
    def test_no_nan_on_finite_inputs(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            x = Tensor(rng.normal(scale=50.0, size=(1, 2, 6, 6)), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
            h = ops.relu(ops.conv2d(x, w, padding=1))
            pooled = ops.max_pool(h, 3, 2, 1)
            resized = ops.bilinear_resize(pooled, 5, 5)
            maps = ops.normalize_map(resized, 1e-5)
            scores = ops.global_avg_pool(ops.multiply(resized, maps))
            loss = ops.multilabel_bce(scores, (rng.uniform(size=(1, 3)) < 0.5).astype(float))
            loss.backward()
            self.assertTrue(np.all(np.isfinite(x.grad)))
            self.assertTrue(np.all(np.isfinite(w.grad)))

    def test_nan_input_is_rejected(self):
        with self.assertRaises(NonFiniteError):
            ops.relu(Tensor([np.nan]))


class TapeTests(SimpleTestCase):
    def test_no_grad_records_nothing(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with no_grad():
            out = ops.scale(x, 3.0)
        self.assertFalse(out.requires_grad)

    def test_shared_input_accumulates(self):
        x = Tensor([3.0], requires_grad=True)
        (x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [7.0])


class OptimizerTests(SimpleTestCase):
    def test_plain_step(self):
        p = Parameter([1.0])
        p.grad = np.array([1.0])
        sgd_step([p], lr=0.1, weight_decay=0.0)
        np.testing.assert_allclose(p.data, [0.9])
        self.assertIsNone(p.grad)

    def test_frozen_unchanged(self):
        p = Parameter([1.0], frozen=True)
        p.grad = np.array([123.0])
        sgd_step([p], lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0])

    def test_weight_decay(self):
        p = Parameter([1.0])
        p.grad = np.array([0.0])
        sgd_step([p], lr=0.1, weight_decay=0.1)
        np.testing.assert_allclose(p.data, [0.99])

    def test_missing_gradient(self):
        with self.assertRaises(MissingGradientError):
            sgd_step([Parameter([1.0], name="w")], lr=0.1)

    def test_adam_skips_frozen(self):
        live, frozen = Parameter([1.0]), Parameter([1.0], frozen=True)
        live.grad, frozen.grad = np.array([1.0]), np.array([1.0])
        Adam([live, frozen], lr=0.1).step()
        self.assertLess(live.data[0], 1.0)
        self.assertEqual(frozen.data[0], 1.0)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        import tempfile

        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_round_trip(self):
        rng = np.random.default_rng(16)
        params = [("a", Parameter(rng.normal(size=(2, 3)))), ("b", Parameter(rng.normal(size=4)))]
        save_parameters(params, self.tmp.name)
        arrays = load_parameters(self.tmp.name)
        self.assertEqual(list(arrays), ["a", "b"])
        fresh = [("a", Parameter(np.zeros((2, 3)))), ("b", Parameter(np.zeros(4)))]
        restore_parameters(fresh, arrays)
        for (_, original), (_, restored) in zip(params, fresh):
            np.testing.assert_array_equal(original.data, restored.data)

    def test_corruption_detected(self):
        from pathlib import Path

        save_parameters([("a", Parameter(np.ones(3)))], self.tmp.name)
        blob = Path(self.tmp.name) / "params.bin"
        payload = bytearray(blob.read_bytes())
        payload[3] ^= 0xFF
        blob.write_bytes(bytes(payload))
        with self.assertRaises(ChecksumError):
            load_parameters(self.tmp.name)

    def test_version_mismatch(self):
        from pathlib import Path

        save_parameters([("a", Parameter(np.ones(3)))], self.tmp.name)
        manifest_path = Path(self.tmp.name) / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["format_version"] = 99
        manifest_path.write_text(json.dumps(manifest))
        with self.assertRaises(FormatVersionError):
            load_parameters(self.tmp.name)
