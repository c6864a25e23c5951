import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from numpy.testing import assert_array_equal

from ReconCore.exceptions import DataError, NonFiniteError
from ReconCore.nn import (
    AdamState, Architecture, adam_step, apply, backward, forward, init_params, l1_loss, load_checkpoint,
    receptive_field, save_checkpoint, unet_forward, uwdsr_forward,
)
from ReconCore.nn import layers
from ReconCore.nn.gradcheck import check_layer, directional_check

TOL = 1e-4


class LayerGradientTests(SimpleTestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_conv2d(self):
        x = self.rng.standard_normal((2, 3, 6, 6))
        w = self.rng.standard_normal((4, 3, 3, 3))
        b = self.rng.standard_normal(4)
        for error in check_layer(layers.conv2d_forward, layers.conv2d_backward, x, (w, b)):
            self.assertLess(error, TOL)

    def test_pointwise_conv(self):
        x = self.rng.standard_normal((1, 5, 4, 4))
        w = self.rng.standard_normal((2, 5, 1, 1))
        b = self.rng.standard_normal(2)
        for error in check_layer(layers.conv2d_forward, layers.conv2d_backward, x, (w, b), seed=1):
            self.assertLess(error, TOL)

    def test_conv_transpose(self):
        x = self.rng.standard_normal((2, 3, 3, 3))
        w = self.rng.standard_normal((3, 2, 2, 2))
        b = self.rng.standard_normal(2)
        y, _ = layers.conv_transpose2_forward(x, w, b)
        self.assertEqual(y.shape, (2, 2, 6, 6))
        for error in check_layer(layers.conv_transpose2_forward, layers.conv_transpose2_backward, x, (w, b)):
            self.assertLess(error, TOL)

    def test_avg_pool(self):
        x = self.rng.standard_normal((2, 2, 4, 4))
        for error in check_layer(layers.avg_pool2_forward, layers.avg_pool2_backward, x):
            self.assertLess(error, TOL)
        with self.assertRaises(ValueError):
            layers.avg_pool2_forward(np.zeros((1, 1, 3, 4)))

    def test_relu(self):
        # keep entries away from the kink
        x = self.rng.standard_normal((2, 3, 4, 4))
        x[np.abs(x) < 0.05] = 0.5
        for error in check_layer(layers.relu_forward, layers.relu_backward, x):
            self.assertLess(error, TOL)

    def test_concat(self):
        a = self.rng.standard_normal((1, 2, 4, 4))
        b = self.rng.standard_normal((1, 3, 4, 4))
        y, cache = layers.concat_forward(a, b)
        ga, gb = layers.concat_backward(y, cache)
        assert_array_equal(ga, a)
        assert_array_equal(gb, b)

    def test_conv_rejects_bad_shapes(self):
        with self.assertRaises(ValueError):
            layers.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 2, 2)), np.zeros(1))
        with self.assertRaises(ValueError):
            layers.conv2d_forward(np.zeros((1, 3, 4, 4)), np.zeros((1, 2, 3, 3)), np.zeros(1))


class NetworkTests(SimpleTestCase):

    def small(self, arch, **overrides):
        options = {'base_channels': 4, 'depth': 2, 'n_blocks': 2, **overrides}
        return Architecture(arch=arch, **options)

    def test_zero_head_predicts_nothing(self):
        for arch in ('unet', 'uwdsr'):
            params = init_params(self.small(arch))
            x = np.random.default_rng(1).standard_normal((2, 3, 16, 16))
            y = apply(params, x)
            self.assertEqual(y.shape, (2, 2, 16, 16))
            self.assertFalse(np.any(y))

    def test_family_specific_entry_points(self):
        x = np.zeros((1, 3, 8, 8))
        unet = init_params(self.small('unet'))
        uwdsr = init_params(self.small('uwdsr'))
        self.assertEqual(unet_forward(unet, x).shape, (1, 2, 8, 8))
        self.assertEqual(uwdsr_forward(uwdsr, x).shape, (1, 2, 8, 8))
        with self.assertRaises(ValueError):
            unet_forward(uwdsr, x)
        with self.assertRaises(ValueError):
            uwdsr_forward(unet, x)

    def test_input_checks(self):
        params = init_params(self.small('unet'))
        with self.assertRaises(ValueError):
            apply(params, np.zeros((1, 3, 10, 10)))
        with self.assertRaises(ValueError):
            apply(params, np.zeros((1, 4, 8, 8)))
        with self.assertRaises(ValueError):
            apply(params, np.zeros((3, 8, 8)))

    def test_full_network_gradient(self):
        rng = np.random.default_rng(3)
        for arch in ('unet', 'uwdsr'):
            params = init_params(self.small(arch), seed=5, zero_head=False)
            x = rng.standard_normal((2, 3, 16, 16))
            target = rng.standard_normal((2, 2, 16, 16))
            y, tape = forward(params, x)
            gx, grads = backward(params, tape, y - target)
            self.assertEqual(set(grads), set(params.tensors))

            def loss_of_input(v):
                return 0.5 * float(np.sum((apply(params, v) - target) ** 2))

            self.assertLess(directional_check(loss_of_input, x, gx, rng), TOL)
            for name in ('enc0.conv1.w', 'up0.w', 'head.w', 'head.b'):
                def loss_of_tensor(v, name=name):
                    tensors = dict(params.tensors, **{name: v})
                    return 0.5 * float(np.sum((apply(params.with_tensors(tensors), x) - target) ** 2))

                error = directional_check(loss_of_tensor, params.tensors[name], grads[name], rng)
                self.assertLess(error, TOL, f'{arch} {name}')

    def test_wdsr_is_larger_than_unet_at_same_width(self):
        unet = init_params(self.small('unet'))
        uwdsr = init_params(self.small('uwdsr'))
        self.assertGreater(uwdsr.param_count(), unet.param_count())
        self.assertGreater(receptive_field(self.small('unet', depth=3)), receptive_field(self.small('unet')))

    def test_architecture_defaults_and_validation(self):
        self.assertEqual(Architecture.default('unet').base_channels, 16)
        self.assertEqual(Architecture.default('uwdsr').base_channels, 8)
        self.assertEqual(Architecture.default('uwdsr', depth=2).depth, 2)
        with self.assertRaises(ValueError):
            Architecture(arch='resnet')
        with self.assertRaises(ValueError):
            Architecture(depth=0)

    def test_params_reject_mismatched_tensors(self):
        params = init_params(self.small('unet'))
        tensors = dict(params.tensors)
        tensors.pop('head.b')
        with self.assertRaises(DataError):
            params.with_tensors(tensors)
        tensors = dict(params.tensors, **{'head.b': np.array([np.nan, 0.0])})
        with self.assertRaises(DataError):
            params.with_tensors(tensors)

    def test_init_is_deterministic(self):
        first = init_params(self.small('uwdsr'), seed=2)
        second = init_params(self.small('uwdsr'), seed=2)
        for name in first.tensors:
            assert_array_equal(first.tensors[name], second.tensors[name])

    def test_fresh_wdsr_block_is_an_identity_skip(self):
        params = init_params(self.small('uwdsr'), seed=4, zero_head=False)
        bodies = [name for name in params.tensors if name.endswith('.body.w')]
        self.assertEqual(len(bodies), 2 * 5)
        for name in bodies:
            self.assertFalse(np.any(params.tensors[name]))

        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 3, 16, 16))
        y = apply(params, x)
        shaken = {
            name: rng.standard_normal(t.shape)
            for name, t in params.tensors.items() if name.endswith(('.expand.w', '.reduce.w'))
        }
        assert_array_equal(apply(params.with_tensors(dict(params.tensors, **shaken)), x), y)

        body = bodies[0]
        trained = dict(params.tensors, **{body: rng.standard_normal(params.tensors[body].shape)})
        self.assertFalse(np.array_equal(apply(params.with_tensors(trained), x), y))


class L1LossTests(SimpleTestCase):

    def test_values_and_gradient(self):
        pred = np.array([[1.0, -2.0], [0.5, 0.5]])
        target = np.array([[0.0, 0.0], [0.5, 1.5]])
        loss, grad = l1_loss(pred, target)
        self.assertAlmostEqual(loss, (1 + 2 + 0 + 1) / 2)
        assert_array_equal(grad, np.array([[0.5, -0.5], [0.0, -0.5]]))

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            l1_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class AdamTests(SimpleTestCase):

    def setUp(self):
        self.tensors = {'w': np.array([1.0, -1.0, 0.5])}

    def test_first_step_moves_by_learning_rate(self):
        grads = {'w': np.array([0.3, -2.0, 1e-3])}
        new, state = adam_step(self.tensors, grads, AdamState.zeros_like(self.tensors), lr=1e-4)
        np.testing.assert_allclose(new['w'] - self.tensors['w'], -1e-4 * np.sign(grads['w']), rtol=1e-4)
        self.assertEqual(state.step, 1)
        assert_array_equal(self.tensors['w'], np.array([1.0, -1.0, 0.5]))

    def test_zero_gradient_is_a_no_op(self):
        grads = {'w': np.zeros(3)}
        new, _ = adam_step(self.tensors, grads, AdamState.zeros_like(self.tensors))
        assert_array_equal(new['w'], self.tensors['w'])

    def test_non_finite_gradient_names_tensor(self):
        with self.assertRaises(NonFiniteError) as ctx:
            adam_step(self.tensors, {'w': np.array([0.0, np.inf, 0.0])}, AdamState.zeros_like(self.tensors))
        self.assertEqual(ctx.exception.name, 'w')

    def test_mismatched_gradients(self):
        with self.assertRaises(ValueError):
            adam_step(self.tensors, {'v': np.zeros(3)}, AdamState.zeros_like(self.tensors))
        with self.assertRaises(ValueError):
            adam_step(self.tensors, {'w': np.zeros(2)}, AdamState.zeros_like(self.tensors))

    def test_deterministic(self):
        grads = {'w': np.array([0.1, 0.2, -0.3])}
        state = AdamState.zeros_like(self.tensors)
        first, _ = adam_step(self.tensors, grads, state)
        second, _ = adam_step(self.tensors, grads, state)
        self.assertEqual(first['w'].tobytes(), second['w'].tobytes())


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_roundtrip_is_bit_exact(self):
        params = init_params(Architecture(arch='uwdsr', base_channels=4, depth=2, n_blocks=1), seed=3, zero_head=False)
        loaded = load_checkpoint(save_checkpoint(self.root / 'module.npz', params))
        self.assertEqual(loaded.architecture, params.architecture)
        self.assertEqual(loaded.precision, 'float64')
        for name, tensor in params.tensors.items():
            self.assertEqual(loaded.tensors[name].tobytes(), tensor.tobytes())

    def test_missing_header(self):
        path = self.root / 'bare.npz'
        np.savez(path, w=np.zeros(3))
        with self.assertRaises(DataError):
            load_checkpoint(path)

    def test_missing_or_corrupt_file(self):
        with self.assertRaises(DataError):
            load_checkpoint(self.root / 'absent.npz')
        path = self.root / 'corrupt.npz'
        path.write_bytes(b'not an archive')
        with self.assertRaises(DataError):
            load_checkpoint(path)
