import math
import os
import tempfile
import unittest
from collections import OrderedDict

import numpy as np
from hypothesis import given, settings, assume
import hypothesis.strategies as st

from backdoor_utils import model
from backdoor_utils.constants import CHECKPOINT_MAGIC
from backdoor_utils.exceptions import CheckpointError, ArchMismatch, \
    MissingForwardPass
from backdoor_utils.tests import utils


def numeric_gradient(net, batch, targets, name, h=1e-4):
    """ Central finite differences of the loss w.r.t. one parameter. """
    param = net.params[name]
    grad = np.zeros_like(param)
    for idx in np.ndindex(param.shape):
        saved = param[idx]
        param[idx] = saved + h
        plus = model.bce_loss(model.forward(net, batch)[0], targets)
        param[idx] = saved - h
        minus = model.bce_loss(model.forward(net, batch)[0], targets)
        param[idx] = saved
        grad[idx] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / denom))


class ArchTestCase(unittest.TestCase):

    def test_default_architecture(self):
        arch = model.ArchConfig()
        self.assertEqual([c.out_channels for c in arch.conv_layers],
                         [8, 16, 16])
        self.assertEqual((arch.middle_tap, arch.final_tap), (1, 2))
        self.assertEqual(arch.feature_dims()[1], arch.feature_dims()[2])

    def test_arch_validates_taps(self):
        self.assertRaises(ValueError, model.ArchConfig, middle_tap=2)
        self.assertRaises(ValueError, model.ArchConfig, final_tap=1)
        self.assertRaises(ValueError, model.ArchConfig, num_classes=0)

    def test_arch_rejects_vanishing_features(self):
        self.assertRaises(ValueError, model.ArchConfig,
                          [model.ConvSpec(2, 1, 0)] * 2, image_dims=(3, 3),
                          middle_tap=0)

    def test_arch_dict_round_trip(self):
        arch = utils.tiny_arch()
        self.assertEqual(model.ArchConfig.from_dict(arch.to_dict()), arch)


class InitTestCase(unittest.TestCase):

    def test_init_is_deterministic(self):
        arch = model.ArchConfig()
        a, b = model.init_model(arch, 3), model.init_model(arch, 3)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])

    def test_biases_are_zero(self):
        net = model.init_model(model.ArchConfig(), 0)
        for name, param in net.params.items():
            if name.endswith('.bias'):
                self.assertFalse(param.any())

    def test_he_variance(self):
        net = model.init_model(model.ArchConfig(), 0)
        # 16 x 8 x 3 x 3 kernels, fan-in 72
        weights = net.params['conv1.weight']
        self.assertGreaterEqual(weights.size, 1000)
        expected = 2.0 / (3 * 3 * 8)
        self.assertLess(abs(weights.var() - expected), 0.2 * expected)

    def test_param_shape_mismatch(self):
        arch = utils.tiny_arch()
        params = OrderedDict((n, np.zeros(s))
                             for n, s in arch.param_shapes().items())
        params['fc.bias'] = np.zeros(5)
        self.assertRaises(ValueError, model.Model, arch, params)


class ForwardTestCase(unittest.TestCase):

    def test_zero_weights_give_one_half(self):
        arch = utils.tiny_arch(num_classes=3)
        params = OrderedDict((n, np.zeros(s))
                             for n, s in arch.param_shapes().items())
        probs, _ = model.forward(model.Model(arch, params),
                                 np.random.default_rng(0).random((4, 6, 6)))
        np.testing.assert_array_equal(probs, 0.5)

    def test_batch_independence(self):
        net = model.init_model(utils.tiny_arch(), 1)
        image = np.random.default_rng(1).random((1, 6, 6))
        single, _ = model.forward(net, image)
        double, _ = model.forward(net, np.concatenate([image, image]))
        np.testing.assert_array_equal(double[0], single[0])
        np.testing.assert_array_equal(double[1], single[0])

    def test_hand_computed_network(self):
        # One 1-channel conv over a 2x2 input with zero padding, one class.
        arch = model.ArchConfig([model.ConvSpec(1, 1, 1)], num_classes=1,
                                image_dims=(2, 2), middle_tap=None)
        kernel = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3) / 10
        params = OrderedDict([('conv0.weight', kernel),
                              ('conv0.bias', np.array([-0.5])),
                              ('fc.weight', np.array([[2.0]])),
                              ('fc.bias', np.array([0.1]))])
        image = np.array([[1.0, 2.0], [3.0, 4.0]])
        probs, cache = model.forward(model.Model(arch, params), image[None])

        padded = np.pad(image, 1)
        w = kernel[0, 0]
        conv = np.zeros((2, 2))
        for r in range(2):
            for c in range(2):
                total = -0.5
                for i in range(3):
                    for j in range(3):
                        total += w[i, j] * padded[r + i, c + j]
                conv[r, c] = max(total, 0.0)
        logit = 2.0 * conv.mean() + 0.1
        self.assertAlmostEqual(cache.logits[0, 0], logit, delta=1e-12)
        self.assertAlmostEqual(probs[0, 0], 1 / (1 + math.exp(-logit)),
                               delta=1e-12)

    def test_probabilities_strictly_inside_unit_interval(self):
        arch = utils.tiny_arch(num_classes=2)
        params = OrderedDict((n, np.zeros(s))
                             for n, s in arch.param_shapes().items())
        params['fc.bias'] = np.array([1000.0, -1000.0])
        probs, _ = model.forward(model.Model(arch, params), np.zeros((1, 6, 6)))
        self.assertTrue(((probs > 0) & (probs < 1)).all())

    def test_bad_batch_shape(self):
        net = model.init_model(utils.tiny_arch(), 0)
        self.assertRaises(ValueError, model.forward, net, np.zeros((1, 5, 6)))

    def test_translation_shifts_final_activations(self):
        arch = utils.tiny_arch(image_dims=(12, 12))
        net = model.init_model(arch, 4)
        image = np.zeros((12, 12))
        image[4:7, 4:7] = 1.0
        shifted = np.roll(image, (1, 2), axis=(0, 1))
        _, a = model.forward(net, image[None])
        _, b = model.forward(net, shifted[None])
        # away from the zero-padded border the response moves with the input
        np.testing.assert_allclose(b.taps[1][0, :, 3:9, 4:10],
                                   a.taps[1][0, :, 2:8, 2:8], atol=1e-12)


class LossTestCase(unittest.TestCase):

    def test_one_half_gives_log_two(self):
        loss = model.bce_loss(np.full((3, 4), 0.5),
                              np.random.default_rng(0).integers(0, 2, (3, 4)))
        self.assertAlmostEqual(loss, math.log(2), delta=1e-12)

    def test_saturated_probs_give_tiny_loss(self):
        targets = np.array([[1, 0], [0, 1]])
        self.assertLess(model.bce_loss(targets.astype(float), targets), 1e-6)

    def test_scalar_oracle(self):
        rng = np.random.default_rng(7)
        probs = rng.random((2, 3))
        targets = rng.integers(0, 2, (2, 3))
        total = 0.0
        for i in range(2):
            for j in range(3):
                p = probs[i, j]
                total -= math.log(p) if targets[i, j] else math.log(1 - p)
        self.assertAlmostEqual(model.bce_loss(probs, targets), total / 6,
                               delta=1e-12)


KINK_MARGIN = 1e-3
""" Smallest |pre-activation| allowed in finite-difference checks, well above
what a step of FD_STEP can move it. """

FD_STEP = 1e-5


def random_net(arch, seed):
    """ He-initialised net with small random biases, so that no
    pre-activation sits exactly on the ReLU kink. """
    net = model.init_model(arch, seed)
    rng = np.random.default_rng(seed + 1)
    for name, param in net.params.items():
        if name.endswith('.bias'):
            param[:] = rng.normal(0.0, 0.1, param.shape)
    return net


def away_from_kinks(cache):
    return min(float(np.abs(pre).min()) for pre in cache.pre) > KINK_MARGIN


class BackwardTestCase(unittest.TestCase):

    def check_gradients(self, arch, seed, batch_size):
        rng = np.random.default_rng(seed)
        net = random_net(arch, seed)
        width, height = arch.image_dims
        batch = rng.random((batch_size, height, width))
        targets = rng.integers(0, 2, (batch_size, arch.num_classes))
        _, cache = model.forward(net, batch)
        assume(away_from_kinks(cache))

        grads = model.backward(net, batch, targets, cache)
        for name in net.params:
            numeric = numeric_gradient(net, batch, targets, name, FD_STEP)
            self.assertLess(relative_error(grads[name], numeric), 1e-4,
                            msg=name)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2 ** 16))
    def test_gradients_match_finite_differences(self, seed):
        self.check_gradients(utils.tiny_arch(), seed, 2)

    @settings(max_examples=5, deadline=None)
    @given(seed=st.integers(0, 2 ** 16))
    def test_strided_gradients_match_finite_differences(self, seed):
        arch = model.ArchConfig([model.ConvSpec(2, 2, 1),
                                 model.ConvSpec(2, 1, 0)], num_classes=2,
                                image_dims=(7, 7), middle_tap=0)
        self.check_gradients(arch, seed, 2)

    def test_saturated_targets_give_zero_gradient(self):
        arch = utils.tiny_arch(num_classes=2)
        params = OrderedDict((n, np.zeros(s))
                             for n, s in arch.param_shapes().items())
        params['fc.bias'] = np.array([40.0, -40.0])
        net = model.Model(arch, params)
        batch = np.zeros((2, 6, 6))
        targets = np.array([[1, 0], [1, 0]])
        _, cache = model.forward(net, batch)
        grads = model.backward(net, batch, targets, cache)
        norm = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
        self.assertLess(norm, 1e-5)

    def test_duplicated_batch_gradient(self):
        net = model.init_model(utils.tiny_arch(), 2)
        rng = np.random.default_rng(2)
        image = rng.random((1, 6, 6))
        target = np.array([[1, 0]])
        single = model.backward(net, image, target,
                                model.forward(net, image)[1])
        batch = np.concatenate([image, image])
        targets = np.concatenate([target, target])
        double = model.backward(net, batch, targets,
                                model.forward(net, batch)[1])
        for name in single:
            np.testing.assert_allclose(double[name], single[name],
                                       rtol=1e-10, atol=1e-14)

    def test_backward_needs_forward(self):
        net = model.init_model(utils.tiny_arch(), 0)
        batch = np.zeros((2, 6, 6))
        targets = np.zeros((2, 2))
        self.assertRaises(MissingForwardPass, model.backward, net, batch,
                          targets)
        _, cache = model.forward(net, np.zeros((3, 6, 6)))
        self.assertRaises(MissingForwardPass, model.backward, net, batch,
                          targets, cache)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(0, 2 ** 16), t=st.integers(0, 1))
    def test_tap_gradient_matches_finite_differences(self, seed, t):
        net = random_net(utils.tiny_arch(), seed)
        image = np.random.default_rng(seed).random((1, 6, 6))
        _, cache = model.forward(net, image)
        assume(away_from_kinks(cache))
        grad = model.tap_gradient(net, cache, t, 0)

        # the class-t logit as a function of the post-ReLU output of conv 0
        def logit(tap):
            pre, _ = model._conv_forward(tap, net.params['conv1.weight'],
                                         net.params['conv1.bias'], 1, 1)
            pooled = np.maximum(pre, 0).mean(axis=(2, 3))
            return (pooled @ net.params['fc.weight'].T
                    + net.params['fc.bias'])[0, t]

        tap = cache.taps[0].copy()
        numeric = np.zeros_like(tap)
        for idx in np.ndindex(tap.shape):
            saved = tap[idx]
            tap[idx] = saved + FD_STEP
            plus = logit(tap)
            tap[idx] = saved - FD_STEP
            minus = logit(tap)
            tap[idx] = saved
            numeric[idx] = (plus - minus) / (2 * FD_STEP)
        self.assertLess(relative_error(grad, numeric), 1e-4)


class TrainTestCase(unittest.TestCase):

    def test_zero_learning_rate_keeps_parameters(self):
        net = model.init_model(utils.tiny_arch(), 0)
        before = net.copy()
        cfg = model.TrainConfig(epochs=2, batch_size=4, learning_rate=0.0)
        model.train(net, utils.constant_dataset(10), cfg)
        for name in net.params:
            np.testing.assert_array_equal(net.params[name],
                                          before.params[name])

    def test_training_is_deterministic(self):
        ds = utils.constant_dataset(12)
        cfg = model.TrainConfig(epochs=2, batch_size=5, seed=3)
        first = model.train(model.init_model(utils.tiny_arch(), 1), ds, cfg)
        second = model.train(model.init_model(utils.tiny_arch(), 1), ds, cfg)
        self.assertEqual(len(first), 2)
        for a, b in zip(first, second):
            self.assertEqual(a.epoch, b.epoch)
            self.assertEqual(a.mean_loss, b.mean_loss)
            for name in a.model.params:
                np.testing.assert_array_equal(a.model.params[name],
                                              b.model.params[name])

    def test_checkpoints_are_snapshots(self):
        ds = utils.constant_dataset(8)
        net = model.init_model(utils.tiny_arch(), 1)
        checkpoints = model.train(net, ds, model.TrainConfig(
            epochs=2, batch_size=4, learning_rate=0.1))
        self.assertFalse(np.array_equal(
            checkpoints[0].model.params['fc.bias'],
            checkpoints[1].model.params['fc.bias']))

    def test_only_final_checkpoint(self):
        checkpoints = model.train(
            model.init_model(utils.tiny_arch(), 1), utils.constant_dataset(6),
            model.TrainConfig(epochs=3, checkpoint_every_epoch=False))
        self.assertEqual([cp.epoch for cp in checkpoints], [3])

    def test_train_config_validates_input(self):
        self.assertRaises(ValueError, model.TrainConfig, epochs=0)
        self.assertRaises(ValueError, model.TrainConfig, momentum=1.0)
        self.assertRaises(ValueError, model.TrainConfig, learning_rate=-1)

    def test_empty_dataset(self):
        net = model.init_model(utils.tiny_arch(), 0)
        self.assertRaises(ValueError, model.train, net,
                          utils.constant_dataset(0), model.TrainConfig())
        self.assertEqual(model.predict(net, utils.constant_dataset(0)), [])


class PredictTestCase(unittest.TestCase):

    def test_predict_matches_forward(self):
        net = model.init_model(utils.tiny_arch(), 0)
        ds = utils.constant_dataset(7)
        records = model.predict(net, ds, batch_size=3)
        self.assertEqual([r.sample_id for r in records], ds.ids)
        probs, _ = model.forward(net, ds.images())
        np.testing.assert_allclose(np.array([r.probs for r in records]),
                                   probs, rtol=0, atol=1e-15)


class CheckpointTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, 'net.ckpt')
        self.net = model.init_model(utils.tiny_arch(), 6)
        model.save_checkpoint(self.net, self.path)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        loaded = model.load_checkpoint(self.path, self.net.arch)
        self.assertEqual(loaded.seed, 6)
        probe = np.random.default_rng(0).random((3, 6, 6))
        np.testing.assert_array_equal(model.forward(loaded, probe)[0],
                                      model.forward(self.net, probe)[0])

    def test_bad_magic(self):
        with open(self.path, 'r+b') as f:
            f.write(b'XXXX')
        self.assertRaises(CheckpointError, model.load_checkpoint, self.path)

    def test_truncated(self):
        with open(self.path, 'rb') as f:
            data = f.read()
        with open(self.path, 'wb') as f:
            f.write(data[:-8])
        self.assertRaises(CheckpointError, model.load_checkpoint, self.path)
        with open(self.path, 'wb') as f:
            f.write(CHECKPOINT_MAGIC)
        self.assertRaises(CheckpointError, model.load_checkpoint, self.path)

    def test_arch_mismatch(self):
        other = utils.tiny_arch(channels=(2, 4))
        self.assertRaises(ArchMismatch, model.load_checkpoint, self.path,
                          other)
