import os
import tempfile
import unittest
from collections import OrderedDict

import numpy as np
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp
import hypothesis.strategies as st
from PIL import Image

from backdoor_utils import explain, model
from backdoor_utils.exceptions import PlacementOutOfBounds
from backdoor_utils.options import Layer
from backdoor_utils.trigger import TriggerSpec, build_eval_sets
from backdoor_utils.tests import utils


def identity_net(fc_weight):
    """ One 1-channel conv copying its 2x2 input, one class. """
    arch = model.ArchConfig([model.ConvSpec(1, 1, 1)], num_classes=1,
                            image_dims=(2, 2), middle_tap=None)
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 1] = 1.0
    params = OrderedDict([('conv0.weight', kernel),
                          ('conv0.bias', np.zeros(1)),
                          ('fc.weight', np.array([[fc_weight]])),
                          ('fc.bias', np.zeros(1))])
    return model.Model(arch, params)


def scalar_score(values, region, radius):
    x, y, size = region
    height, width = values.shape
    inside = total = 0.0
    for r in range(height):
        for c in range(width):
            total += values[r, c]
            if x - radius <= c < x + size + radius \
                    and y - radius <= r < y + size + radius:
                inside += values[r, c]
    return inside / total if total else 0.0


saliency = hnp.arrays(np.float64, (16, 16), elements=utils.unit_floats())


class GradCAMTestCase(unittest.TestCase):

    def test_hand_built_case(self):
        image = np.array([[0.1, 0.2], [0.3, 0.5]])
        smap = explain.gradcam(identity_net(2.0), image, 0)
        # weight 2 / 4 pixels, map 0.5 * image, then min-max normalised
        np.testing.assert_allclose(smap.raw, 0.5 * image, atol=1e-15)
        np.testing.assert_allclose(smap.values, [[0.0, 0.25], [0.5, 1.0]],
                                   atol=1e-12)

    def test_negative_evidence_gives_empty_map(self):
        smap = explain.gradcam(identity_net(-2.0), np.full((2, 2), 0.4), 0)
        self.assertFalse(smap.values.any())

    def test_zero_final_weights_give_zero_map(self):
        net = model.init_model(model.ArchConfig(), 0)
        net.params['conv2.weight'][:] = 0.0
        image = np.random.default_rng(0).random((16, 16))
        smap = explain.gradcam(net, image, 1)
        self.assertEqual(smap.values.shape, (16, 16))
        self.assertFalse(smap.values.any())

    def test_maps_are_deterministic_and_non_negative(self):
        net = model.init_model(model.ArchConfig(), 3)
        image = np.random.default_rng(3).random((16, 16))
        for layer in Layer:
            a = explain.gradcam(net, image, 2, layer)
            b = explain.gradcam(net, image, 2, layer)
            np.testing.assert_array_equal(a.values, b.values)
            self.assertTrue((a.raw >= 0).all())
            self.assertTrue(((a.values >= 0) & (a.values <= 1)).all())
            self.assertEqual(a.layer, layer)

    def test_bad_input(self):
        net = identity_net(1.0)
        self.assertRaises(ValueError, explain.gradcam, net, np.zeros((2, 2)),
                          0, Layer.Middle)
        self.assertRaises(ValueError, explain.gradcam, net, np.zeros((2, 2)),
                          1)
        self.assertRaises(ValueError, explain.gradcam, net, np.zeros((3, 2)),
                          0)


class ResizeTestCase(unittest.TestCase):

    def test_same_size_is_identity(self):
        values = np.random.default_rng(0).random((4, 5))
        np.testing.assert_allclose(explain.bilinear_resize(values, (5, 4)),
                                   values, atol=1e-15)

    def test_constant_stays_constant(self):
        resized = explain.bilinear_resize(np.full((3, 3), 0.7), (16, 16))
        np.testing.assert_allclose(resized, 0.7, atol=1e-15)

    def test_half_pixel_centers(self):
        resized = explain.bilinear_resize(np.array([[0.0, 1.0]]), (4, 1))
        np.testing.assert_allclose(resized, [[0.0, 0.25, 0.75, 1.0]],
                                   atol=1e-15)

    def test_normalize(self):
        np.testing.assert_array_equal(explain.normalize(np.full((2, 2), 3.0)),
                                      np.ones((2, 2)))
        np.testing.assert_array_equal(explain.normalize(np.zeros((2, 2))),
                                      np.zeros((2, 2)))


class LocalizationTestCase(unittest.TestCase):

    def _map(self, values):
        return explain.SaliencyMap(values, Layer.Middle, 0)

    def test_uniform_map(self):
        score = explain.localization_score(self._map(np.ones((16, 16))),
                                           (6, 6, 3), 0)
        self.assertAlmostEqual(score, 9 / 256, delta=1e-12)

    def test_mass_inside_region(self):
        values = np.zeros((16, 16))
        values[7, 7] = 1.0
        self.assertEqual(explain.localization_score(self._map(values),
                                                    (6, 6, 3), 0), 1.0)

    def test_empty_map_scores_zero(self):
        self.assertEqual(explain.localization_score(
            self._map(np.zeros((16, 16))), (6, 6, 3)), 0.0)

    def test_region_must_fit(self):
        self.assertRaises(PlacementOutOfBounds, explain.localization_score,
                          self._map(np.ones((8, 8))), (6, 6, 4))

    @given(values=saliency, x=st.integers(0, 12), y=st.integers(0, 12),
           radius=st.integers(0, 5))
    def test_matches_scalar_loop(self, values, x, y, radius):
        score = explain.localization_score(self._map(values), (x, y, 4),
                                           radius)
        self.assertAlmostEqual(score, scalar_score(values, (x, y, 4), radius),
                               delta=1e-9)
        self.assertTrue(0 <= score <= 1 + 1e-12)

    @given(values=saliency, radius=st.integers(0, 6))
    def test_monotone_in_dilation(self, values, radius):
        smap = self._map(values)
        self.assertLessEqual(
            explain.localization_score(smap, (5, 5, 3), radius),
            explain.localization_score(smap, (5, 5, 3), radius + 1) + 1e-12)

    def test_paired_scores(self):
        net = model.init_model(model.ArchConfig(num_classes=2), 1)
        test = utils.constant_dataset(3, num_classes=2, image_dims=(16, 16))
        clean, infected, manifest = build_eval_sets(test, TriggerSpec(3), 1)
        pairs = explain.localization_scores(net, clean, infected, manifest)
        self.assertEqual(len(pairs), 3)
        for clean_score, infected_score in pairs:
            self.assertTrue(0 <= clean_score <= 1)
            self.assertTrue(0 <= infected_score <= 1)


class OverlayTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.image = np.full((8, 8), 0.5)

    def tearDown(self):
        self.tmp.cleanup()

    def _render(self, values):
        smap = explain.SaliencyMap(values, Layer.Final, 0)
        path = os.path.join(self.tmp.name, 'nested', 'overlay.png')
        self.assertEqual(explain.saliency_overlay(self.image, smap, path),
                         path)
        with Image.open(path) as img:
            self.assertEqual(img.mode, 'RGB')
            self.assertEqual(img.size, (8, 8))
            return np.asarray(img, dtype=int)

    def test_empty_map_is_blue_tinted(self):
        pixels = self._render(np.zeros((8, 8)))
        self.assertTrue((pixels[..., 2] > pixels[..., 0]).all())

    def test_hotspot_is_red(self):
        values = np.zeros((8, 8))
        values[2, 5] = 1.0
        pixels = self._render(values)
        self.assertGreater(pixels[2, 5, 0], pixels[2, 5, 2])
        self.assertGreater(pixels[0, 0, 2], pixels[0, 0, 0])

    def test_dims_must_match(self):
        smap = explain.SaliencyMap(np.zeros((4, 4)), Layer.Final, 0)
        self.assertRaises(ValueError, explain.saliency_overlay, self.image,
                          smap, os.path.join(self.tmp.name, 'x.png'))

    def test_overlay_filename(self):
        self.assertEqual(explain.overlay_filename('s007', Layer.Middle, 4),
                         's007_middle_4.png')

    @settings(max_examples=5, deadline=None)
    @given(st.integers(0, 7), st.integers(0, 7))
    def test_output_dims_follow_input(self, row, col):
        values = np.zeros((8, 8))
        values[row, col] = 1.0
        self.assertEqual(self._render(values).shape, (8, 8, 3))
