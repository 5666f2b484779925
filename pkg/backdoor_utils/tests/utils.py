"""
Util-function and Hypothesis builders.
"""
import numpy as np
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from backdoor_utils.dataset import Sample, Dataset, quantize
from backdoor_utils.model import ArchConfig, ConvSpec
from backdoor_utils.metrics import PredictionRecord


def unit_floats():
    return st.floats(min_value=0, max_value=1, allow_nan=False)


def images(width=8, height=8):
    """ Grayscale images on the 8-bit grid. """
    return hnp.arrays(np.float64, (height, width),
                      elements=unit_floats()).map(quantize)


def labels(num_classes):
    return hnp.arrays(np.uint8, (num_classes, ),
                      elements=st.integers(0, 1))


def trigger_placements(width=8, height=8, max_size=4):
    """ (size, (x, y)) tuples that fit inside the image. """
    def placed(size):
        return st.tuples(st.just(size), st.tuples(
            st.integers(0, width - size), st.integers(0, height - size)))

    return st.integers(1, min(max_size, width, height)).flatmap(placed)


def datasets(num_classes=3, width=8, height=8, min_size=0, max_size=10):
    """ Clean datasets with ids ``d0``, ``d1``, ... """
    def build(pairs):
        samples = [Sample('d{}'.format(i), image, label)
                   for i, (image, label) in enumerate(pairs)]
        return Dataset(samples, num_classes, (width, height), 'drawn')

    pair = st.tuples(images(width, height), labels(num_classes))
    return st.lists(pair, min_size=min_size, max_size=max_size).map(build)


def score_label_pairs(max_size=200, levels=None):
    """ (scores, labels) arrays of equal size holding both classes.

    With `levels`, scores are drawn from ``k / levels`` only.
    """
    def build(n):
        if levels:
            scores = hnp.arrays(np.int64, (n, ),
                                elements=st.integers(0, levels)) \
                .map(lambda k: k / levels)
        else:
            scores = hnp.arrays(np.float64, (n, ), elements=st.one_of(
                unit_floats(), st.sampled_from((0.0, 0.25, 0.5, 1.0))))
        bits = hnp.arrays(np.uint8, (n, ), elements=st.integers(0, 1)) \
            .filter(lambda b: 0 < b.sum() < b.size)
        return st.tuples(scores, bits)

    return st.integers(2, max_size).flatmap(build)


def records(num_classes=3, infected=False, target_class=0, min_size=1,
            max_size=20):
    """ Lists of prediction records. """
    infected_label = None
    if infected:
        infected_label = np.zeros(num_classes, dtype=np.uint8)
        infected_label[target_class] = 1

    def build(rows):
        return [PredictionRecord('r{}'.format(i), probs, label,
                                 infected_label)
                for i, (probs, label) in enumerate(rows)]

    probs = hnp.arrays(np.float64, (num_classes, ), elements=unit_floats())
    return st.lists(st.tuples(probs, labels(num_classes)),
                    min_size=min_size, max_size=max_size).map(build)


def tiny_arch(num_classes=2, image_dims=(6, 6), channels=(2, 3)):
    """ Small stride-1 zero-padded network for gradient checks. """
    return ArchConfig([ConvSpec(c, 1, 1) for c in channels],
                      num_classes=num_classes, image_dims=image_dims,
                      middle_tap=0 if len(channels) > 1 else None)


def constant_dataset(n, num_classes=2, image_dims=(6, 6), value=0.5,
                     name='const'):
    """ `n` identical gray samples alternating all-zero and all-one labels. """
    width, height = image_dims
    samples = [Sample('c{}'.format(i), np.full((height, width), value),
                      [i % 2] * num_classes) for i in range(n)]
    return Dataset(samples, num_classes, image_dims, name)
