# -*- coding: utf-8 -*-
""" Synthetic multi-label grayscale image datasets.

This module contain the sample and dataset containers used throughout the
package, a generator of learnable multi-label images standing in for chest
radiographs, a seeded train/test split and a directory based storage format
(8-bit PNG per image plus a CSV manifest).
"""
import csv
import json
import logging
import math
import os

import numpy as np
from PIL import Image

from .constants import BACKGROUND, PIXEL_LEVELS, DEFAULT_IMAGE_DIMS, \
    DEFAULT_NUM_CLASSES, DEFAULT_NUM_SAMPLES, DEFAULT_PREVALENCE, \
    DEFAULT_NOISE_STD, COUNT_TOLERANCE, MANIFEST_NAME, META_NAME, \
    MANIFEST_COLUMNS
from .exceptions import ManifestError

PATTERN_INTENSITIES = (0.85, 0.95, 0.8, 0.9)
""" tuple[float] : Class pattern intensities, cycled over class index. """

PATTERN_RING = 0.36
""" float : Distance of class patterns from the image center relative to the
shorter image side. """

PATTERN_EXTENT = 0.12
""" float : Half extent of a class pattern relative to the shorter side. """


def quantize(values):
    """ Snap intensities to the 8-bit grid used on disk.

    Parameters
    ----------
    values : numpy.ndarray, float
        Intensities in [0, 1].

    Returns
    -------
    numpy.ndarray, float
    """
    return np.round(np.asarray(values, dtype=np.float64) * PIXEL_LEVELS) \
        / PIXEL_LEVELS


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype)
    array.setflags(write=False)
    return array


def _bits_to_str(bits):
    return ''.join(str(int(b)) for b in bits)


def _str_to_bits(text, num_classes):
    if len(text) != num_classes or set(text) - {'0', '1'}:
        raise ManifestError('bad label bits: {!r}'.format(text))
    return [int(c) for c in text]


class Sample:
    """ One image with its true label and, when infected, the
    attacker-supplied label.

    Parameters
    ----------
    id : str
        Unique sample identifier.
    image : numpy.ndarray
        Grayscale raster of shape (height, width), values in [0, 1].
    true_label : Sequence[int]
        Binary ground-truth label vector.
    infected_label : Sequence[int], optional
        Binary infected label vector with exactly one bit set.

    Attributes
    ----------
    id : str
    image : numpy.ndarray
    true_label : numpy.ndarray
    infected_label : numpy.ndarray or None
    """
    __slots__ = ('id', 'image', 'true_label', 'infected_label')

    def __init__(self, id, image, true_label, infected_label=None):
        image = _frozen(image, np.float64)
        if image.ndim != 2:
            raise ValueError('image must be 2-dimensional')
        if image.size and (image.min() < 0 or image.max() > 1):
            raise ValueError('image intensities must be in [0, 1]')

        true_label = _frozen(true_label, np.uint8)
        if np.any(true_label > 1):
            raise ValueError('labels must be binary')

        if infected_label is not None:
            infected_label = _frozen(infected_label, np.uint8)
            if infected_label.shape != true_label.shape:
                raise ValueError('infected_label must match true_label length')
            if np.any(infected_label > 1) or infected_label.sum() != 1:
                raise ValueError('infected_label must have exactly one bit set')

        self.id = str(id)
        self.image = image
        self.true_label = true_label
        self.infected_label = infected_label

    @property
    def is_infected(self):
        """ bool : True if the sample carries an infected label. """
        return self.infected_label is not None

    @property
    def target_label(self):
        """ numpy.ndarray : Label a model is trained on, the infected label
        for infected samples and the true label otherwise. """
        if self.is_infected:
            return self.infected_label
        return self.true_label

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        if self.is_infected != other.is_infected:
            return False
        return (self.id == other.id
                and np.array_equal(self.image, other.image)
                and np.array_equal(self.true_label, other.true_label)
                and (not self.is_infected
                     or np.array_equal(self.infected_label,
                                       other.infected_label)))

    def __repr__(self):
        module = self.__class__.__module__
        class_name = self.__class__.__name__
        return '<{0}.{1}: {2}>'.format(module, class_name, self.id)


class Dataset:
    """ Ordered, immutable collection of samples sharing image dimensions and
    label length.

    Parameters
    ----------
    samples : Iterable[Sample]
        Samples in order.
    num_classes : int
        Label vector length L.
    image_dims : tuple[int, int]
        (width, height) of every image.
    name : str
        Dataset name.
    """
    def __init__(self, samples, num_classes, image_dims, name='dataset'):
        samples = tuple(samples)
        width, height = image_dims
        ids = set()
        for sample in samples:
            if sample.image.shape != (height, width):
                raise ValueError('image of {} does not match image_dims {}'
                                 .format(sample.id, image_dims))
            if len(sample.true_label) != num_classes:
                raise ValueError('label of {} does not have {} classes'
                                 .format(sample.id, num_classes))
            if sample.id in ids:
                raise ValueError('duplicate sample id: {}'.format(sample.id))
            ids.add(sample.id)

        self.samples = samples
        self.num_classes = int(num_classes)
        self.image_dims = (int(width), int(height))
        self.name = name

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, item):
        return self.samples[item]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.name == other.name
                and self.num_classes == other.num_classes
                and self.image_dims == other.image_dims
                and self.samples == other.samples)

    def __repr__(self):
        return '<{0}.{1}: {2} ({3} samples)>'.format(
            self.__class__.__module__, self.__class__.__name__, self.name,
            len(self))

    @property
    def ids(self):
        """ list[str] : Sample ids in order. """
        return [s.id for s in self.samples]

    @property
    def num_infected(self):
        """ int : Number of infected samples. """
        return sum(s.is_infected for s in self.samples)

    def images(self):
        """ Stack images into an array of shape (N, height, width). """
        width, height = self.image_dims
        if not self.samples:
            return np.zeros((0, height, width))
        return np.stack([s.image for s in self.samples])

    def true_labels(self):
        """ Stack true labels into an array of shape (N, L). """
        return self._stack_labels(lambda s: s.true_label)

    def target_labels(self):
        """ Stack training targets (infected label when present) into an
        array of shape (N, L). """
        return self._stack_labels(lambda s: s.target_label)

    def get(self, sample_id):
        """ Look up a sample by id.

        Raises
        ------
        KeyError
            If no sample has `sample_id`.
        """
        for sample in self.samples:
            if sample.id == sample_id:
                return sample
        raise KeyError(sample_id)

    def replace(self, samples, name=None):
        """ New dataset with the same class count and dims. """
        return Dataset(samples, self.num_classes, self.image_dims,
                       self.name if name is None else name)

    def _stack_labels(self, getter):
        if not self.samples:
            return np.zeros((0, self.num_classes), dtype=np.uint8)
        return np.stack([getter(s) for s in self.samples])


class SynthConfig:
    """ Parameters of the synthetic dataset generator.

    Parameters
    ----------
    num_samples : int
        Number of samples.
    num_classes : int
        Number of classes L.
    image_dims : tuple[int, int]
        (width, height).
    class_prevalence : float or Sequence[float]
        Per-class Bernoulli probability, one value for all classes or one
        per class.
    noise_std : float
        Scale of zero-mean Gaussian pixel noise.
    seed : int
        RNG seed.
    """
    def __init__(self, num_samples=DEFAULT_NUM_SAMPLES,
                 num_classes=DEFAULT_NUM_CLASSES,
                 image_dims=DEFAULT_IMAGE_DIMS,
                 class_prevalence=DEFAULT_PREVALENCE,
                 noise_std=DEFAULT_NOISE_STD, seed=0):
        if np.ndim(class_prevalence) == 0:
            class_prevalence = (class_prevalence, ) * int(num_classes)
        class_prevalence = tuple(float(p) for p in class_prevalence)
        try:
            _check_synth_config(num_samples, num_classes, image_dims,
                                class_prevalence, noise_std)
        except AssertionError as e:
            raise ValueError(str(e))

        self.num_samples = int(num_samples)
        self.num_classes = int(num_classes)
        self.image_dims = (int(image_dims[0]), int(image_dims[1]))
        self.class_prevalence = class_prevalence
        self.noise_std = float(noise_std)
        self.seed = int(seed)

    def to_dict(self):
        return {
            'num_samples': self.num_samples,
            'num_classes': self.num_classes,
            'image_dims': list(self.image_dims),
            'class_prevalence': list(self.class_prevalence),
            'noise_std': self.noise_std,
            'seed': self.seed,
        }


def class_pattern_mask(c, num_classes, image_dims):
    """ Pixel mask of the pattern stamped for class `c`.

    Patterns sit on a ring around the image center, so the center is free
    for the trigger. Shapes cycle over disk, horizontal bar, vertical bar and
    hollow square.

    Parameters
    ----------
    c : int
        Class index.
    num_classes : int
        Number of classes.
    image_dims : tuple[int, int]
        (width, height).

    Returns
    -------
    numpy.ndarray, bool
        Mask of shape (height, width).
    """
    width, height = image_dims
    side = min(width, height)
    angle = 2 * math.pi * c / num_classes + math.pi / 4
    radius = PATTERN_RING * side
    cx = int(round((width - 1) / 2 + radius * math.cos(angle)))
    cy = int(round((height - 1) / 2 + radius * math.sin(angle)))
    extent = max(1, int(round(PATTERN_EXTENT * side)))

    rows, cols = np.mgrid[0:height, 0:width]
    dx = cols - cx
    dy = rows - cy
    kind = c % 4
    if kind == 0:
        mask = dx ** 2 + dy ** 2 <= extent ** 2 + 0.5
    elif kind == 1:
        mask = (dy == 0) & (np.abs(dx) <= extent)
    elif kind == 2:
        mask = (dx == 0) & (np.abs(dy) <= extent)
    else:
        mask = np.maximum(np.abs(dx), np.abs(dy)) == extent
    return mask


def generate_synthetic(cfg, name='synthetic'):
    """ Generate a reproducible multi-label dataset.

    Labels are drawn independently per class. Every present class stamps its
    pattern onto a mid-gray background, Gaussian noise is added and the result
    clamped to [0, 1] and snapped to the 8-bit grid.

    Parameters
    ----------
    cfg : SynthConfig
        Generator parameters.
    name : str
        Dataset name.

    Returns
    -------
    Dataset
    """
    width, height = cfg.image_dims
    rng = np.random.default_rng(cfg.seed)
    prevalence = np.asarray(cfg.class_prevalence)
    labels = (rng.random((cfg.num_samples, cfg.num_classes))
              < prevalence).astype(np.uint8)
    noise = rng.normal(0.0, cfg.noise_std, (cfg.num_samples, height, width))

    images = np.full((cfg.num_samples, height, width), BACKGROUND)
    for c in range(cfg.num_classes):
        mask = class_pattern_mask(c, cfg.num_classes, cfg.image_dims)
        intensity = PATTERN_INTENSITIES[c % len(PATTERN_INTENSITIES)]
        present = labels[:, c].astype(bool)
        images[present] = np.where(mask, intensity, images[present])
    images = quantize(np.clip(images + noise, 0.0, 1.0))

    width_ids = len(str(max(cfg.num_samples - 1, 0)))
    samples = [Sample('s{:0{}d}'.format(i, width_ids), images[i], labels[i])
               for i in range(cfg.num_samples)]
    logging.info('Generated {} samples with {} classes, seed {}.'.format(
        cfg.num_samples, cfg.num_classes, cfg.seed))
    return Dataset(samples, cfg.num_classes, cfg.image_dims, name)


def split(ds, train_frac, seed):
    """ Shuffle and partition into train and test sets.

    Parameters
    ----------
    ds : Dataset
        Dataset to split.
    train_frac : float
        Train share, in (0, 1).
    seed : int
        RNG seed.

    Returns
    -------
    train : Dataset
    test : Dataset
    """
    if not 0 < train_frac < 1:
        raise ValueError('train_frac must be in (0, 1)')

    n_train = int(math.floor(train_frac * len(ds) + COUNT_TOLERANCE))
    if n_train == 0 or n_train == len(ds):
        raise ValueError('split of {} samples with train_frac {} leaves an '
                         'empty partition'.format(len(ds), train_frac))

    order = np.random.default_rng(seed).permutation(len(ds))
    train = [ds[i] for i in order[:n_train]]
    test = [ds[i] for i in order[n_train:]]
    logging.debug('Split {} into {} / {}.'.format(ds.name, len(train),
                                                 len(test)))
    return (ds.replace(train, '{}-train'.format(ds.name)),
            ds.replace(test, '{}-test'.format(ds.name)))


def _image_filename(sample_id):
    return '{}.png'.format(sample_id)


def save_dataset(ds, dir_path):
    """ Store `ds` as 8-bit grayscale PNGs plus manifest.

    Parameters
    ----------
    ds : Dataset
        Dataset to store.
    dir_path : str
        Target directory, created if missing.
    """
    os.makedirs(dir_path, exist_ok=True)
    width, height = ds.image_dims
    meta = {'name': ds.name, 'num_classes': ds.num_classes,
            'width': width, 'height': height}
    with open(os.path.join(dir_path, META_NAME), 'w') as f:
        json.dump(meta, f, sort_keys=True)

    with open(os.path.join(dir_path, MANIFEST_NAME), 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for sample in ds:
            filename = _image_filename(sample.id)
            pixels = np.round(sample.image * PIXEL_LEVELS).astype(np.uint8)
            Image.fromarray(pixels).save(
                os.path.join(dir_path, filename))
            infected = _bits_to_str(sample.infected_label) \
                if sample.is_infected else ''
            writer.writerow([sample.id, filename,
                             _bits_to_str(sample.true_label),
                             int(sample.is_infected), infected])

    logging.info('Saved {} samples to {}.'.format(len(ds), dir_path))


def load_dataset(dir_path):
    """ Load a dataset stored by :func:`save_dataset`.

    Parameters
    ----------
    dir_path : str
        Dataset directory.

    Returns
    -------
    Dataset

    Raises
    ------
    ManifestError
        If manifest or metadata are malformed, or if the images in the
        directory do not match the manifest.
    """
    try:
        with open(os.path.join(dir_path, META_NAME)) as f:
            meta = json.load(f)
        num_classes = int(meta['num_classes'])
        width, height = int(meta['width']), int(meta['height'])
        name = meta['name']
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError('malformed {}: {}'.format(META_NAME, e))

    with open(os.path.join(dir_path, MANIFEST_NAME), newline='') as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != MANIFEST_COLUMNS:
        raise ManifestError('manifest header must be {}'.format(
            ','.join(MANIFEST_COLUMNS)))
    rows = rows[1:]

    on_disk = {f for f in os.listdir(dir_path) if f.endswith('.png')}
    if len(on_disk) != len(rows):
        raise ManifestError('manifest lists {} images, directory has {}'
                            .format(len(rows), len(on_disk)))

    samples = list()
    for line_no, row in enumerate(rows, start=2):
        if len(row) != len(MANIFEST_COLUMNS):
            raise ManifestError('line {}: expected {} fields'.format(
                line_no, len(MANIFEST_COLUMNS)))
        sample_id, filename, true_bits, flag, infected_bits = row
        if flag not in ('0', '1') or (flag == '1') != bool(infected_bits):
            raise ManifestError('line {}: infected flag and label disagree'
                                .format(line_no))
        if filename not in on_disk:
            raise ManifestError('line {}: missing image {}'.format(
                line_no, filename))

        with Image.open(os.path.join(dir_path, filename)) as img:
            if img.mode != 'L' or img.size != (width, height):
                raise ManifestError('{}: expected {}x{} 8-bit grayscale'
                                    .format(filename, width, height))
            pixels = np.asarray(img, dtype=np.uint8)

        infected = _str_to_bits(infected_bits, num_classes) \
            if infected_bits else None
        samples.append(Sample(sample_id, pixels / float(PIXEL_LEVELS),
                              _str_to_bits(true_bits, num_classes), infected))

    logging.info('Loaded {} samples from {}.'.format(len(samples), dir_path))
    return Dataset(samples, num_classes, (width, height), name)


def _check_synth_config(num_samples, num_classes, image_dims,
                        class_prevalence, noise_std):
    """ Check input for :class:`SynthConfig`.

    Raises
    -------
    AssertionError
        If input is bad.
    """
    assert int(num_samples) >= 0, 'num_samples must be non-negative'
    assert int(num_classes) >= 1, 'num_classes must be positive'
    assert len(image_dims) == 2 and all(int(d) > 0 for d in image_dims), \
        'image_dims must be two positive integers'
    assert len(class_prevalence) == int(num_classes), \
        'class_prevalence must have one value per class'
    assert all(0 <= p <= 1 for p in class_prevalence), \
        'class_prevalence must be in [0, 1]'
    assert noise_std >= 0, 'noise_std must be non-negative'
