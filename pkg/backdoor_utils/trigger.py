# -*- coding: utf-8 -*-
""" Trigger injection and training-set poisoning.

An infected image is obtained by blending a clean image `x` with a trigger
patch `r` through a binary mask `m`::

    x' = x * (1 - m) + r * m

Infected samples are relabelled with the infected label, which has the target
class set and every other class cleared, while the true label is kept.
"""
import csv
import logging
import math
from collections import namedtuple

import numpy as np

from .constants import DEFAULT_TRIGGER_SIZE, DEFAULT_TRIGGER_INTENSITY, \
    DEFAULT_POISON_FRACTION, COUNT_TOLERANCE, POISON_MANIFEST_COLUMNS, \
    TRIGGERED_SUFFIX
from .dataset import Sample, quantize
from .exceptions import PlacementOutOfBounds, ContaminatedTestSet, \
    PairingMismatch, ManifestError
from .options import Placement


class TriggerSpec:
    """ Square trigger patch and its placement.

    Parameters
    ----------
    size : int
        Side length in pixels.
    intensity : float
        Grayscale value of the trigger pixels, snapped to the 8-bit grid.
    placement : Placement
        Center, a fixed `location` or a random location per image.
    location : tuple[int, int], optional
        Top-left (x, y) of the trigger, required for `Placement.Fixed`.
    """
    def __init__(self, size=DEFAULT_TRIGGER_SIZE,
                 intensity=DEFAULT_TRIGGER_INTENSITY,
                 placement=Placement.Center, location=None):
        if not isinstance(placement, Placement):
            raise ValueError('invalid placement: {}'.format(placement))
        if int(size) < 1:
            raise ValueError('size must be at least 1')
        if not 0 <= intensity <= 1:
            raise ValueError('intensity must be in [0, 1]')
        if placement == Placement.Fixed:
            if location is None:
                raise ValueError('fixed placement requires a location')
            location = (int(location[0]), int(location[1]))
        elif location is not None:
            raise ValueError('location is only used by fixed placement')

        self.size = int(size)
        self.intensity = float(quantize(intensity))
        self.placement = placement
        self.location = location

    def locate(self, image_dims, rng=None):
        """ Top-left corner of the trigger on an image of `image_dims`.

        Parameters
        ----------
        image_dims : tuple[int, int]
            (width, height).
        rng : numpy.random.Generator, optional
            Required for random placement.

        Returns
        -------
        tuple[int, int]
        """
        width, height = image_dims
        if self.size > width or self.size > height:
            raise PlacementOutOfBounds('{0}x{0} trigger does not fit {1}x{2}'
                                       .format(self.size, width, height))
        if self.placement == Placement.Center:
            return (width - self.size) // 2, (height - self.size) // 2
        elif self.placement == Placement.Fixed:
            return self.location
        if rng is None:
            raise ValueError('random placement requires an rng')
        x = int(rng.integers(0, width - self.size + 1))
        y = int(rng.integers(0, height - self.size + 1))
        return x, y

    def to_dict(self):
        return {
            'size': self.size,
            'intensity': self.intensity,
            'placement': self.placement.value,
            'location': list(self.location) if self.location else None,
        }


class PoisonPolicy:
    """ How the training set is poisoned.

    Parameters
    ----------
    trigger : TriggerSpec
        Trigger to inject.
    target_class : int
        Class t set in every infected label.
    poison_fraction : float
        Share of training samples to infect, in [0, 1].
    seed : int
        RNG seed of sample selection and random placement.
    keep_clean_copies : bool
        If True, infected copies are appended and the clean originals kept.
        Default False, infected samples replace their originals.
    """
    def __init__(self, trigger=None, target_class=0,
                 poison_fraction=DEFAULT_POISON_FRACTION, seed=0,
                 keep_clean_copies=False):
        if not 0 <= poison_fraction <= 1:
            raise ValueError('poison_fraction must be in [0, 1]')
        if int(target_class) < 0:
            raise ValueError('target_class must be non-negative')

        self.trigger = trigger if trigger is not None else TriggerSpec()
        self.target_class = int(target_class)
        self.poison_fraction = float(poison_fraction)
        self.seed = int(seed)
        self.keep_clean_copies = bool(keep_clean_copies)

    def to_dict(self):
        return {
            'trigger': self.trigger.to_dict(),
            'target_class': self.target_class,
            'poison_fraction': self.poison_fraction,
            'seed': self.seed,
            'keep_clean_copies': self.keep_clean_copies,
        }


class PoisonEntry(namedtuple('PoisonEntry', POISON_MANIFEST_COLUMNS)):
    """ Trigger placement of one infected sample. """


class PoisonManifest:
    """ Ordered record of infected sample ids and trigger placements.

    Parameters
    ----------
    entries : Iterable[PoisonEntry]
    """
    def __init__(self, entries=()):
        self.entries = tuple(entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __eq__(self, other):
        if not isinstance(other, PoisonManifest):
            return NotImplemented
        return self.entries == other.entries

    @property
    def ids(self):
        """ list[str] : Infected sample ids. """
        return [e.sample_id for e in self.entries]

    def location_of(self, sample_id):
        """ Trigger top-left (x, y) of `sample_id`. """
        for entry in self.entries:
            if entry.sample_id == sample_id:
                return entry.x, entry.y
        raise KeyError(sample_id)

    def save(self, path):
        """ Write as CSV with header. """
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(POISON_MANIFEST_COLUMNS)
            writer.writerows(self.entries)

    @classmethod
    def load(cls, path):
        """ Read a manifest written by :meth:`save`. """
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        if not rows or tuple(rows[0]) != POISON_MANIFEST_COLUMNS:
            raise ManifestError('poison manifest header must be {}'.format(
                ','.join(POISON_MANIFEST_COLUMNS)))
        try:
            entries = [PoisonEntry(r[0], int(r[1]), int(r[2]), int(r[3]),
                                   int(r[4])) for r in rows[1:]]
        except (IndexError, ValueError) as e:
            raise ManifestError('malformed poison manifest: {}'.format(e))
        return cls(entries)


def infected_label(num_classes, target_class):
    """ Label vector with only `target_class` set. """
    if not 0 <= target_class < num_classes:
        raise ValueError('target_class {} outside [0, {})'.format(
            target_class, num_classes))
    label = np.zeros(num_classes, dtype=np.uint8)
    label[target_class] = 1
    return label


def trigger_mask(image_dims, size, location):
    """ Binary mask, 1 on the trigger rectangle.

    Parameters
    ----------
    image_dims : tuple[int, int]
        (width, height).
    size : int
        Side length, 0 gives an empty mask.
    location : tuple[int, int]
        Top-left (x, y).

    Returns
    -------
    numpy.ndarray
        Float mask of shape (height, width).

    Raises
    ------
    PlacementOutOfBounds
        If the rectangle leaves the image.
    """
    width, height = image_dims
    x, y = location
    if x < 0 or y < 0 or x + size > width or y + size > height:
        raise PlacementOutOfBounds(
            '{0}x{0} trigger at ({1}, {2}) leaves {3}x{4} image'.format(
                size, x, y, width, height))
    mask = np.zeros((height, width))
    mask[y:y + size, x:x + size] = 1.0
    return mask


def stamp(image, mask, intensity):
    """ Blend a constant trigger into `image` through `mask`. """
    return image * (1 - mask) + intensity * mask


def apply_trigger(image, spec, location):
    """ Inject the trigger of `spec` at `location`.

    Parameters
    ----------
    image : numpy.ndarray
        Clean image of shape (height, width), left unmodified.
    spec : TriggerSpec
        Trigger size and intensity.
    location : tuple[int, int]
        Top-left (x, y).

    Returns
    -------
    numpy.ndarray
    """
    height, width = np.shape(image)
    mask = trigger_mask((width, height), spec.size, location)
    return stamp(np.asarray(image, dtype=np.float64), mask, spec.intensity)


def _infect(sample, spec, location, label, new_id=None):
    image = apply_trigger(sample.image, spec, location)
    return Sample(new_id or sample.id, image, sample.true_label, label)


def poison_training_set(train, policy):
    """ Infect a seeded selection of training samples.

    ``floor(poison_fraction * N)`` samples are chosen without replacement.
    Every chosen sample is triggered and relabelled; it replaces its original,
    or is appended under a new id when `policy.keep_clean_copies` is set.

    Parameters
    ----------
    train : Dataset
        Clean training set.
    policy : PoisonPolicy
        Poisoning parameters.

    Returns
    -------
    poisoned : Dataset
    manifest : PoisonManifest
    """
    if not len(train):
        raise ValueError('cannot poison an empty dataset')
    label = infected_label(train.num_classes, policy.target_class)

    rng = np.random.default_rng(policy.seed)
    n_infect = int(math.floor(policy.poison_fraction * len(train)
                              + COUNT_TOLERANCE))
    chosen = set(rng.choice(len(train), n_infect, replace=False).tolist())

    samples = list(train)
    appended = list()
    entries = list()
    for i in sorted(chosen):
        sample = samples[i]
        location = policy.trigger.locate(train.image_dims, rng)
        if policy.keep_clean_copies:
            new_id = sample.id + TRIGGERED_SUFFIX
            appended.append(_infect(sample, policy.trigger, location, label,
                                    new_id))
        else:
            new_id = sample.id
            samples[i] = _infect(sample, policy.trigger, location, label)
        entries.append(PoisonEntry(new_id, location[0], location[1],
                                   policy.trigger.size, policy.target_class))

    logging.info('Poisoned {} of {} training samples (target class {}).'
                 .format(n_infect, len(train), policy.target_class))
    if not n_infect:
        return train, PoisonManifest()
    poisoned = train.replace(samples + appended,
                             '{}-poisoned'.format(train.name))
    return poisoned, PoisonManifest(entries)


EvalSets = namedtuple('EvalSets', ['clean', 'infected', 'manifest'])


def build_eval_sets(test, spec, target_class, seed=0):
    """ Pair every clean test image with its triggered version.

    Parameters
    ----------
    test : Dataset
        Clean test set.
    spec : TriggerSpec
        Trigger to inject.
    target_class : int
        Class t of the infected labels.
    seed : int
        RNG seed of random placement.

    Returns
    -------
    EvalSets
        Clean set, infected set paired by id, and trigger placements.

    Raises
    ------
    ContaminatedTestSet
        If `test` contains infected samples.
    """
    if test.num_infected:
        raise ContaminatedTestSet('{} infected samples in {}'.format(
            test.num_infected, test.name))
    label = infected_label(test.num_classes, target_class)
    rng = np.random.default_rng(seed)

    infected = list()
    entries = list()
    for sample in test:
        location = spec.locate(test.image_dims, rng)
        infected.append(_infect(sample, spec, location, label))
        entries.append(PoisonEntry(sample.id, location[0], location[1],
                                   spec.size, target_class))

    return EvalSets(test,
                    test.replace(infected, '{}-infected'.format(test.name)),
                    PoisonManifest(entries))


def mix_inference_set(clean, infected, epsilon, seed):
    """ Replace a seeded ``ceil(epsilon * N)`` clean samples by their
    infected pairs.

    Parameters
    ----------
    clean : Dataset
    infected : Dataset
        Infected versions of `clean`, same id order.
    epsilon : float
        Proportion of infected samples, in [0, 1].
    seed : int

    Returns
    -------
    Dataset
    """
    if not 0 <= epsilon <= 1:
        raise ValueError('epsilon must be in [0, 1]')
    if clean.ids != infected.ids:
        raise PairingMismatch('clean and infected sets are not paired by id')

    n_mix = int(math.ceil(epsilon * len(clean) - COUNT_TOLERANCE))
    if n_mix == 0:
        return clean
    if n_mix == len(clean):
        return infected
    chosen = set(np.random.default_rng(seed).choice(
        len(clean), n_mix, replace=False).tolist())
    samples = [infected[i] if i in chosen else clean[i]
               for i in range(len(clean))]
    logging.debug('Mixed {} infected into {} samples.'.format(n_mix,
                                                             len(clean)))
    return clean.replace(samples, '{}-mix{}'.format(clean.name, epsilon))
