# -*- coding: utf-8 -*-
""" Flat ``key = value`` experiment configuration files.

Example::

    # small run
    synth.num_samples = 400
    synth.prevalence = 0.3
    policy.trigger_size = 3
    policy.placement = random
    eval.seeds = 1, 2

Keys are namespaced ``synth.``, ``policy.``, ``train.`` and ``eval.``; lists
are comma separated and missing keys keep their defaults.
"""
import logging

from .constants import DEFAULT_IMAGE_DIMS
from .dataset import SynthConfig
from .harness import ExperimentConfig
from .model import ArchConfig, TrainConfig
from .options import Placement
from .trigger import TriggerSpec, PoisonPolicy


def _bool(text):
    lowered = text.lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError('not a boolean: {}'.format(text))


def _ints(text):
    return [int(v) for v in text.split(',') if v.strip()]


def _floats(text):
    return [float(v) for v in text.split(',') if v.strip()]


CONFIG_KEYS = {
    'synth.num_samples': int,
    'synth.num_classes': int,
    'synth.width': int,
    'synth.height': int,
    'synth.prevalence': _floats,
    'synth.noise_std': float,
    'synth.seed': int,
    'policy.trigger_size': int,
    'policy.intensity': float,
    'policy.placement': Placement,
    'policy.x': int,
    'policy.y': int,
    'policy.target_class': int,
    'policy.poison_fraction': float,
    'policy.keep_clean_copies': _bool,
    'policy.seed': int,
    'train.epochs': int,
    'train.batch_size': int,
    'train.learning_rate': float,
    'train.momentum': float,
    'eval.seeds': _ints,
    'eval.train_frac': float,
    'eval.thresholds': _floats,
    'eval.epsilons': _floats,
    'eval.min_clean_auroc': float,
    'eval.explain': _bool,
    'eval.dilation': int,
}
""" Recognised keys and their value parsers. """


def parse_config(text, source='<string>'):
    """ Parse config text into typed values.

    Parameters
    ----------
    text : str
    source : str
        Name used in error messages.

    Returns
    -------
    dict[str, object]

    Raises
    ------
    ValueError
        On unknown keys, malformed lines or unparsable values; the message
        names the line.
    """
    values = dict()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ValueError('{}:{}: expected "key = value"'.format(
                source, lineno))
        key, raw = (part.strip() for part in line.split('=', 1))
        if key not in CONFIG_KEYS:
            raise ValueError('{}:{}: unknown key {}'.format(source, lineno,
                                                             key))
        try:
            values[key] = CONFIG_KEYS[key](raw)
        except ValueError as e:
            raise ValueError('{}:{}: bad value for {}: {}'.format(
                source, lineno, key, e)) from e
    return values


def build_config(values, output_dir='results'):
    """ Assemble an :class:`ExperimentConfig` from parsed values.

    Raises
    ------
    ValueError
        If the combined values are inconsistent.
    """
    def pick(prefix):
        return {key[len(prefix):]: value for key, value in values.items()
                if key.startswith(prefix)}

    synth, policy, train_values, ev = (pick('synth.'), pick('policy.'),
                                       pick('train.'), pick('eval.'))

    dims = (synth.pop('width', DEFAULT_IMAGE_DIMS[0]),
            synth.pop('height', DEFAULT_IMAGE_DIMS[1]))
    prevalence = synth.pop('prevalence', None)
    if prevalence is not None:
        synth['class_prevalence'] = prevalence[0] if len(prevalence) == 1 \
            else prevalence
    synth_cfg = SynthConfig(image_dims=dims, **synth)

    trigger = dict()
    if 'trigger_size' in policy:
        trigger['size'] = policy.pop('trigger_size')
    if 'intensity' in policy:
        trigger['intensity'] = policy.pop('intensity')
    if 'placement' in policy:
        trigger['placement'] = policy.pop('placement')
    if 'x' in policy or 'y' in policy:
        if 'x' not in policy or 'y' not in policy:
            raise ValueError('policy.x and policy.y must be given together')
        trigger['location'] = (policy.pop('x'), policy.pop('y'))
    policy_cfg = PoisonPolicy(trigger=TriggerSpec(**trigger), **policy)

    if 'thresholds' in ev:
        ev['asr_thresholds'] = ev.pop('thresholds')
    cfg = ExperimentConfig(
        synth=synth_cfg, policy=policy_cfg,
        train=TrainConfig(**train_values),
        arch=ArchConfig(num_classes=synth_cfg.num_classes,
                        image_dims=synth_cfg.image_dims),
        output_dir=output_dir, **ev)
    logging.debug('Config fingerprint {}.'.format(cfg.fingerprint()))
    return cfg


def load_config(path, output_dir='results'):
    """ Read an experiment config file.

    Parameters
    ----------
    path : str
    output_dir : str

    Returns
    -------
    ExperimentConfig
    """
    with open(path) as f:
        text = f.read()
    return build_config(parse_config(text, path), output_dir)


def dump_config(cfg):
    """ Config file text reproducing `cfg` under :func:`parse_config`.

    Parameters
    ----------
    cfg : ExperimentConfig

    Returns
    -------
    str
    """
    def join(values):
        return ', '.join(repr(v) for v in values)

    trigger = cfg.policy.trigger
    lines = [
        'synth.num_samples = {}'.format(cfg.synth.num_samples),
        'synth.num_classes = {}'.format(cfg.synth.num_classes),
        'synth.width = {}'.format(cfg.synth.image_dims[0]),
        'synth.height = {}'.format(cfg.synth.image_dims[1]),
        'synth.prevalence = {}'.format(join(cfg.synth.class_prevalence)),
        'synth.noise_std = {!r}'.format(cfg.synth.noise_std),
        'synth.seed = {}'.format(cfg.synth.seed),
        'policy.trigger_size = {}'.format(trigger.size),
        'policy.intensity = {!r}'.format(trigger.intensity),
        'policy.placement = {}'.format(trigger.placement.value),
    ]
    if trigger.location is not None:
        lines.append('policy.x = {}'.format(trigger.location[0]))
        lines.append('policy.y = {}'.format(trigger.location[1]))
    lines += [
        'policy.target_class = {}'.format(cfg.policy.target_class),
        'policy.poison_fraction = {!r}'.format(cfg.policy.poison_fraction),
        'policy.keep_clean_copies = {}'.format(cfg.policy.keep_clean_copies),
        'policy.seed = {}'.format(cfg.policy.seed),
        'train.epochs = {}'.format(cfg.train.epochs),
        'train.batch_size = {}'.format(cfg.train.batch_size),
        'train.learning_rate = {!r}'.format(cfg.train.learning_rate),
        'train.momentum = {!r}'.format(cfg.train.momentum),
        'eval.seeds = {}'.format(join(cfg.seeds)),
        'eval.train_frac = {!r}'.format(cfg.train_frac),
        'eval.thresholds = {}'.format(join(cfg.asr_thresholds)),
        'eval.epsilons = {}'.format(join(cfg.epsilons)),
        'eval.explain = {}'.format(cfg.explain),
        'eval.dilation = {}'.format(cfg.dilation),
    ]
    if cfg.min_clean_auroc is not None:
        lines.append('eval.min_clean_auroc = {!r}'.format(
            cfg.min_clean_auroc))
    return '\n'.join(lines) + '\n'
