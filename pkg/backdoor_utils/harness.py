# -*- coding: utf-8 -*-
""" Experiment runs, sweeps and result files.

A run generates (or reuses) the synthetic data, poisons the training split,
trains one model per seed with per-epoch checkpoints and evaluates every
checkpoint on the paired clean/infected test sets. Sweeps repeat runs over
one experiment variable on the same data so that differences come from that
variable alone.
"""
import copy
import csv
import hashlib
import json
import logging
import os
import re
from collections import OrderedDict

from .constants import DEFAULT_SEEDS, DEFAULT_TRAIN_FRAC, ASR_THRESHOLDS, \
    DEFAULT_EPSILONS, DEFAULT_DILATION, DEFAULT_TRIGGER_SIZES, \
    DEFAULT_POISON_FRACTIONS, RUN_COLUMNS, AUROC_NAMES, SUMMARY_COLUMNS, \
    MIX_METRIC
from .dataset import SynthConfig, generate_synthetic, split
from .exceptions import ExperimentFailed, TrainingDiverged, \
    ContaminatedTestSet, PairingMismatch, ManifestError, CheckpointError, \
    MissingForwardPass, UndefinedMetric
from .explain import gradcam, saliency_overlay, overlay_filename
from .metrics import evaluate_records, aggregate, aggregate_values, \
    auroc_mixed, threshold_key
from .model import ArchConfig, TrainConfig, init_model, train, predict
from .options import Placement, Layer, SweepAxis
from .trigger import TriggerSpec, PoisonPolicy, poison_training_set, \
    build_eval_sets, mix_inference_set

_RUN_ERRORS = (ValueError, OSError, TrainingDiverged, ContaminatedTestSet,
               PairingMismatch, ManifestError, CheckpointError,
               MissingForwardPass)

DEFAULT_ARM = 'default'
CLEAN_ARM = 'clean'


class ExperimentConfig:
    """ Everything that determines a run.

    Parameters
    ----------
    synth : SynthConfig, optional
    policy : PoisonPolicy, optional
    train : TrainConfig, optional
        Its seed is replaced by each entry of `seeds`.
    arch : ArchConfig, optional
        Defaults to the standard stack for the synthetic data's dims and
        class count.
    seeds : Sequence[int]
        Training seeds (model initialisation and shuffling).
    train_frac : float
        Train share of the split, the split is seeded with `synth.seed`.
    asr_thresholds : Sequence[float]
    epsilons : Sequence[float]
        Inference-mix proportions.
    output_dir : str
        Where results go; not part of the fingerprint.
    min_clean_auroc : float, optional
        The user's acceptance bar on clean AUROC-NN.
    explain : bool
        If True, result emission renders saliency overlays.
    dilation : int
        Dilation radius of localization scores.
    """
    def __init__(self, synth=None, policy=None, train=None, arch=None,
                 seeds=DEFAULT_SEEDS, train_frac=DEFAULT_TRAIN_FRAC,
                 asr_thresholds=ASR_THRESHOLDS, epsilons=DEFAULT_EPSILONS,
                 output_dir='results', min_clean_auroc=None, explain=False,
                 dilation=DEFAULT_DILATION):
        synth = synth if synth is not None else SynthConfig()
        if arch is None:
            arch = ArchConfig(num_classes=synth.num_classes,
                              image_dims=synth.image_dims)

        self.synth = synth
        self.policy = policy if policy is not None else PoisonPolicy()
        self.train = train if train is not None else TrainConfig()
        self.arch = arch
        self.seeds = tuple(int(s) for s in seeds)
        self.train_frac = float(train_frac)
        self.asr_thresholds = tuple(float(p) for p in asr_thresholds)
        self.epsilons = tuple(float(e) for e in epsilons)
        self.output_dir = output_dir
        self.min_clean_auroc = min_clean_auroc
        self.explain = bool(explain)
        self.dilation = int(dilation)
        self._check()

    def _check(self):
        try:
            _check_experiment(self.synth, self.arch, self.seeds,
                              self.train_frac, self.asr_thresholds,
                              self.epsilons, self.min_clean_auroc,
                              self.dilation)
        except AssertionError as e:
            raise ValueError(str(e))

    def replace(self, **changes):
        """ Shallow copy with some attributes replaced.

        Raises
        ------
        ValueError
            On unknown fields or if the result is not a valid config.
        """
        new = copy.copy(self)
        for name, value in changes.items():
            if not hasattr(self, name):
                raise ValueError('unknown config field: {}'.format(name))
            setattr(new, name, value)
        new._check()
        return new

    def with_policy(self, **changes):
        """ Copy with some :class:`PoisonPolicy` fields replaced. """
        fields = dict(trigger=self.policy.trigger,
                      target_class=self.policy.target_class,
                      poison_fraction=self.policy.poison_fraction,
                      seed=self.policy.seed,
                      keep_clean_copies=self.policy.keep_clean_copies)
        fields.update(changes)
        return self.replace(policy=PoisonPolicy(**fields))

    def train_config(self, seed):
        """ The training config of one seed. """
        fields = self.train.to_dict()
        fields['seed'] = seed
        return TrainConfig(**fields)

    def to_dict(self):
        return {
            'synth': self.synth.to_dict(),
            'policy': self.policy.to_dict(),
            'train': self.train.to_dict(),
            'arch': self.arch.to_dict(),
            'seeds': list(self.seeds),
            'train_frac': self.train_frac,
            'asr_thresholds': list(self.asr_thresholds),
            'epsilons': list(self.epsilons),
            'min_clean_auroc': self.min_clean_auroc,
            'explain': self.explain,
            'dilation': self.dilation,
        }

    def fingerprint(self):
        """ str : SHA-256 of the canonical JSON encoding. """
        encoded = json.dumps(self.to_dict(), sort_keys=True).encode('utf-8')
        return hashlib.sha256(encoded).hexdigest()


class RunResult:
    """ Outcome of :func:`run_experiment`.

    Attributes
    ----------
    arm : str
        Sweep arm label.
    cfg : ExperimentConfig
    fingerprint : str
    reports : collections.OrderedDict[int, list[MetricReport]]
        Per-seed per-epoch reports.
    aggregate : AggregateReport
    checkpoints : collections.OrderedDict[int, list[Checkpoint]]
    eval_sets : backdoor_utils.trigger.EvalSets
    meets_clean_bar : bool or None
        Whether mean max AUROC-NN reaches `cfg.min_clean_auroc`, None when no
        bar is set.
    artifacts : list[str]
        Paths written by :func:`emit_results`.
    """
    def __init__(self, arm, cfg, reports, checkpoints, eval_sets):
        self.arm = arm
        self.cfg = cfg
        self.fingerprint = cfg.fingerprint()
        self.reports = reports
        self.checkpoints = checkpoints
        self.eval_sets = eval_sets
        self.aggregate = aggregate(reports.values())
        self.artifacts = list()

        self.meets_clean_bar = None
        if cfg.min_clean_auroc is not None:
            nn = self.aggregate['auroc_nn']
            self.meets_clean_bar = nn is not None \
                and nn.max_mean >= cfg.min_clean_auroc
            if not self.meets_clean_bar:
                logging.warning('Arm {}: clean AUROC-NN below the acceptance '
                                'bar {}.'.format(arm, cfg.min_clean_auroc))

    def __repr__(self):
        return '<{0}.{1}: {2} ({3})>'.format(
            self.__class__.__module__, self.__class__.__name__, self.arm,
            self.fingerprint[:12])


class MixResult:
    """ Mixed-set AUROC of one inference-mix proportion.

    Attributes
    ----------
    arm : str
    epsilon : float
    values : collections.OrderedDict[int, list[float]]
        Per-seed per-epoch AUROC.
    aggregate : AggregateReport
    """
    def __init__(self, arm, epsilon, values):
        self.arm = arm
        self.epsilon = epsilon
        self.values = values
        self.aggregate = aggregate_values(list(values.values()), MIX_METRIC)


class SweepTable:
    """ Results of one sweep, one entry per arm.

    Attributes
    ----------
    axis : SweepAxis or None
        None for a single run.
    rows : list[RunResult or MixResult]
    runs : list[RunResult]
        Underlying training runs.
    """
    def __init__(self, axis, rows, runs=None):
        self.axis = axis
        self.rows = list(rows)
        self.runs = list(runs) if runs is not None else \
            [r for r in self.rows if isinstance(r, RunResult)]

    @property
    def name(self):
        if self.axis is not None:
            return self.axis.value
        return self.rows[0].arm if self.rows else 'run'

    @property
    def arms(self):
        return [row.arm for row in self.rows]

    def row(self, arm):
        for row in self.rows:
            if row.arm == arm:
                return row
        raise KeyError(arm)

    def summary_rows(self):
        """ (metric, arm, min_mean, min_std, max_mean, max_std) tuples,
        metric-major. Undefined summaries give None cells. """
        names = OrderedDict()
        for row in self.rows:
            for name, _ in row.aggregate:
                names[name] = None
        rows = list()
        for name in names:
            for row in self.rows:
                summary = row.aggregate.metrics.get(name)
                if summary is None:
                    rows.append((name, row.arm, None, None, None, None))
                else:
                    rows.append((name, row.arm, summary.min_mean,
                                 summary.min_std, summary.max_mean,
                                 summary.max_std))
        return rows


def prepare_data(cfg):
    """ Generate the synthetic data and split it.

    Returns
    -------
    train : Dataset
    test : Dataset
    """
    ds = generate_synthetic(cfg.synth)
    return split(ds, cfg.train_frac, cfg.synth.seed)


def evaluate_checkpoint(model, clean, infected, target_class,
                        thresholds=ASR_THRESHOLDS, epoch=0):
    """ All metrics of `model` on paired clean/infected test sets.

    Returns
    -------
    MetricReport
    """
    return evaluate_records(predict(model, clean), predict(model, infected),
                            target_class, thresholds, epoch)


def run_experiment(cfg, arm=DEFAULT_ARM, data=None, emit=True):
    """ Poison, train every seed and evaluate every epoch.

    Parameters
    ----------
    cfg : ExperimentConfig
    arm : str
        Label of the run within a sweep.
    data : tuple[Dataset, Dataset], optional
        Pre-split (train, test) data, generated from `cfg` if omitted.
    emit : bool
        If True, write results under `cfg.output_dir` with
        :func:`emit_results`.

    Returns
    -------
    RunResult

    Raises
    ------
    ExperimentFailed
        Wrapping any module error, with arm and seed.
    """
    logging.info('Run {} ({}).'.format(arm, cfg.fingerprint()[:12]))
    policy = cfg.policy
    try:
        train_set, test_set = data if data is not None else prepare_data(cfg)
        poisoned, _ = poison_training_set(train_set, policy)
        eval_sets = build_eval_sets(test_set, policy.trigger,
                                    policy.target_class, seed=policy.seed)
    except _RUN_ERRORS as e:
        raise ExperimentFailed('arm {}: {}'.format(arm, e)) from e

    reports = OrderedDict()
    checkpoints = OrderedDict()
    for seed in cfg.seeds:
        try:
            model = init_model(cfg.arch, seed)
            checkpoints[seed] = train(model, poisoned, cfg.train_config(seed))
            reports[seed] = [
                evaluate_checkpoint(cp.model, eval_sets.clean,
                                    eval_sets.infected, policy.target_class,
                                    cfg.asr_thresholds, cp.epoch)
                for cp in checkpoints[seed]]
        except _RUN_ERRORS as e:
            raise ExperimentFailed('arm {}, seed {}: {}'.format(
                arm, seed, e)) from e
        logging.info('Arm {}, seed {} done.'.format(arm, seed))

    result = RunResult(arm, cfg, reports, checkpoints, eval_sets)
    if emit:
        emit_results(result)
    return result


def _resized_trigger(trigger, size):
    return TriggerSpec(size, trigger.intensity, trigger.placement,
                       trigger.location)


def sweep_trigger_size(base, sizes=DEFAULT_TRIGGER_SIZES):
    """ One run per trigger size plus a clean control.

    The control trains on unpoisoned data and is evaluated on images carrying
    the base trigger.

    Returns
    -------
    SweepTable
    """
    data = prepare_data(base)
    rows = [run_experiment(base.with_policy(poison_fraction=0.0,
                                            keep_clean_copies=False),
                           CLEAN_ARM, data, False)]
    for size in sizes:
        cfg = base.with_policy(trigger=_resized_trigger(base.policy.trigger,
                                                        size))
        rows.append(run_experiment(cfg, 'size{}'.format(size), data, False))
    return SweepTable(SweepAxis.TriggerSize, rows)


def sweep_location(base):
    """ Centered against random per-image trigger placement.

    Returns
    -------
    SweepTable
    """
    data = prepare_data(base)
    trigger = base.policy.trigger
    rows = list()
    for arm, placement in (('fixed', Placement.Center),
                           ('random', Placement.Random)):
        spec = TriggerSpec(trigger.size, trigger.intensity, placement)
        rows.append(run_experiment(base.with_policy(trigger=spec), arm, data,
                                   False))
    return SweepTable(SweepAxis.Location, rows)


def sweep_target_class(base):
    """ One run per target class.

    Returns
    -------
    SweepTable
    """
    data = prepare_data(base)
    rows = [run_experiment(base.with_policy(target_class=t),
                           'class{}'.format(t), data, False)
            for t in range(base.synth.num_classes)]
    return SweepTable(SweepAxis.TargetClass, rows)


def sweep_poison_fraction(base, fractions=DEFAULT_POISON_FRACTIONS,
                          full_poisoning=True):
    """ One run per poison fraction.

    Parameters
    ----------
    base : ExperimentConfig
    fractions : Sequence[float]
        Replacement poisoning fractions.
    full_poisoning : bool
        If True, append an arm where every image gets an infected copy next
        to its clean original (``full+clean``) and an arm where every image
        is replaced by its infected version (``trig``).

    Returns
    -------
    SweepTable
    """
    data = prepare_data(base)
    rows = list()
    for fraction in fractions:
        cfg = base.with_policy(poison_fraction=fraction,
                               keep_clean_copies=False)
        rows.append(run_experiment(cfg, 'frac{:g}'.format(fraction), data,
                                   False))
    if full_poisoning:
        rows.append(run_experiment(
            base.with_policy(poison_fraction=1.0, keep_clean_copies=True),
            'full+clean', data, False))
        rows.append(run_experiment(
            base.with_policy(poison_fraction=1.0, keep_clean_copies=False),
            'trig', data, False))
    return SweepTable(SweepAxis.PoisonFraction, rows)


def sweep_inference_mix(base, epsilons=None):
    """ AUROC against true labels on clean/infected test mixes.

    The smallest proportion, one infected image (``1 / |test|``), is
    prepended to `epsilons`.

    Parameters
    ----------
    base : ExperimentConfig
    epsilons : Sequence[float], optional
        Defaults to `base.epsilons`.

    Returns
    -------
    SweepTable
        One :class:`MixResult` per proportion; `runs` holds the poisoned run.
    """
    run = run_experiment(base, DEFAULT_ARM, emit=False)
    clean, infected = run.eval_sets.clean, run.eval_sets.infected
    epsilons = list(base.epsilons if epsilons is None else epsilons)
    smallest = 1.0 / len(clean)
    if smallest not in epsilons:
        epsilons.insert(0, smallest)

    rows = list()
    for epsilon in sorted(epsilons):
        mixed = mix_inference_set(clean, infected, epsilon, base.policy.seed)
        values = OrderedDict()
        for seed, checkpoints in run.checkpoints.items():
            values[seed] = [_mixed_auroc(cp.model, mixed)
                            for cp in checkpoints]
        rows.append(MixResult('eps{:g}'.format(epsilon), epsilon, values))
        logging.info('Inference mix {:g} done.'.format(epsilon))
    return SweepTable(SweepAxis.InferenceMix, rows, runs=[run])


def _mixed_auroc(model, mixed):
    try:
        return auroc_mixed(predict(model, mixed))
    except UndefinedMetric as e:
        logging.warning('{}; recorded as absent.'.format(e))
        return None


def run_sweep(axis, base):
    """ Dispatch on `axis`. """
    sweeps = {
        SweepAxis.TriggerSize: sweep_trigger_size,
        SweepAxis.Location: sweep_location,
        SweepAxis.TargetClass: sweep_target_class,
        SweepAxis.PoisonFraction: sweep_poison_fraction,
        SweepAxis.InferenceMix: sweep_inference_mix,
    }
    if not isinstance(axis, SweepAxis):
        raise ValueError('invalid sweep axis: {}'.format(axis))
    return sweeps[axis](base)


def _cell(value):
    return '' if value is None else '{:.6f}'.format(value)


def results_columns(runs):
    """ Results CSV header with one ASR column per threshold of `runs`.

    The default thresholds give
    :data:`backdoor_utils.constants.RESULTS_COLUMNS`.
    """
    thresholds = sorted({p for run in runs for p in run.cfg.asr_thresholds})
    return RUN_COLUMNS \
        + tuple(threshold_key(p) for p in thresholds or ASR_THRESHOLDS) \
        + AUROC_NAMES


def write_results_csv(runs, path):
    """ One row per arm, seed and epoch; undefined metrics are empty. """
    columns = results_columns(runs)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for run in runs:
            for seed, reports in run.reports.items():
                for report in reports:
                    values = report.values()
                    writer.writerow([run.arm, seed, report.epoch] +
                                    [_cell(values.get(name))
                                     for name in columns[3:]])
    return path


def write_summary_csv(rows, path):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for metric, arm, *values in rows:
            writer.writerow([metric, arm] + [_cell(v) for v in values])
    return path


def _probe(run):
    """ Id of the first test sample lacking the target class. """
    t = run.cfg.policy.target_class
    clean = run.eval_sets.clean
    for sample in clean:
        if sample.true_label[t] == 0:
            return sample.id
    return clean[0].id if len(clean) else None


def emit_overlays(run, out_dir):
    """ Saliency overlays of a probe image, clean and infected, at both
    layers for every epoch of the first seed.

    Returns
    -------
    list[str]
    """
    sample_id = _probe(run)
    if sample_id is None or not run.checkpoints:
        return []
    t = run.cfg.policy.target_class
    seed = next(iter(run.checkpoints))
    layers = [Layer.Final]
    if run.cfg.arch.middle_tap is not None:
        layers.append(Layer.Middle)

    paths = list()
    for variant, ds in (('clean', run.eval_sets.clean),
                        ('infected', run.eval_sets.infected)):
        image = ds.get(sample_id).image
        for cp in run.checkpoints[seed]:
            for layer in layers:
                smap = gradcam(cp.model, image, t, layer)
                path = os.path.join(out_dir, 'overlays', run.arm, variant,
                                    overlay_filename(sample_id, layer,
                                                     cp.epoch))
                paths.append(saliency_overlay(image, smap, path))
    return paths


def emit_results(result, out_dir=None):
    """ Write results CSV, summary CSV and, when enabled, overlays.

    Parameters
    ----------
    result : SweepTable or RunResult
    out_dir : str, optional
        Defaults to the first run's `cfg.output_dir`.

    Returns
    -------
    list[str]
        Written paths.
    """
    table = result if isinstance(result, SweepTable) \
        else SweepTable(None, [result])
    if out_dir is None:
        out_dir = table.runs[0].cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)

    paths = [
        write_results_csv(table.runs, os.path.join(
            out_dir, '{}_results.csv'.format(table.name))),
        write_summary_csv(table.summary_rows(), os.path.join(
            out_dir, '{}_summary.csv'.format(table.name))),
    ]
    for run in table.runs:
        if run.cfg.explain:
            overlays = emit_overlays(run, out_dir)
            run.artifacts.extend(overlays)
            paths.extend(overlays)
        run.artifacts.extend(paths[:2])

    logging.info('Wrote {} files to {}.'.format(len(paths), out_dir))
    return paths


_ASR_COLUMN = re.compile(r'^asr_p\d{2,}$')


def _check_results_header(header):
    return header is not None \
        and tuple(header[:3]) == RUN_COLUMNS \
        and tuple(header[-3:]) == AUROC_NAMES \
        and len(header) > 6 \
        and all(_ASR_COLUMN.match(name) for name in header[3:-3])


def _read_results(path):
    with open(path, newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not _check_results_header(header):
            raise ManifestError('results header must be {},asr_pNN...,{}'
                                .format(','.join(RUN_COLUMNS),
                                        ','.join(AUROC_NAMES)))
        names = header[3:]
        arms = OrderedDict()
        for row in reader:
            arm, seed = row[0], int(row[1])
            values = OrderedDict((name, float(cell) if cell else None)
                                 for name, cell in zip(names, row[3:]))
            arms.setdefault(arm, OrderedDict()).setdefault(seed, []) \
                .append(values)
    return names, arms


def read_results_csv(path):
    """ Parse a results CSV.

    Returns
    -------
    collections.OrderedDict[str, collections.OrderedDict[int, list[dict]]]
        arm -> seed -> per-epoch metric dicts (None for empty cells).

    Raises
    ------
    ManifestError
        If the header is not a results header.
    """
    return _read_results(path)[1]


def summarize_results(path):
    """ Re-aggregate a results CSV into summary rows.

    Returns
    -------
    list[tuple]
        Same layout as :meth:`SweepTable.summary_rows`, metrics in header
        order.
    """
    names, arms = _read_results(path)
    rows = list()
    for name in names:
        for arm, seeds in arms.items():
            runs = [[epoch[name] for epoch in epochs]
                    for epochs in seeds.values()]
            summary = aggregate_values(runs, name)[name]
            if summary is None:
                rows.append((name, arm, None, None, None, None))
            else:
                rows.append((name, arm, summary.min_mean, summary.min_std,
                             summary.max_mean, summary.max_std))
    return rows


def _check_experiment(synth, arch, seeds, train_frac, asr_thresholds,
                      epsilons, min_clean_auroc, dilation):
    """ Check input for :class:`ExperimentConfig`.

    Raises
    -------
    AssertionError
        If input is bad.
    """
    assert len(seeds) >= 1, 'seeds must not be empty'
    assert len(set(seeds)) == len(seeds), 'seeds must be distinct'
    assert 0 < train_frac < 1, 'train_frac must be in (0, 1)'
    assert asr_thresholds and all(0 < p < 1 for p in asr_thresholds), \
        'asr_thresholds must be in (0, 1)'
    assert len({threshold_key(p) for p in asr_thresholds}) \
        == len(asr_thresholds), 'asr_thresholds must differ in percent'
    assert all(0 <= e <= 1 for e in epsilons), 'epsilons must be in [0, 1]'
    assert min_clean_auroc is None or 0 <= min_clean_auroc <= 1, \
        'min_clean_auroc must be in [0, 1]'
    assert dilation >= 0, 'dilation must be non-negative'
    assert arch.image_dims == synth.image_dims, \
        'arch input dims must match the synthetic images'
    assert arch.num_classes == synth.num_classes, \
        'arch must have one output per class'
