# -*- coding: utf-8 -*-
""" Backdoor evaluation metrics.

Attack success rate (ASR) and three micro-average AUROC variants computed
from prediction records:

* AUROC-NN, clean images against their true labels,
* AUROC-TT, triggered images against the infected labels,
* AUROC-TN, triggered images against their true labels (lower is a stronger
  backdoor).

Per-epoch reports are aggregated to min/max over epochs and then to
mean and standard deviation over seeds.
"""
import logging
from collections import OrderedDict

import numpy as np
from scipy.stats import rankdata

from .constants import ASR_THRESHOLDS
from .exceptions import UndefinedMetric, ContaminatedTestSet


class PredictionRecord:
    """ Model output for one sample together with its labels.

    Parameters
    ----------
    sample_id : str
    probs : Sequence[float]
        Per-class probabilities, length L.
    true_label : Sequence[int]
    infected_label : Sequence[int], optional
    """
    __slots__ = ('sample_id', 'probs', 'true_label', 'infected_label')

    def __init__(self, sample_id, probs, true_label, infected_label=None):
        probs = np.asarray(probs, dtype=np.float64)
        true_label = np.asarray(true_label, dtype=np.uint8)
        if probs.shape != true_label.shape:
            raise ValueError('probs and label lengths differ')
        if infected_label is not None:
            infected_label = np.asarray(infected_label, dtype=np.uint8)
            if infected_label.shape != true_label.shape:
                raise ValueError('infected_label length differs')

        self.sample_id = sample_id
        self.probs = probs
        self.true_label = true_label
        self.infected_label = infected_label

    @property
    def is_infected(self):
        """ bool : True for records of triggered images. """
        return self.infected_label is not None

    def __repr__(self):
        return '<{0}.{1}: {2}>'.format(self.__class__.__module__,
                                       self.__class__.__name__,
                                       self.sample_id)


def threshold_key(p):
    """ Column name of the ASR at threshold `p`, e.g. ``asr_p60``. """
    return 'asr_p{:02d}'.format(int(round(p * 100)))


class MetricReport:
    """ Metrics of one checkpoint. Undefined values are None.

    Parameters
    ----------
    epoch : int
    asr_by_threshold : Mapping[float, float or None]
    auroc_nn : float or None
    auroc_tt : float or None
    auroc_tn : float or None
    """
    def __init__(self, epoch, asr_by_threshold, auroc_nn, auroc_tt, auroc_tn):
        self.epoch = int(epoch)
        self.asr_by_threshold = OrderedDict(sorted(asr_by_threshold.items()))
        self.auroc_nn = auroc_nn
        self.auroc_tt = auroc_tt
        self.auroc_tn = auroc_tn

        for value in self.values().values():
            if value is not None and not 0 <= value <= 1:
                raise ValueError('metric values must be in [0, 1]')

    def values(self):
        """ Metric name to value, ASR columns first.

        Returns
        -------
        collections.OrderedDict[str, float or None]
        """
        values = OrderedDict((threshold_key(p), v)
                             for p, v in self.asr_by_threshold.items())
        values['auroc_nn'] = self.auroc_nn
        values['auroc_tt'] = self.auroc_tt
        values['auroc_tn'] = self.auroc_tn
        return values

    def __repr__(self):
        return '<{0}.{1}: epoch {2}>'.format(self.__class__.__module__,
                                             self.__class__.__name__,
                                             self.epoch)


class MetricSummary:
    """ Extremes of one metric over epochs, summarised over seeds.

    Attributes
    ----------
    per_seed_min : list[float]
    per_seed_max : list[float]
    num_seeds : int
        Seeds with at least one defined value; the others are left out.
    min_mean, min_std, max_mean, max_std : float
    """
    def __init__(self, per_seed_min, per_seed_max):
        self.per_seed_min = list(per_seed_min)
        self.per_seed_max = list(per_seed_max)
        self.num_seeds = len(self.per_seed_min)
        self.min_mean = float(np.mean(self.per_seed_min))
        self.min_std = float(np.std(self.per_seed_min))
        self.max_mean = float(np.mean(self.per_seed_max))
        self.max_std = float(np.std(self.per_seed_max))


class AggregateReport:
    """ Per-metric min/max over epochs with mean and std over seeds.

    Attributes
    ----------
    metrics : collections.OrderedDict[str, MetricSummary or None]
        None where a metric was undefined for every epoch of every seed.
    num_runs : int
    """
    def __init__(self, metrics, num_runs):
        self.metrics = metrics
        self.num_runs = num_runs

    def __getitem__(self, item):
        return self.metrics[item]

    def __iter__(self):
        return iter(self.metrics.items())


def _check_records(records, infected):
    for record in records:
        if record.is_infected == infected:
            continue
        if infected:
            raise ValueError('record {} is not infected'.format(
                record.sample_id))
        raise ContaminatedTestSet('record {} is infected'.format(
            record.sample_id))


def asr(records, t, p):
    """ Attack success rate.

    Among infected records whose true label lacks class `t`, the share with
    ``probs[t] >= p``.

    Parameters
    ----------
    records : Sequence[PredictionRecord]
        Records of infected images.
    t : int
        Target class.
    p : float
        Confidence threshold in (0, 1).

    Returns
    -------
    float

    Raises
    ------
    UndefinedMetric
        If no record has true label bit `t` cleared.
    """
    if not 0 < p < 1:
        raise ValueError('p must be in (0, 1)')
    _check_records(records, infected=True)
    eligible = [r for r in records if r.true_label[t] == 0]
    if not eligible:
        raise UndefinedMetric('ASR undefined: every record has class {} '
                              'in its true label'.format(t))
    hits = sum(1 for r in eligible if r.probs[t] >= p)
    return hits / len(eligible)


def micro_auroc(scores, labels):
    """ Area under the ROC curve of flattened scores and binary labels.

    Computed as the Mann-Whitney statistic from average ranks, so tied
    positive/negative pairs count one half.

    Parameters
    ----------
    scores : array-like
    labels : array-like
        Binary, same size as `scores`.

    Returns
    -------
    float

    Raises
    ------
    UndefinedMetric
        If `labels` hold a single class.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise ValueError('scores and labels differ in size')
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric('AUROC undefined for single-class labels')

    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _stack(records, getter):
    return (np.array([r.probs for r in records]),
            np.array([getter(r) for r in records]))


def auroc_nn(records):
    """ Micro-AUROC of clean records against their true labels. """
    _check_records(records, infected=False)
    return micro_auroc(*_stack(records, lambda r: r.true_label))


def auroc_tt(records):
    """ Micro-AUROC of infected records against their infected labels. """
    _check_records(records, infected=True)
    return micro_auroc(*_stack(records, lambda r: r.infected_label))


def auroc_tn(records):
    """ Micro-AUROC of infected records against their true labels. """
    _check_records(records, infected=True)
    return micro_auroc(*_stack(records, lambda r: r.true_label))


def auroc_mixed(records):
    """ Micro-AUROC of a clean/infected mix against true labels. """
    return micro_auroc(*_stack(records, lambda r: r.true_label))


def _defined(metric, *args):
    try:
        return metric(*args)
    except UndefinedMetric as e:
        logging.warning('{}; recorded as absent.'.format(e))
        return None


def evaluate_records(clean_records, infected_records, t,
                     thresholds=ASR_THRESHOLDS, epoch=0):
    """ All metrics of one checkpoint, undefined ones as None.

    Parameters
    ----------
    clean_records : Sequence[PredictionRecord]
    infected_records : Sequence[PredictionRecord]
    t : int
        Target class.
    thresholds : Sequence[float]
        ASR thresholds.
    epoch : int

    Returns
    -------
    MetricReport
    """
    asr_by_threshold = {p: _defined(asr, infected_records, t, p)
                        for p in thresholds}
    return MetricReport(epoch, asr_by_threshold,
                        _defined(auroc_nn, clean_records),
                        _defined(auroc_tt, infected_records),
                        _defined(auroc_tn, infected_records))


def _summarize(name, runs):
    """ MetricSummary of per-run value lists, None if nothing is defined.

    Runs without a single defined value are left out of the summary.
    """
    minima, maxima = list(), list()
    for values in runs:
        values = [v for v in values if v is not None]
        if values:
            minima.append(min(values))
            maxima.append(max(values))
    if not minima:
        return None
    if len(minima) < len(runs):
        logging.warning('{}: undefined in {} of {} runs, summarising the '
                        'rest.'.format(name, len(runs) - len(minima),
                                       len(runs)))
    return MetricSummary(minima, maxima)


def aggregate(runs):
    """ Min/max over epochs per run, then mean and std over runs.

    Parameters
    ----------
    runs : Sequence[Sequence[MetricReport]]
        Per-epoch reports, one sequence per seed.

    Returns
    -------
    AggregateReport
    """
    runs = [list(reports) for reports in runs]
    if not runs or not all(runs):
        raise ValueError('aggregate needs at least one report per run')

    metrics = OrderedDict()
    for name in runs[0][0].values():
        metrics[name] = _summarize(
            name, [[r.values().get(name) for r in reports]
                   for reports in runs])
    return AggregateReport(metrics, len(runs))


def aggregate_values(runs, name):
    """ Aggregate a single scalar metric given per-run, per-epoch values.

    Parameters
    ----------
    runs : Sequence[Sequence[float or None]]
    name : str

    Returns
    -------
    AggregateReport
    """
    runs = [list(values) for values in runs]
    if not runs:
        raise ValueError('aggregate needs at least one run')
    return AggregateReport(OrderedDict([(name, _summarize(name, runs))]),
                           len(runs))
