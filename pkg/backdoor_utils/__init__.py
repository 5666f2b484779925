# -*- coding: utf-8 -*-
""" backdoor_utils is a desk-scale toolkit for studying backdoor attacks on
multi-label image classifiers. backdoor_utils provides a synthetic
multi-label dataset, trigger injection and poisoning, a small numpy CNN, the
backdoor metrics (attack success rate and AUROC variants), Grad-CAM
saliency and an experiment harness with sweeps over the attack variables.
"""
from . import constants
from .dataset import Sample, Dataset, SynthConfig, generate_synthetic, split, \
    save_dataset, load_dataset
from .exceptions import UndefinedMetric, ManifestError, CheckpointError, \
    ArchMismatch, PlacementOutOfBounds, ContaminatedTestSet, PairingMismatch, \
    MissingForwardPass, TrainingDiverged, ExperimentFailed
from .explain import SaliencyMap, gradcam, localization_score, \
    localization_scores, saliency_overlay
from .harness import ExperimentConfig, RunResult, SweepTable, \
    run_experiment, sweep_trigger_size, sweep_location, sweep_target_class, \
    sweep_poison_fraction, sweep_inference_mix, emit_results
from .config import load_config
from .metrics import PredictionRecord, MetricReport, AggregateReport, asr, \
    auroc_nn, auroc_tt, auroc_tn, aggregate
from .model import ArchConfig, TrainConfig, Model, init_model, forward, \
    backward, train, predict, save_checkpoint, load_checkpoint
from . import options
from .trigger import TriggerSpec, PoisonPolicy, PoisonManifest, \
    poison_training_set, build_eval_sets, mix_inference_set

__all__ = [constants, options, Sample, Dataset, SynthConfig,
           generate_synthetic, split, save_dataset, load_dataset,
           TriggerSpec, PoisonPolicy, PoisonManifest, poison_training_set,
           build_eval_sets, mix_inference_set, ArchConfig, TrainConfig, Model,
           init_model, forward, backward, train, predict, save_checkpoint,
           load_checkpoint, PredictionRecord, MetricReport, AggregateReport,
           asr, auroc_nn, auroc_tt, auroc_tn, aggregate, SaliencyMap, gradcam,
           localization_score, localization_scores, saliency_overlay,
           ExperimentConfig, RunResult, SweepTable, run_experiment,
           sweep_trigger_size, sweep_location, sweep_target_class,
           sweep_poison_fraction, sweep_inference_mix, emit_results,
           load_config, UndefinedMetric, ManifestError, CheckpointError,
           ArchMismatch, PlacementOutOfBounds, ContaminatedTestSet,
           PairingMismatch, MissingForwardPass, TrainingDiverged,
           ExperimentFailed]
