# -*- coding: utf-8 -*-
""" Command line interface.

Usage::

    python -m backdoor_utils [--config PATH] [--out DIR] [--seed N] COMMAND

Commands write under ``--out``:

* ``generate``: synthetic data split into ``data/train`` and ``data/test``,
* ``poison``: ``data/poisoned`` and ``data/poison_manifest.csv``,
* ``train``: ``checkpoints/seed<N>/epoch<NNN>.ckpt``,
* ``eval``: ``eval_results.csv`` and ``eval_summary.csv``,
* ``gradcam``: saliency overlays under ``overlays/``,
* ``sweep AXIS``: ``<axis>_results.csv`` and ``<axis>_summary.csv``,
* ``report``: a summary CSV re-aggregated from a results CSV.
"""
import argparse
import glob
import logging
import os
import sys
from collections import OrderedDict

from . import exceptions
from .config import load_config, dump_config
from .dataset import save_dataset, load_dataset
from .explain import gradcam, saliency_overlay, overlay_filename, \
    localization_scores
from .harness import ExperimentConfig, RunResult, prepare_data, \
    evaluate_checkpoint, run_sweep, emit_results, summarize_results, \
    write_summary_csv
from .model import Checkpoint, init_model, train, save_checkpoint, \
    load_checkpoint
from .options import Layer, SweepAxis
from .trigger import poison_training_set, build_eval_sets

_ERRORS = (ValueError, KeyError, OSError, exceptions.UndefinedMetric,
           exceptions.ManifestError, exceptions.CheckpointError,
           exceptions.ContaminatedTestSet, exceptions.PairingMismatch,
           exceptions.MissingForwardPass, exceptions.TrainingDiverged,
           exceptions.ExperimentFailed)


def _data_dir(args, name):
    return os.path.join(args.out, 'data', name)


def _checkpoint_paths(directory):
    return sorted(glob.glob(os.path.join(directory, 'epoch*.ckpt')))


def cmd_generate(cfg, args):
    train_set, test_set = prepare_data(cfg)
    save_dataset(train_set, _data_dir(args, 'train'))
    save_dataset(test_set, _data_dir(args, 'test'))
    with open(os.path.join(args.out, 'config.txt'), 'w') as f:
        f.write(dump_config(cfg))
    print('{} train / {} test samples in {}'.format(
        len(train_set), len(test_set), os.path.join(args.out, 'data')))


def cmd_poison(cfg, args):
    train_set = load_dataset(_data_dir(args, 'train'))
    poisoned, manifest = poison_training_set(train_set, cfg.policy)
    save_dataset(poisoned, _data_dir(args, 'poisoned'))
    manifest.save(os.path.join(args.out, 'data', 'poison_manifest.csv'))
    print('{} of {} samples infected'.format(len(manifest), len(poisoned)))


def cmd_train(cfg, args):
    train_set = load_dataset(_data_dir(args, args.data))
    for seed in cfg.seeds:
        directory = os.path.join(args.out, 'checkpoints',
                                 'seed{}'.format(seed))
        os.makedirs(directory, exist_ok=True)
        checkpoints = train(init_model(cfg.arch, seed), train_set,
                            cfg.train_config(seed))
        for cp in checkpoints:
            save_checkpoint(cp.model, os.path.join(
                directory, 'epoch{:03d}.ckpt'.format(cp.epoch)))
            print('seed {} epoch {}: loss {:.6f}'.format(seed, cp.epoch,
                                                         cp.mean_loss))


def _load_checkpoints(cfg, args):
    checkpoints = OrderedDict()
    for seed in cfg.seeds:
        directory = os.path.join(args.out, 'checkpoints',
                                 'seed{}'.format(seed))
        paths = _checkpoint_paths(directory)
        if not paths:
            raise ValueError('no checkpoints in {}'.format(directory))
        checkpoints[seed] = [
            Checkpoint(int(os.path.basename(p)[5:-5]), None,
                       load_checkpoint(p, cfg.arch))
            for p in paths]
    return checkpoints


def cmd_eval(cfg, args):
    policy = cfg.policy
    eval_sets = build_eval_sets(load_dataset(_data_dir(args, 'test')),
                                policy.trigger, policy.target_class,
                                seed=policy.seed)
    checkpoints = _load_checkpoints(cfg, args)
    reports = OrderedDict(
        (seed, [evaluate_checkpoint(cp.model, eval_sets.clean,
                                    eval_sets.infected, policy.target_class,
                                    cfg.asr_thresholds, cp.epoch)
                for cp in cps])
        for seed, cps in checkpoints.items())
    result = RunResult('eval', cfg, reports, checkpoints, eval_sets)
    paths = emit_results(result, args.out)
    for path in paths[:2]:
        print(path)
    if result.meets_clean_bar is False:
        print('clean AUROC-NN below {}'.format(cfg.min_clean_auroc))


def cmd_gradcam(cfg, args):
    policy = cfg.policy
    test_set = load_dataset(_data_dir(args, 'test'))
    sample_id = args.sample if args.sample is not None else test_set[0].id
    probe = test_set.replace([test_set.get(sample_id)])
    clean, infected, manifest = build_eval_sets(
        probe, policy.trigger, policy.target_class, seed=policy.seed)

    seed = cfg.seeds[0]
    paths = _checkpoint_paths(os.path.join(args.out, 'checkpoints',
                                           'seed{}'.format(seed)))
    if args.epoch is not None:
        paths = [p for p in paths
                 if os.path.basename(p) == 'epoch{:03d}.ckpt'.format(
                     args.epoch)]
    if not paths:
        raise ValueError('no matching checkpoints for seed {}'.format(seed))

    layers = [Layer(args.layer)] if args.layer else list(Layer)
    for path in paths:
        epoch = int(os.path.basename(path)[5:-5])
        model = load_checkpoint(path, cfg.arch)
        for layer in layers:
            for variant, ds in (('clean', clean), ('infected', infected)):
                smap = gradcam(model, ds.get(sample_id).image,
                               policy.target_class, layer)
                print(saliency_overlay(
                    ds.get(sample_id).image, smap,
                    os.path.join(args.out, 'overlays', variant,
                                 overlay_filename(sample_id, layer, epoch))))
            (clean_score, infected_score), = localization_scores(
                model, clean, infected, manifest, layer, cfg.dilation)
            print('epoch {} {}: localization clean {:.4f} infected {:.4f}'
                  .format(epoch, layer.value, clean_score, infected_score))


def cmd_sweep(cfg, args):
    table = run_sweep(SweepAxis(args.axis), cfg)
    for path in emit_results(table, args.out):
        print(path)


def cmd_report(cfg, args):
    rows = summarize_results(args.results)
    out = args.summary if args.summary else \
        os.path.splitext(args.results)[0] + '_summary.csv'
    write_summary_csv(rows, out)
    for metric, arm, min_mean, min_std, max_mean, max_std in rows:
        if min_mean is None:
            print('{:<10} {:<12} undefined'.format(metric, arm))
        else:
            print('{:<10} {:<12} min {:.4f} +- {:.4f}  max {:.4f} +- {:.4f}'
                  .format(metric, arm, min_mean, min_std, max_mean, max_std))
    print(out)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='backdoor_utils',
        description='Multi-label backdoor attack experiments.')
    parser.add_argument('--config', help='experiment config file')
    parser.add_argument('--out', default='results',
                        help='output directory (default: results)')
    parser.add_argument('--seed', type=int,
                        help='run a single training seed')
    parser.add_argument('--verbose', '-v', action='store_true',
                        help='debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    commands.add_parser('generate', help='generate and split synthetic data')
    commands.add_parser('poison', help='poison the training split')
    train_parser = commands.add_parser('train', help='train models')
    train_parser.add_argument('--data', default='poisoned',
                              choices=('poisoned', 'train'),
                              help='training data (default: poisoned)')
    commands.add_parser('eval', help='evaluate checkpoints')
    gradcam_parser = commands.add_parser('gradcam',
                                         help='render saliency overlays')
    gradcam_parser.add_argument('--sample', help='test sample id')
    gradcam_parser.add_argument('--epoch', type=int, help='checkpoint epoch')
    gradcam_parser.add_argument('--layer', choices=[l.value for l in Layer])
    sweep_parser = commands.add_parser('sweep', help='run a sweep')
    sweep_parser.add_argument('axis', choices=[a.value for a in SweepAxis])
    report_parser = commands.add_parser('report',
                                        help='summarize a results CSV')
    report_parser.add_argument('results', help='results CSV')
    report_parser.add_argument('--summary', help='summary CSV path')
    return parser


COMMANDS = {
    'generate': cmd_generate,
    'poison': cmd_poison,
    'train': cmd_train,
    'eval': cmd_eval,
    'gradcam': cmd_gradcam,
    'sweep': cmd_sweep,
    'report': cmd_report,
}


def main(argv=None):
    """ Run the CLI, returns the exit status. """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s %(levelname)s %(message)s')

    try:
        if args.config:
            cfg = load_config(args.config, args.out)
        else:
            cfg = ExperimentConfig(output_dir=args.out)
        if args.seed is not None:
            cfg = cfg.replace(seeds=(args.seed, ))
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except _ERRORS as e:
        logging.error('{} failed: {}'.format(args.command, e))
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
