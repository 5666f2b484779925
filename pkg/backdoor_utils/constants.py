# -*- coding: utf-8 -*-
""" Package level constants."""

BACKGROUND = 0.5
""" float : Mid-gray background intensity of synthetic images. """

PIXEL_LEVELS = 255
""" int : Largest 8-bit pixel value, images are stored as v / PIXEL_LEVELS. """

DEFAULT_IMAGE_DIMS = (16, 16)
""" tuple[int, int] : Desk-scale (width, height). """

DEFAULT_NUM_CLASSES = 4
""" int : Desk-scale label count L. """

DEFAULT_NUM_SAMPLES = 2000
""" int : Desk-scale synthetic dataset size. """

DEFAULT_PREVALENCE = 0.3
""" float : Per-class Bernoulli label probability. """

DEFAULT_NOISE_STD = 0.05
""" float : Scale of additive Gaussian pixel noise. """

DEFAULT_TRAIN_FRAC = 0.8
""" float : Train share of the train/test split. """

DEFAULT_POISON_FRACTION = 0.4
""" float : Share of training images replaced by triggered ones. """

DEFAULT_TRIGGER_SIZE = 3
""" int : Side length of the square trigger in pixels. """

DEFAULT_TRIGGER_INTENSITY = 0.0
""" float : Trigger pixel value, black. """

DEFAULT_SEEDS = (1, 2, 3, 4)
""" tuple[int] : Training seeds of one experiment. """

ASR_THRESHOLDS = (0.6, 0.9)
""" tuple[float] : Confidence thresholds p of the attack success rate. """

DEFAULT_EPSILONS = (0.01, 0.1, 0.5)
""" tuple[float] : Inference-mix proportions, the smallest (1 / |test|) is
prepended by the sweep. """

DEFAULT_TRIGGER_SIZES = (1, 2, 3, 4)
""" tuple[int] : Trigger sizes of the trigger-size sweep. """

DEFAULT_POISON_FRACTIONS = (0.01, 0.05, 0.1, 0.2, 0.4)
""" tuple[float] : Poison fractions of the poison-fraction sweep, the two
full-poisoning arms are appended by the sweep. """

PROB_CLAMP = 1e-7
""" float : Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] in the
loss. """

CONV_KERNEL = 3
""" int : Side length of every convolution kernel. """

DEFAULT_CONV_CHANNELS = (8, 16, 16)
""" tuple[int] : Output channels of the default convolution stack. """

DEFAULT_EPOCHS = 15
""" int : Training epochs, one checkpoint each. """

DEFAULT_BATCH_SIZE = 32
""" int : Mini-batch size. """

DEFAULT_LEARNING_RATE = 0.05
""" float : SGD step size. """

DEFAULT_MOMENTUM = 0.9
""" float : SGD momentum coefficient. """

COUNT_TOLERANCE = 1e-9
""" float : Slack used when turning ratios into sample counts. """

CHECKPOINT_MAGIC = b'BDCK'
""" bytes : Leading bytes of every checkpoint file. """

CHECKPOINT_VERSION = 1
""" int : Checkpoint format version. """

MANIFEST_NAME = 'manifest.csv'
""" str : Per-sample manifest of a stored dataset. """

META_NAME = 'dataset.json'
""" str : Dataset level metadata of a stored dataset. """

MANIFEST_COLUMNS = ('id', 'filename', 'true_label', 'is_infected',
                    'infected_label')
""" tuple[str] : Header of the dataset manifest. """

POISON_MANIFEST_COLUMNS = ('sample_id', 'x', 'y', 'size', 'target_class')
""" tuple[str] : Header of a poison manifest. """

RUN_COLUMNS = ('sweep_arm', 'seed', 'epoch')
""" tuple[str] : Leading columns of the results CSV. """

AUROC_NAMES = ('auroc_nn', 'auroc_tt', 'auroc_tn')
""" tuple[str] : Trailing AUROC columns of the results CSV. """

RESULTS_COLUMNS = ('sweep_arm', 'seed', 'epoch', 'asr_p60', 'asr_p90',
                   'auroc_nn', 'auroc_tt', 'auroc_tn')
""" tuple[str] : Header of the results CSV at the default ASR thresholds;
one ``asr_pNN`` column per threshold otherwise. """

SUMMARY_COLUMNS = ('metric', 'arm', 'min_mean', 'min_std', 'max_mean',
                   'max_std')
""" tuple[str] : Header of a sweep summary. """

MIX_METRIC = 'auroc_mix'
""" str : Metric name of the inference-mix sweep. """

OVERLAY_ALPHA = 0.4
""" float : Opacity of the colormap in saliency overlays. """

OVERLAY_COLORMAP = 'jet'
""" str : Matplotlib colormap, blue for low and red for high saliency. """

DEFAULT_DILATION = 2
""" int : Dilation radius of the trigger region in localization scores. """

TRIGGERED_SUFFIX = '~trig'
""" str : Id suffix of appended triggered copies. """
