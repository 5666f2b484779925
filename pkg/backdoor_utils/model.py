# -*- coding: utf-8 -*-
""" Small convolutional multi-label classifier with hand-written gradients.

The network is a stack of 3x3 convolutions with ReLU, global average pooling
and a dense layer to one logit per class, followed by a per-class sigmoid.
Forward passes keep every convolution's activations so that the same cache
serves backpropagation and Grad-CAM.
"""
import json
import logging
import struct
from collections import namedtuple, OrderedDict

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .constants import CONV_KERNEL, DEFAULT_CONV_CHANNELS, \
    DEFAULT_NUM_CLASSES, DEFAULT_IMAGE_DIMS, DEFAULT_EPOCHS, \
    DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM, PROB_CLAMP, \
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .exceptions import MissingForwardPass, TrainingDiverged, \
    CheckpointError, ArchMismatch
from .metrics import PredictionRecord

_HEADER = struct.Struct('<4sHI')
_PROB_MIN = np.finfo(np.float64).tiny
_PROB_MAX = np.nextafter(1.0, 0.0)


class ConvSpec(namedtuple('ConvSpec', ['out_channels', 'stride', 'padding'])):
    """ One 3x3 convolution followed by ReLU. """


class ArchConfig:
    """ Network architecture.

    Parameters
    ----------
    conv_layers : Sequence[ConvSpec], optional
        Convolution stack, default three stride-1 zero-padded layers with
        8, 16 and 16 channels.
    num_classes : int
        Number of output logits L.
    image_dims : tuple[int, int]
        Input (width, height).
    middle_tap : int, optional
        Zero based index of the convolution used as "middle" Grad-CAM layer,
        None for single-convolution networks.
    final_tap : int, optional
        Index of the last convolution, derived when omitted.
    in_channels : int
        Input channels.
    """
    def __init__(self, conv_layers=None, num_classes=DEFAULT_NUM_CLASSES,
                 image_dims=DEFAULT_IMAGE_DIMS, middle_tap=1, final_tap=None,
                 in_channels=1):
        if conv_layers is None:
            conv_layers = [ConvSpec(c, 1, 1) for c in DEFAULT_CONV_CHANNELS]
        conv_layers = tuple(ConvSpec(*map(int, layer)) for layer in conv_layers)
        if final_tap is None:
            final_tap = len(conv_layers) - 1
        try:
            _check_arch(conv_layers, num_classes, image_dims, middle_tap,
                        final_tap, in_channels)
        except AssertionError as e:
            raise ValueError(str(e))

        self.conv_layers = conv_layers
        self.num_classes = int(num_classes)
        self.image_dims = (int(image_dims[0]), int(image_dims[1]))
        self.middle_tap = None if middle_tap is None else int(middle_tap)
        self.final_tap = int(final_tap)
        self.in_channels = int(in_channels)

        if any(h < 1 or w < 1 for _, h, w in self.feature_dims()):
            raise ValueError('convolution stack shrinks the input to nothing')

    def feature_dims(self):
        """ (channels, height, width) of every convolution's output.

        Returns
        -------
        list[tuple[int, int, int]]
        """
        width, height = self.image_dims
        dims = list()
        for layer in self.conv_layers:
            height = (height + 2 * layer.padding - CONV_KERNEL) \
                // layer.stride + 1
            width = (width + 2 * layer.padding - CONV_KERNEL) \
                // layer.stride + 1
            dims.append((layer.out_channels, height, width))
        return dims

    def param_shapes(self):
        """ Parameter names and shapes in declaration order.

        Returns
        -------
        collections.OrderedDict[str, tuple]
        """
        shapes = OrderedDict()
        channels = self.in_channels
        for i, layer in enumerate(self.conv_layers):
            shapes['conv{}.weight'.format(i)] = (layer.out_channels, channels,
                                                 CONV_KERNEL, CONV_KERNEL)
            shapes['conv{}.bias'.format(i)] = (layer.out_channels, )
            channels = layer.out_channels
        shapes['fc.weight'] = (self.num_classes, channels)
        shapes['fc.bias'] = (self.num_classes, )
        return shapes

    def to_dict(self):
        return {
            'conv_layers': [list(layer) for layer in self.conv_layers],
            'num_classes': self.num_classes,
            'image_dims': list(self.image_dims),
            'middle_tap': self.middle_tap,
            'final_tap': self.final_tap,
            'in_channels': self.in_channels,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d['conv_layers'], d['num_classes'], d['image_dims'],
                   d['middle_tap'], d['final_tap'], d['in_channels'])

    def __eq__(self, other):
        if not isinstance(other, ArchConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self):
        return '<{0}.{1}: {2}>'.format(
            self.__class__.__module__, self.__class__.__name__,
            '-'.join(str(layer.out_channels) for layer in self.conv_layers))


class TrainConfig:
    """ SGD-with-momentum training parameters.

    Parameters
    ----------
    epochs : int
    batch_size : int
    learning_rate : float
        Non-negative step size.
    momentum : float
        In [0, 1).
    seed : int
        Seed of epoch shuffling.
    checkpoint_every_epoch : bool
        If False only the final epoch is checkpointed.
    """
    def __init__(self, epochs=DEFAULT_EPOCHS, batch_size=DEFAULT_BATCH_SIZE,
                 learning_rate=DEFAULT_LEARNING_RATE,
                 momentum=DEFAULT_MOMENTUM, seed=0,
                 checkpoint_every_epoch=True):
        if int(epochs) < 1:
            raise ValueError('epochs must be at least 1')
        if int(batch_size) < 1:
            raise ValueError('batch_size must be at least 1')
        if learning_rate < 0:
            raise ValueError('learning_rate must be non-negative')
        if not 0 <= momentum < 1:
            raise ValueError('momentum must be in [0, 1)')

        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.learning_rate = float(learning_rate)
        self.momentum = float(momentum)
        self.seed = int(seed)
        self.checkpoint_every_epoch = bool(checkpoint_every_epoch)

    def to_dict(self):
        return {
            'epochs': self.epochs,
            'batch_size': self.batch_size,
            'learning_rate': self.learning_rate,
            'momentum': self.momentum,
            'seed': self.seed,
            'checkpoint_every_epoch': self.checkpoint_every_epoch,
        }


class Model:
    """ Architecture plus parameters.

    Parameters
    ----------
    arch : ArchConfig
    params : Mapping[str, numpy.ndarray]
        One array per entry of :meth:`ArchConfig.param_shapes`.
    seed : int, optional
        Seed the parameters were initialised with.
    """
    def __init__(self, arch, params, seed=None):
        shapes = arch.param_shapes()
        if list(params) != list(shapes):
            raise ValueError('parameter names do not match the architecture')
        for name, shape in shapes.items():
            if np.shape(params[name]) != shape:
                raise ValueError('{} must have shape {}'.format(name, shape))

        self.arch = arch
        self.params = OrderedDict((name, np.array(params[name],
                                                  dtype=np.float64))
                                  for name in shapes)
        self.seed = seed

    def copy(self):
        return Model(self.arch, self.params, self.seed)

    def __repr__(self):
        return '<{0}.{1}: {2!r}, seed {3}>'.format(
            self.__class__.__module__, self.__class__.__name__, self.arch,
            self.seed)


class ForwardCache:
    """ Activations kept by :func:`forward`.

    Attributes
    ----------
    batch_shape : tuple
        Shape of the (N, C, H, W) input.
    inputs : list[tuple]
        Input shape of every convolution.
    cols : list[numpy.ndarray]
        Unfolded inputs of every convolution.
    pre : list[numpy.ndarray]
        Pre-ReLU outputs of every convolution.
    taps : list[numpy.ndarray]
        Post-ReLU activations of every convolution.
    pooled : numpy.ndarray
    logits : numpy.ndarray
    probs : numpy.ndarray
    """
    def __init__(self, batch_shape):
        self.batch_shape = batch_shape
        self.inputs = list()
        self.cols = list()
        self.pre = list()
        self.taps = list()
        self.pooled = None
        self.logits = None
        self.probs = None


Checkpoint = namedtuple('Checkpoint', ['epoch', 'mean_loss', 'model'])


def init_model(arch, seed):
    """ He-initialised weights, zero biases.

    Parameters
    ----------
    arch : ArchConfig
    seed : int

    Returns
    -------
    Model
    """
    rng = np.random.default_rng(seed)
    params = OrderedDict()
    for name, shape in arch.param_shapes().items():
        if name.endswith('.bias'):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    return Model(arch, params, seed)


def _as_batch(arch, batch):
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 3:
        batch = batch[:, None]
    width, height = arch.image_dims
    expected = (arch.in_channels, height, width)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise ValueError('batch of shape {} does not match input {}'.format(
            batch.shape, expected))
    return batch


def _conv_forward(x, weight, bias, stride, padding):
    n, channels = x.shape[:2]
    k = weight.shape[-1]
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding),
                        (padding, padding)))
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2:4]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(
        n * out_h * out_w, channels * k * k)
    out = cols @ weight.reshape(weight.shape[0], -1).T + bias
    return out.reshape(n, out_h, out_w, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, weight, stride, padding):
    n, channels, height, width = x_shape
    out_channels, _, k, _ = weight.shape
    out_h, out_w = dout.shape[2:]
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, out_channels)

    dweight = (dflat.T @ cols).reshape(weight.shape)
    dbias = dflat.sum(axis=0)

    dcols = (dflat @ weight.reshape(out_channels, -1)).reshape(
        n, out_h, out_w, channels, k, k)
    dpadded = np.zeros((n, channels, height + 2 * padding,
                        width + 2 * padding))
    for i in range(k):
        for j in range(k):
            dpadded[:, :, i:i + stride * out_h:stride,
                    j:j + stride * out_w:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dpadded[:, :, padding:padding + height, padding:padding + width]
    return dx, dweight, dbias


def forward(model, batch):
    """ Class probabilities of a batch.

    Parameters
    ----------
    model : Model
    batch : numpy.ndarray
        Images of shape (N, H, W) or (N, C, H, W).

    Returns
    -------
    probs : numpy.ndarray
        Shape (N, L), strictly inside (0, 1).
    cache : ForwardCache
        Activations for :func:`backward` and Grad-CAM; `cache.taps` holds the
        post-ReLU output of every convolution.
    """
    batch = _as_batch(model.arch, batch)
    cache = ForwardCache(batch.shape)
    params = model.params

    activation = batch
    for i, layer in enumerate(model.arch.conv_layers):
        cache.inputs.append(activation.shape)
        pre, cols = _conv_forward(activation,
                                  params['conv{}.weight'.format(i)],
                                  params['conv{}.bias'.format(i)],
                                  layer.stride, layer.padding)
        activation = np.maximum(pre, 0.0)
        cache.cols.append(cols)
        cache.pre.append(pre)
        cache.taps.append(activation)

    cache.pooled = activation.mean(axis=(2, 3))
    cache.logits = cache.pooled @ params['fc.weight'].T + params['fc.bias']
    cache.probs = np.clip(expit(cache.logits), _PROB_MIN, _PROB_MAX)
    return cache.probs, cache


def bce_loss(probs, targets):
    """ Mean binary cross-entropy over all N x L entries.

    Probabilities are clamped to ``[PROB_CLAMP, 1 - PROB_CLAMP]``.

    Parameters
    ----------
    probs : numpy.ndarray
        Shape (N, L).
    targets : numpy.ndarray
        Binary labels of shape (N, L).

    Returns
    -------
    float
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise ValueError('probs {} and targets {} differ in shape'.format(
            probs.shape, targets.shape))
    p = np.clip(probs, PROB_CLAMP, 1 - PROB_CLAMP)
    return float(np.mean(-(targets * np.log(p)
                           + (1 - targets) * np.log(1 - p))))


def _backpropagate(model, cache, dlogits, stop_at=None):
    """ Push logit gradients down the network.

    Parameters
    ----------
    model : Model
    cache : ForwardCache
    dlogits : numpy.ndarray
        Gradient w.r.t. the logits, shape (N, L).
    stop_at : int, optional
        If given, return the gradient w.r.t. the post-ReLU activation of
        this convolution instead of parameter gradients.

    Returns
    -------
    collections.OrderedDict[str, numpy.ndarray] or numpy.ndarray
    """
    params = model.params
    grads = dict()
    grads['fc.weight'] = dlogits.T @ cache.pooled
    grads['fc.bias'] = dlogits.sum(axis=0)

    last = cache.taps[-1]
    spatial = last.shape[2] * last.shape[3]
    dpooled = dlogits @ params['fc.weight']
    dactivation = np.broadcast_to(dpooled[:, :, None, None] / spatial,
                                  last.shape).copy()

    for i in reversed(range(len(model.arch.conv_layers))):
        if i == stop_at:
            return dactivation
        layer = model.arch.conv_layers[i]
        dpre = dactivation * (cache.pre[i] > 0)
        dactivation, dweight, dbias = _conv_backward(
            dpre, cache.cols[i], cache.inputs[i],
            params['conv{}.weight'.format(i)], layer.stride, layer.padding)
        grads['conv{}.weight'.format(i)] = dweight
        grads['conv{}.bias'.format(i)] = dbias

    return OrderedDict((name, grads[name]) for name in params)


def backward(model, batch, targets, cache=None):
    """ Exact gradients of :func:`bce_loss` w.r.t. every parameter.

    Parameters
    ----------
    model : Model
    batch : numpy.ndarray
        The batch `cache` was computed from.
    targets : numpy.ndarray
        Binary labels of shape (N, L).
    cache : ForwardCache
        Result of ``forward(model, batch)``.

    Returns
    -------
    collections.OrderedDict[str, numpy.ndarray]
        Same names and shapes as `model.params`.

    Raises
    ------
    MissingForwardPass
        If `cache` is missing or belongs to another batch shape.
    """
    if cache is None or cache.probs is None:
        raise MissingForwardPass('backward needs the cache of a forward pass')
    batch = _as_batch(model.arch, batch)
    if batch.shape != cache.batch_shape:
        raise MissingForwardPass('cache was computed for a batch of shape {}'
                                 .format(cache.batch_shape))
    targets = np.asarray(targets, dtype=np.float64)
    probs = cache.probs
    if targets.shape != probs.shape:
        raise ValueError('targets {} do not match probs {}'.format(
            targets.shape, probs.shape))

    # The clamp in the loss has zero slope outside its range.
    inside = (probs > PROB_CLAMP) & (probs < 1 - PROB_CLAMP)
    dlogits = (probs - targets) * inside / probs.size
    return _backpropagate(model, cache, dlogits)


def tap_gradient(model, cache, class_index, tap):
    """ Gradient of the logit of `class_index` w.r.t. the post-ReLU
    activations of convolution `tap`.

    Returns
    -------
    numpy.ndarray
        Same shape as ``cache.taps[tap]``.
    """
    if cache is None or cache.logits is None:
        raise MissingForwardPass('tap_gradient needs a forward pass')
    if not 0 <= tap < len(model.arch.conv_layers):
        raise ValueError('no convolution with index {}'.format(tap))
    dlogits = np.zeros_like(cache.logits)
    dlogits[:, class_index] = 1.0
    return _backpropagate(model, cache, dlogits, stop_at=tap)


def train(model, train_set, cfg):
    """ Train `model` in place with SGD and momentum.

    Parameters
    ----------
    model : Model
        Updated in place.
    train_set : Dataset
        Training samples; infected samples are fitted to their infected label.
    cfg : TrainConfig

    Returns
    -------
    list[Checkpoint]
        One independent snapshot per epoch (only the last one when
        `cfg.checkpoint_every_epoch` is False).

    Raises
    ------
    TrainingDiverged
        If a batch loss is not finite.
    """
    if train_set.image_dims != model.arch.image_dims:
        raise ValueError('dataset dims {} do not match model input {}'.format(
            train_set.image_dims, model.arch.image_dims))
    if train_set.num_classes != model.arch.num_classes:
        raise ValueError('dataset has {} classes, model {}'.format(
            train_set.num_classes, model.arch.num_classes))
    if not len(train_set):
        raise ValueError('cannot train on an empty dataset')

    images = train_set.images()[:, None]
    targets = train_set.target_labels().astype(np.float64)
    rng = np.random.default_rng(cfg.seed)
    velocity = OrderedDict((name, np.zeros_like(p))
                           for name, p in model.params.items())

    checkpoints = list()
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        total = 0.0
        for batch_no, start in enumerate(range(0, len(order),
                                               cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            probs, cache = forward(model, images[idx])
            loss = bce_loss(probs, targets[idx])
            if not np.isfinite(loss):
                logging.error('Loss is {} at epoch {}, batch {}.'.format(
                    loss, epoch, batch_no))
                raise TrainingDiverged('non-finite loss at epoch {}, batch {}'
                                       .format(epoch, batch_no))
            grads = backward(model, images[idx], targets[idx], cache)
            for name, param in model.params.items():
                v = velocity[name]
                v *= cfg.momentum
                v -= cfg.learning_rate * grads[name]
                param += v
            total += loss * len(idx)
            logging.debug('epoch {} batch {}: loss {:.6f}'.format(
                epoch, batch_no, loss))

        mean_loss = total / len(train_set)
        logging.info('Epoch {}/{}: mean loss {:.4f}.'.format(
            epoch, cfg.epochs, mean_loss))
        if cfg.checkpoint_every_epoch or epoch == cfg.epochs:
            checkpoints.append(Checkpoint(epoch, mean_loss, model.copy()))

    return checkpoints


def predict(model, ds, batch_size=128):
    """ One prediction record per sample, in order.

    Parameters
    ----------
    model : Model
    ds : Dataset
    batch_size : int

    Returns
    -------
    list[backdoor_utils.metrics.PredictionRecord]
    """
    if ds.image_dims != model.arch.image_dims:
        raise ValueError('dataset dims {} do not match model input {}'.format(
            ds.image_dims, model.arch.image_dims))
    records = list()
    images = ds.images()
    for start in range(0, len(ds), batch_size):
        probs, _ = forward(model, images[start:start + batch_size])
        for sample, row in zip(ds[start:start + batch_size], probs):
            records.append(PredictionRecord(sample.id, row, sample.true_label,
                                            sample.infected_label))
    return records


def save_checkpoint(model, path):
    """ Write magic, version, architecture and little-endian float64
    parameters in declaration order. """
    arch = json.dumps(model.arch.to_dict(), sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(arch)))
        f.write(arch)
        f.write(struct.pack('<q', -1 if model.seed is None else model.seed))
        for param in model.params.values():
            f.write(param.astype('<f8').tobytes())
    logging.debug('Saved checkpoint to {}.'.format(path))


def load_checkpoint(path, arch=None):
    """ Read a checkpoint written by :func:`save_checkpoint`.

    Parameters
    ----------
    path : str
    arch : ArchConfig, optional
        If given, the stored architecture must equal it.

    Returns
    -------
    Model

    Raises
    ------
    CheckpointError
        At bad magic bytes, another format version or a truncated file.
    ArchMismatch
        If the stored architecture differs from `arch`.
    """
    with open(path, 'rb') as f:
        data = f.read()

    if len(data) < _HEADER.size:
        raise CheckpointError('truncated checkpoint header')
    magic, version, arch_len = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError('not a checkpoint: bad magic bytes')
    if version != CHECKPOINT_VERSION:
        raise CheckpointError('checkpoint version {} is not {}'.format(
            version, CHECKPOINT_VERSION))

    offset = _HEADER.size
    try:
        stored = ArchConfig.from_dict(json.loads(
            data[offset:offset + arch_len].decode('utf-8')))
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError('unreadable architecture: {}'.format(e))
    if arch is not None and stored != arch:
        raise ArchMismatch('checkpoint holds {!r}, expected {!r}'.format(
            stored, arch))
    offset += arch_len

    shapes = stored.param_shapes()
    n_values = sum(int(np.prod(s)) for s in shapes.values())
    if len(data) != offset + 8 + 8 * n_values:
        raise CheckpointError('checkpoint is truncated or has trailing bytes')
    seed, = struct.unpack_from('<q', data, offset)
    values = np.frombuffer(data, dtype='<f8', offset=offset + 8)

    params = OrderedDict()
    start = 0
    for name, shape in shapes.items():
        size = int(np.prod(shape))
        params[name] = values[start:start + size].astype(np.float64) \
            .reshape(shape)
        start += size
    return Model(stored, params, None if seed < 0 else seed)


def _check_arch(conv_layers, num_classes, image_dims, middle_tap, final_tap,
                in_channels):
    """ Check input for :class:`ArchConfig`.

    Raises
    -------
    AssertionError
        If input is bad.
    """
    assert conv_layers, 'at least one convolution is required'
    assert all(layer.out_channels >= 1 and layer.stride >= 1
               and layer.padding >= 0 for layer in conv_layers), \
        'convolutions need positive channels and stride'
    assert int(num_classes) >= 1, 'num_classes must be positive'
    assert len(image_dims) == 2 and all(int(d) > 0 for d in image_dims), \
        'image_dims must be two positive integers'
    assert final_tap == len(conv_layers) - 1, \
        'final_tap must be the last convolution'
    assert middle_tap is None or 0 <= middle_tap < final_tap, \
        'middle_tap must be a convolution before final_tap'
    assert int(in_channels) >= 1, 'in_channels must be positive'
