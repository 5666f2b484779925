# -*- coding: utf-8 -*-
""" Grad-CAM saliency maps and trigger localization.

Saliency is computed at the final convolution or at the designated middle
convolution. Low-level trigger pixels tend to show up more sharply in the
middle layer.
"""
import logging
import os

import numpy as np
from matplotlib import colormaps
from PIL import Image

from .constants import DEFAULT_DILATION, OVERLAY_ALPHA, OVERLAY_COLORMAP, \
    PIXEL_LEVELS
from .exceptions import PlacementOutOfBounds
from .model import forward, tap_gradient
from .options import Layer


class SaliencyMap:
    """ Normalized Grad-CAM map at image resolution.

    Parameters
    ----------
    values : numpy.ndarray
        Shape (height, width), min-max normalized to [0, 1].
    layer : Layer
    target_class : int
    raw : numpy.ndarray, optional
        Non-negative map at tap resolution before upsampling and
        normalization.
    """
    def __init__(self, values, layer, target_class, raw=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.layer = layer
        self.target_class = target_class
        self.raw = raw

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    def __repr__(self):
        return '<{0}.{1}: {2} layer, class {3}>'.format(
            self.__class__.__module__, self.__class__.__name__,
            self.layer.value, self.target_class)


def _tap_index(arch, layer):
    if not isinstance(layer, Layer):
        raise ValueError('invalid layer: {}'.format(layer))
    tap = arch.final_tap if layer == Layer.Final else arch.middle_tap
    if tap is None:
        raise ValueError('model has no {} tap'.format(layer.value))
    return tap


def bilinear_resize(values, size):
    """ Bilinear resampling with half-pixel centers.

    Parameters
    ----------
    values : numpy.ndarray
        Shape (in_height, in_width).
    size : tuple[int, int]
        Output (width, height).

    Returns
    -------
    numpy.ndarray
    """
    out_w, out_h = size
    in_h, in_w = values.shape

    def source(n_out, n_in):
        pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        pos = np.clip(pos, 0, n_in - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = source(out_h, in_h)
    x0, x1, wx = source(out_w, in_w)
    top = values[y0][:, x0] * (1 - wx) + values[y0][:, x1] * wx
    bottom = values[y1][:, x0] * (1 - wx) + values[y1][:, x1] * wx
    return top * (1 - wy)[:, None] + bottom * wy[:, None]


def normalize(values):
    """ Min-max normalize to [0, 1]. A constant map becomes all ones,
    all zeros stay zero. """
    low, high = values.min(), values.max()
    if high > low:
        return (values - low) / (high - low)
    if high > 0:
        return np.ones_like(values)
    return np.zeros_like(values)


def gradcam(model, image, t, layer=Layer.Final):
    """ Grad-CAM map of class `t` at `layer`.

    Channel weights are the spatial mean of the gradient of the class-`t`
    logit w.r.t. the tap activations; the map is the ReLU of the weighted
    channel sum, upsampled to image size and normalized.

    Parameters
    ----------
    model : backdoor_utils.model.Model
    image : numpy.ndarray
        Shape (height, width).
    t : int
        Class index.
    layer : Layer

    Returns
    -------
    SaliencyMap
    """
    arch = model.arch
    if not 0 <= t < arch.num_classes:
        raise ValueError('invalid class index: {}'.format(t))
    tap = _tap_index(arch, layer)
    image = np.asarray(image, dtype=np.float64)
    width, height = arch.image_dims
    if image.shape != (height, width):
        raise ValueError('image of shape {} does not match model input'
                         .format(image.shape))

    _, cache = forward(model, image[None])
    activations = cache.taps[tap][0]
    grads = tap_gradient(model, cache, t, tap)[0]
    weights = grads.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(weights, activations, axes=1), 0.0)
    values = normalize(bilinear_resize(raw, arch.image_dims))
    return SaliencyMap(values, layer, t, raw)


def localization_score(smap, region, dilation_radius=DEFAULT_DILATION):
    """ Share of saliency inside the dilated trigger region.

    Parameters
    ----------
    smap : SaliencyMap
    region : tuple[int, int, int]
        Trigger (x, y, size), top-left corner and side length.
    dilation_radius : int
        Pixels added on every side, clipped to the image.

    Returns
    -------
    float
        0 when the map has no saliency at all.
    """
    x, y, size = region
    if x < 0 or y < 0 or x + size > smap.width or y + size > smap.height:
        raise PlacementOutOfBounds('region {} outside {}x{} map'.format(
            region, smap.width, smap.height))
    if dilation_radius < 0:
        raise ValueError('dilation_radius must be non-negative')

    total = smap.values.sum()
    if total == 0:
        return 0.0
    x0, y0 = max(x - dilation_radius, 0), max(y - dilation_radius, 0)
    x1 = min(x + size + dilation_radius, smap.width)
    y1 = min(y + size + dilation_radius, smap.height)
    return float(smap.values[y0:y1, x0:x1].sum() / total)


def localization_scores(model, clean, infected, manifest, layer=Layer.Middle,
                        dilation_radius=DEFAULT_DILATION, t=None):
    """ Paired localization scores of clean and infected images.

    The clean image is scored against the region its infected pair carries
    the trigger in.

    Parameters
    ----------
    model : backdoor_utils.model.Model
    clean : backdoor_utils.dataset.Dataset
    infected : backdoor_utils.dataset.Dataset
        Infected pairs of `clean`.
    manifest : backdoor_utils.trigger.PoisonManifest
        Trigger placements of `infected`.
    layer : Layer
    dilation_radius : int
    t : int, optional
        Class to explain, the target class of the manifest by default.

    Returns
    -------
    list[tuple[float, float]]
        (clean score, infected score) per sample.
    """
    pairs = list()
    for entry in manifest:
        cls = entry.target_class if t is None else t
        region = (entry.x, entry.y, entry.size)
        clean_map = gradcam(model, clean.get(entry.sample_id).image, cls,
                            layer)
        infected_map = gradcam(model, infected.get(entry.sample_id).image,
                               cls, layer)
        pairs.append((localization_score(clean_map, region, dilation_radius),
                      localization_score(infected_map, region,
                                         dilation_radius)))
    return pairs


def overlay_filename(sample_id, layer, epoch):
    return '{}_{}_{}.png'.format(sample_id, layer.value, epoch)


def saliency_overlay(image, smap, path):
    """ Blend a blue-to-red rendering of `smap` onto `image` and save as PNG.

    Parameters
    ----------
    image : numpy.ndarray
        Grayscale image of shape (height, width).
    smap : SaliencyMap
    path : str

    Returns
    -------
    str
        `path`.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != smap.values.shape:
        raise ValueError('image and map dims differ')
    colors = colormaps[OVERLAY_COLORMAP](smap.values)[..., :3]
    gray = np.repeat(image[..., None], 3, axis=2)
    rgb = OVERLAY_ALPHA * colors + (1 - OVERLAY_ALPHA) * gray
    pixels = np.round(np.clip(rgb, 0, 1) * PIXEL_LEVELS).astype(np.uint8)

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    Image.fromarray(pixels).save(path)
    logging.debug('Wrote overlay {}.'.format(path))
    return path
