#
# Synthetic shape-classification task
#
# 64 x 64 RGB images with one foreground shape on a textured gray background.
# Eight classes: four shapes (disk, square, triangle, cross) times two color
# families (warm, cool). The ground-truth saliency mask is the shape support
# dilated by 2 pixels. Shapes are lit with a mild radial falloff so that
# windows inside the shape still carry intensity gradients.
#

import logging
import os
import time

import numpy as np
import scipy.ndimage
from astropy.table import Table
from matplotlib.path import Path

from . import conf
from .accel_math import _float
from .encoder import EncoderConfig, NumericalError, backward_batch, forward_batch, init_params
from .imagery import DataFormatError, Image, SaliencyMask, load_tensor, save_tensor
from .priors import PRIOR_KINDS, PriorSpec
from .subpixel import TokenizerConfig, tokenize_arrays
from .utils import make_rng, map_in_order

_log = logging.getLogger('subtok')

__all__ = ['SHAPES', 'COLOR_FAMILIES', 'ToySample', 'TrainConfig', 'gen_dataset', 'make_sample',
           'save_dataset', 'load_dataset', 'split_dataset', 'tokenize_batch', 'train_toy']

SHAPES = ('disk', 'square', 'triangle', 'cross')
COLOR_FAMILIES = ('warm', 'cool')
NUM_CLASSES = len(SHAPES) * len(COLOR_FAMILIES)

IMAGE_SIZE = 64
BORDER_MARGIN = 8
MIN_AREA_FRACTION = 0.05
SALIENCY_DILATION = 2.0

_LABEL_STREAM = 5
_SHUFFLE_STREAM = 6
_SAMPLE_STREAM = 1 << 32

_BASE_COLORS = {'warm': np.array([0.85, 0.30, 0.12]), 'cool': np.array([0.12, 0.38, 0.85])}


class ToySample(object):
    """ One image of the toy task with its label and ground-truth saliency """

    def __init__(self, image, label, saliency, index=0):
        if not 0 <= int(label) < NUM_CLASSES:
            raise ValueError("Toy label must lie in [0, {}), got {}".format(NUM_CLASSES, label))
        saliency.check_matches(image)
        self.image = image
        self.label = int(label)
        self.saliency = saliency
        self.index = int(index)

    @property
    def shape_name(self):
        return SHAPES[self.label // len(COLOR_FAMILIES)]

    @property
    def color_family(self):
        return COLOR_FAMILIES[self.label % len(COLOR_FAMILIES)]

    def __repr__(self):
        return "ToySample(#{0}, {1} {2})".format(self.index, self.color_family, self.shape_name)


###########################################################################
#
#    Generation
#

def _outline(shape, radius, angle, cx, cy):
    """ Polygon vertices of a shape with circumradius radius, rotated by angle """
    if shape == 'disk':
        t = np.linspace(0, 2 * np.pi, 48, endpoint=False)
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    elif shape == 'square':
        t = np.pi / 4 + np.arange(4) * np.pi / 2
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    elif shape == 'triangle':
        t = np.pi / 2 + np.arange(3) * 2 * np.pi / 3
        pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    elif shape == 'cross':
        a, b = 1.0, 1.0 / 3
        pts = np.array([[b, b], [a, b], [a, -b], [b, -b], [b, -a], [-b, -a],
                        [-b, -b], [-a, -b], [-a, b], [-b, b], [-b, a], [b, a]])
        pts = pts / np.hypot(a, b)
    else:
        raise ValueError("Unknown shape '{}'".format(shape))
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    return radius * pts @ rot.T + np.array([cx, cy])


def _coverage(vertices, size, supersample=4):
    """ Fraction of each pixel covered by the polygon, from a supersampled grid """
    sub = (np.arange(size * supersample) + 0.5) / supersample - 0.5
    xx, yy = np.meshgrid(sub, sub)
    inside = Path(vertices).contains_points(np.stack([xx.ravel(), yy.ravel()], axis=1))
    inside = inside.reshape(size, supersample, size, supersample)
    return inside.mean(axis=(1, 3))


def _background(rng, size):
    """ Smooth gray texture with fine grain """
    coarse = scipy.ndimage.gaussian_filter(rng.normal(size=(size, size)), sigma=4.0, mode='wrap')
    coarse = coarse / (coarse.std() + 1e-12)
    level = rng.uniform(0.35, 0.65)
    gray = level + 0.08 * coarse
    tint = rng.normal(0.0, 0.02, size=3)
    grain = rng.normal(0.0, 0.03, size=(size, size, 3))
    return gray[:, :, np.newaxis] + tint + grain


def make_sample(seed, index, label, size=IMAGE_SIZE):
    """ Generate sample number index of a dataset, for a given label

    Every sample has its own random stream, so samples can be generated in any
    order or in parallel.
    """
    rng = make_rng(seed, stream=_SAMPLE_STREAM + int(index))
    shape = SHAPES[label // len(COLOR_FAMILIES)]
    family = COLOR_FAMILIES[label % len(COLOR_FAMILIES)]

    radius = rng.uniform(0.22, 0.27) * size
    reach = max(radius, BORDER_MARGIN)
    cx, cy = rng.uniform(reach, size - 1 - reach, size=2)
    angle = rng.uniform(0, 2 * np.pi)
    alpha = _coverage(_outline(shape, radius, angle, cx, cy), size)

    area = np.count_nonzero(alpha >= 0.5)
    if area < MIN_AREA_FRACTION * size * size:
        raise RuntimeError("Toy shape {} at index {} covers only {} pixels".format(shape, index, area))

    color = np.clip(_BASE_COLORS[family] + rng.normal(0.0, 0.06, size=3), 0.0, 1.0)
    yy, xx = np.mgrid[0:size, 0:size]
    rho = np.minimum(np.hypot(xx - cx, yy - cy) / radius, 1.0)
    light = rng.uniform(0.9, 1.1) * (0.75 + 0.25 * (1 - rho ** 2))
    shading = light[:, :, np.newaxis] * (1.0 + 0.03 * rng.normal(size=(size, size, 1)))
    foreground = color * shading
    data = _background(rng, size) * (1 - alpha[:, :, np.newaxis]) + foreground * alpha[:, :, np.newaxis]
    # 8-bit values that survive float32 storage exactly
    data = (np.round(np.clip(data, 0.0, 1.0) * 255) / 255).astype(np.float32).astype(_float())

    support = alpha > 0
    saliency = scipy.ndimage.distance_transform_edt(~support) <= SALIENCY_DILATION
    return ToySample(Image(data), label, SaliencyMask(saliency.astype(_float())), index)


def _wrap_sample_for_multiprocessing(args):
    """ Top-level helper so make_sample can be mapped over a process pool """
    seed, index, label, size = args
    return make_sample(seed, index, label, size)


def gen_dataset(n, seed, size=IMAGE_SIZE, nproc=1):
    """ Generate a class-balanced toy dataset

    Parameters
    ----------
    n : int
        Number of samples, at least the number of classes. Class counts
        differ by at most one.
    seed : int
    size : int
        Image side length.
    nproc : int
        Worker processes; the result does not depend on it.

    Returns
    -------
    list of ToySample
    """
    if n < NUM_CLASSES:
        raise ValueError("Dataset size n must be at least the class count ({}), got {}".format(NUM_CLASSES, n))
    tstart = time.time()
    labels = make_rng(seed, stream=_LABEL_STREAM).permutation(np.arange(n) % NUM_CLASSES)
    args = [(seed, i, int(labels[i]), size) for i in range(n)]
    samples = map_in_order(_wrap_sample_for_multiprocessing, args, nproc)
    if conf.enable_speed_tests:
        _log.info("Generated {} toy samples in {:.2f} s".format(n, time.time() - tstart))
    return samples


###########################################################################
#
#    Persistence
#

MANIFEST_NAME = 'manifest.csv'


def save_dataset(samples, directory):
    """ Write images and masks as TensorFiles plus manifest.csv (index, label, image, mask) """
    os.makedirs(directory, exist_ok=True)
    rows = []
    for sample in samples:
        image_name = 'image_{:05d}.sptf'.format(sample.index)
        mask_name = 'mask_{:05d}.sptf'.format(sample.index)
        save_tensor(sample.image.shape, sample.image.data, 0, os.path.join(directory, image_name))
        save_tensor(sample.saliency.shape, sample.saliency.data, 0, os.path.join(directory, mask_name))
        rows.append((sample.index, sample.label, image_name, mask_name))
    table = Table(rows=rows, names=('index', 'label', 'image', 'mask'))
    table.write(os.path.join(directory, MANIFEST_NAME), format='ascii.csv', overwrite=True)
    _log.info("Saved {} toy samples to {}".format(len(rows), directory))


def load_dataset(directory, limit=None):
    """ Read a dataset written by save_dataset, in manifest order """
    manifest = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(manifest):
        raise DataFormatError("No {} in dataset directory {}".format(MANIFEST_NAME, directory))
    table = Table.read(manifest, format='ascii.csv')
    for column in ('index', 'label', 'image', 'mask'):
        if column not in table.colnames:
            raise DataFormatError("Dataset manifest {} lacks column '{}'".format(manifest, column))
    samples = []
    for row in table[:limit] if limit is not None else table:
        _, image = load_tensor(os.path.join(directory, str(row['image'])))
        _, mask = load_tensor(os.path.join(directory, str(row['mask'])))
        try:
            samples.append(ToySample(Image(image), int(row['label']), SaliencyMask(mask), int(row['index'])))
        except ValueError as err:
            raise DataFormatError("Invalid sample {} in {}: {}".format(row['index'], directory, err))
    return samples


def split_dataset(samples):
    """ First 90% of the samples (by position) for training, the rest for validation """
    samples = list(samples)
    n_train = (9 * len(samples)) // 10
    return samples[:n_train], samples[n_train:]


###########################################################################
#
#    Training
#

class TrainConfig(object):
    """ Settings for training the toy encoder

    Parameters
    ----------
    epochs : int
    batch_size : int
    lr : float
        Peak learning rate; linear warm-up for warmup_epochs, then cosine decay to zero.
    seed : int
        Weight initialization and shuffling seed.
    prior : str
        Placement prior for the training tokens, and for the validation
        tokens that select the returned parameters.
    prior_mix : tuple of str
        If not empty, each batch draws its prior uniformly from these kinds
        instead of using prior.
    m : int
        Token budget (dense isotropic grid by default).
    budget_jitter : bool
        Draw the budget of each batch uniformly from jitter_budgets.
    jitter_budgets : tuple of int
    warmup_epochs : int
    weight_decay : float
        Decoupled weight decay applied to matrices.
    grad_clip : float
        Global gradient norm limit; 0 disables clipping.
    encoder, tokenizer : EncoderConfig, TokenizerConfig, optional
    """

    def __init__(self, epochs=20, batch_size=32, lr=1e-3, seed=0, prior='isotropic', m=64, budget_jitter=False,
                 jitter_budgets=(16, 32, 64), prior_mix=(), warmup_epochs=2, weight_decay=0.05, grad_clip=1.0,
                 encoder=None, tokenizer=None):
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.lr = float(lr)
        self.seed = int(seed)
        self.prior = prior
        self.m = int(m)
        self.budget_jitter = bool(budget_jitter)
        self.jitter_budgets = tuple(int(b) for b in jitter_budgets)
        self.prior_mix = tuple(prior_mix)
        self.warmup_epochs = int(warmup_epochs)
        self.weight_decay = float(weight_decay)
        self.grad_clip = float(grad_clip)
        self.tokenizer = TokenizerConfig() if tokenizer is None else tokenizer
        self.encoder = EncoderConfig(width=self.tokenizer.embed_dim,
                                     token_feature_dim=self.tokenizer.feature_dim(3)) if encoder is None else encoder
        if self.epochs < 1 or self.batch_size < 1 or self.m < 1:
            raise ValueError("TrainConfig epochs, batch_size and m must be positive")
        if not self.lr > 0:
            raise ValueError("TrainConfig lr must be positive")
        if self.budget_jitter and (not self.jitter_budgets or min(self.jitter_budgets) < 1):
            raise ValueError("TrainConfig jitter_budgets must be positive token counts")
        for kind in self.prior_mix:
            if kind not in PRIOR_KINDS:
                raise ValueError("Unknown prior kind '{}' in TrainConfig prior_mix".format(kind))
        # validates the prior kind and budget
        PriorSpec(self.prior, self.m, self.seed)

    def as_dict(self):
        return dict(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, seed=self.seed, prior=self.prior,
                    m=self.m, budget_jitter=self.budget_jitter, jitter_budgets=list(self.jitter_budgets),
                    prior_mix=list(self.prior_mix), warmup_epochs=self.warmup_epochs,
                    weight_decay=self.weight_decay, grad_clip=self.grad_clip,
                    encoder=self.encoder.as_dict(), tokenizer=self.tokenizer.as_dict())


def _prior_for_budget(kind, m, seed):
    """ The configured prior, or uniform when it cannot lay out m tokens """
    try:
        return PriorSpec(kind, m, seed)
    except ValueError:
        return PriorSpec('uniform', m, seed)


def tokenize_batch(samples, prior, tokcfg):
    """ Stack the tokens of several samples drawn from one prior; returns (B, m, D), (B, m, d) """
    features, pos = [], []
    for sample in samples:
        placements = prior.sample(sample.image.height, sample.image.width, sample.saliency, sample.index)
        f, p = tokenize_arrays(sample.image, placements, tokcfg)
        features.append(f)
        pos.append(p)
    return np.stack(features), np.stack(pos)


class _Adam(object):
    """ Adam with decoupled weight decay on matrices """

    def __init__(self, params, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(value) for name, value in params.items()}
        self.v = {name: np.zeros_like(value) for name, value in params.items()}

    def step(self, grads, lr):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        updated = {}
        for name, value in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            step = lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            if value.ndim > 1 and self.weight_decay:
                step = step + lr * self.weight_decay * value
            updated[name] = value - step
        self.params.assign(updated)


def _learning_rate(config, step, steps_per_epoch):
    total = config.epochs * steps_per_epoch
    warmup = min(config.warmup_epochs * steps_per_epoch, total - 1)
    if step < warmup:
        return config.lr * (step + 1) / warmup
    progress = (step - warmup) / max(total - warmup, 1)
    return config.lr * 0.5 * (1 + np.cos(np.pi * progress))


def _evaluate_top1(params, samples, prior, batch_size):
    correct = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        features, pos = tokenize_batch(chunk, prior, params.tokenizer)
        predictions = np.argmax(forward_batch(params, features, pos).logits, axis=1)
        correct += int(np.sum(predictions == np.array([s.label for s in chunk])))
    return correct / len(samples)


def train_toy(config, dataset, history=None):
    """ Train the toy encoder on subpixel tokens

    The dataset is split 90/10 by index; the parameters with the best
    validation top-1 (dense tokens from the configured prior) are returned.

    Parameters
    ----------
    config : TrainConfig
    dataset : list of ToySample
    history : list, optional
        If given, one dict per epoch (epoch, train_loss, val_top1, lr) is appended.

    Returns
    -------
    EncoderParams
    """
    train, val = split_dataset(dataset)
    if len(train) == 0 or len(val) == 0:
        raise ValueError("Training needs at least one training and one validation sample, got {} samples".format(
            len(dataset)))
    params = init_params(config.encoder, config.tokenizer, config.seed)
    optimizer = _Adam(params, config.weight_decay)
    rng = make_rng(config.seed, stream=_SHUFFLE_STREAM)
    steps_per_epoch = int(np.ceil(len(train) / config.batch_size))
    val_prior = _prior_for_budget(config.prior, config.m, config.seed)

    best, best_acc = params.copy(), -1.0
    step = 0
    for epoch in range(config.epochs):
        tstart = time.time()
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(train), config.batch_size):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            m = int(rng.choice(config.jitter_budgets)) if config.budget_jitter else config.m
            kind = config.prior_mix[int(rng.integers(len(config.prior_mix)))] if config.prior_mix else config.prior
            prior = _prior_for_budget(kind, m, int(rng.integers(1 << 62)))
            features, pos = tokenize_batch(batch, prior, config.tokenizer)
            trace = forward_batch(params, features, pos)
            value, grads, _, _ = backward_batch(trace, np.array([s.label for s in batch]))
            if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NumericalError("Training diverged at epoch {} step {}: loss {}".format(epoch, step, value))
            if config.grad_clip > 0:
                norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if norm > config.grad_clip:
                    grads = {name: g * (config.grad_clip / norm) for name, g in grads.items()}
            lr = _learning_rate(config, step, steps_per_epoch)
            optimizer.step(grads, lr)
            losses.append(value)
            step += 1

        val_acc = _evaluate_top1(params, val, val_prior, config.batch_size)
        mean_loss = float(np.mean(losses))
        _log.info("epoch {0}/{1}: train loss {2:.4f}, val top-1 {3:.4f} ({4:.1f} s)".format(
            epoch + 1, config.epochs, mean_loss, val_acc, time.time() - tstart))
        if history is not None:
            history.append(dict(epoch=epoch + 1, train_loss=mean_loss, val_top1=val_acc, lr=lr))
        if val_acc > best_acc:
            best, best_acc = params.copy(), val_acc
    return best
