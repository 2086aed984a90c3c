#
# Subpixel tokenizer
#
# Tokens are k x k windows read by bilinear interpolation around continuous
# placements, plus a Fourier positional embedding of the placement. Both the
# window values and the embedding have analytic derivatives with respect to
# the placement, so a loss can be pushed back onto token positions.
#
# Sampling conventions:
#   - sample offsets o_i = i - (k-1)/2, i = 0..k-1, along each axis
#   - feature order is row-major: y offset outer, x offset inner, channel innermost
#   - coordinates are clamped to [0, W-1] x [0, H-1] (edge replication);
#     clamped samples have zero derivative along the clamped axis
#   - at integer sample coordinates the right-hand (lower) cell is used; the
#     last row/column uses its left cell
#

import functools
import logging

import numpy as np

from . import conf
from .accel_math import _float, _sin, _cos
from .imagery import Image, SaliencyMask
from .priors import PlacementSet
from .utils import make_rng

_log = logging.getLogger('subtok')

__all__ = ['TokenizerConfig', 'Token', 'bilinear_at', 'extract_patch', 'extract_patches',
           'patch_position_jacobian', 'patch_position_jacobians', 'positional_embedding',
           'positional_embeddings', 'positional_embedding_jacobian', 'tokenize', 'tokenize_arrays']


class TokenizerConfig(object):
    """ Window size and positional embedding settings of the subpixel tokenizer

    Parameters
    ----------
    window : int
        Token window size k, in pixels.
    embed_dim : int
        Size d of the positional embedding (the encoder width); divisible by 4.
    num_freqs : int
        Number F of octave frequencies 2 pi 2^f, f = 0..F-1.
    freq_seed : int
        Seed of the fixed random projection from the 4F Fourier features to d.
    """

    def __init__(self, window=None, embed_dim=None, num_freqs=None, freq_seed=0):
        self.window = int(conf.window if window is None else window)
        self.embed_dim = int(conf.embed_dim if embed_dim is None else embed_dim)
        self.num_freqs = int(conf.num_freqs if num_freqs is None else num_freqs)
        self.freq_seed = int(freq_seed)
        if self.window < 1:
            raise ValueError("Tokenizer window must be at least 1, got {}".format(self.window))
        if self.embed_dim < 4 or self.embed_dim % 4 != 0:
            raise ValueError("Tokenizer embed_dim must be a positive multiple of 4, got {}".format(self.embed_dim))
        if self.num_freqs < 1:
            raise ValueError("Tokenizer num_freqs must be at least 1, got {}".format(self.num_freqs))

    def feature_dim(self, channels):
        return self.window * self.window * channels

    def as_dict(self):
        return dict(window=self.window, embed_dim=self.embed_dim, num_freqs=self.num_freqs,
                    freq_seed=self.freq_seed)

    def __eq__(self, other):
        return isinstance(other, TokenizerConfig) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return "TokenizerConfig({})".format(", ".join("{}={}".format(k, v) for k, v in self.as_dict().items()))


class Token(object):
    """ One extracted token: window features, source placement, positional embedding """

    def __init__(self, features, position, pos_embedding):
        self.features = np.asarray(features, dtype=_float())
        self.position = (float(position[0]), float(position[1]))
        self.pos_embedding = np.asarray(pos_embedding, dtype=_float())

    def __repr__(self):
        return "Token(at=({0:.3f}, {1:.3f}), features={2})".format(
            self.position[0], self.position[1], self.features.size)


def _image_array(image):
    data = image.data if isinstance(image, (Image, SaliencyMask)) else np.asarray(image, dtype=_float())
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    return data


def _placement_array(placements, height, width):
    if isinstance(placements, PlacementSet):
        if (placements.height, placements.width) != (height, width):
            raise ValueError("Placements refer to a {}x{} image, got a {}x{} image".format(
                placements.height, placements.width, height, width))
        return placements.points
    pts = np.asarray(placements, dtype=_float()).reshape(-1, 2)
    if pts.size and (not np.all(np.isfinite(pts)) or pts[:, 0].min() < 0 or pts[:, 0].max() > width - 1 or
                     pts[:, 1].min() < 0 or pts[:, 1].max() > height - 1):
        raise ValueError("Placements must lie within [0, {}] x [0, {}]".format(width - 1, height - 1))
    return pts


def _axis_samples(coords, length):
    """ Cell index, fraction, and in-range flag for sample coordinates along one axis """
    clamped = np.clip(coords, 0, length - 1)
    index = np.minimum(np.floor(clamped), length - 2).astype(np.intp)
    frac = clamped - index
    inside = (coords >= 0) & (coords <= length - 1)
    return index, frac, inside


def _sample_windows(data, pts, k, with_jacobian=False):
    """ Bilinear k x k windows at every placement.

    Returns values of shape (m, k, k, C) and, optionally, the derivatives with
    respect to x and y, each of the same shape.
    """
    height, width, _ = data.shape
    offsets = np.arange(k, dtype=_float()) - (k - 1) / 2.0
    x0, fx, inx = _axis_samples(pts[:, 0:1] + offsets, width)
    y0, fy, iny = _axis_samples(pts[:, 1:2] + offsets, height)

    rows = y0[:, :, np.newaxis]
    cols = x0[:, np.newaxis, :]
    a = data[rows, cols]
    b = data[rows, cols + 1]
    c = data[rows + 1, cols]
    d = data[rows + 1, cols + 1]

    fx = fx[:, np.newaxis, :, np.newaxis]
    fy = fy[:, :, np.newaxis, np.newaxis]
    values = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    if not with_jacobian:
        return values
    dx = ((1 - fy) * (b - a) + fy * (d - c)) * inx[:, np.newaxis, :, np.newaxis]
    dy = ((1 - fx) * (c - a) + fx * (d - b)) * iny[:, :, np.newaxis, np.newaxis]
    return values, dx, dy


def bilinear_at(image, x, y, c=0):
    """ Bilinear value of channel c at (x, y), with coordinates clamped to the image """
    data = _image_array(image)
    pts = np.array([[x, y]], dtype=_float())
    return float(_sample_windows(data, pts, 1)[0, 0, 0, c])


def extract_patches(image, placements, k):
    """ Window features at every placement, shape (m, k*k*C) """
    data = _image_array(image)
    pts = _placement_array(placements, data.shape[0], data.shape[1])
    if pts.shape[0] == 0:
        return np.zeros((0, k * k * data.shape[2]), dtype=_float())
    return _sample_windows(data, pts, k).reshape(pts.shape[0], -1)


def extract_patch(image, s, k):
    """ Bilinear k x k window around placement s = (x, y), flattened to k*k*C values """
    return extract_patches(image, [s], k)[0]


def patch_position_jacobians(image, placements, k):
    """ Derivatives of the window features with respect to (x, y), shape (m, k*k*C, 2) """
    data = _image_array(image)
    pts = _placement_array(placements, data.shape[0], data.shape[1])
    _, dx, dy = _sample_windows(data, pts, k, with_jacobian=True)
    m = pts.shape[0]
    return np.stack([dx.reshape(m, -1), dy.reshape(m, -1)], axis=-1)


def patch_position_jacobian(image, s, k):
    """ Analytic (k*k*C) x 2 Jacobian of extract_patch with respect to s """
    return patch_position_jacobians(image, [s], k)[0]


###########################################################################
#
#    Fourier positional embedding
#

@functools.lru_cache(maxsize=32)
def _projection(embed_dim, num_freqs, freq_seed):
    """ Fixed random map from the 4F Fourier features to embed_dim values """
    rng = make_rng(freq_seed, stream=1)
    proj = rng.normal(0.0, 1.0 / np.sqrt(4 * num_freqs), size=(4 * num_freqs, embed_dim))
    proj.setflags(write=False)
    return proj


def _omegas(num_freqs):
    return 2 * np.pi * 2.0 ** np.arange(num_freqs, dtype=_float())


def _normalize(pts, height, width):
    return pts[:, 0] / (width - 1), pts[:, 1] / (height - 1)


def positional_embeddings(placements, height, width, config):
    """ Positional embeddings of every placement, shape (m, d) """
    pts = _placement_array(placements, height, width)
    u, v = _normalize(pts, height, width)
    omega = _omegas(config.num_freqs)
    pu = u[:, np.newaxis] * omega
    pv = v[:, np.newaxis] * omega
    # per frequency: sin u, cos u, sin v, cos v
    feats = np.stack([_sin(pu), _cos(pu), _sin(pv), _cos(pv)], axis=-1).reshape(pts.shape[0], -1)
    return feats @ _projection(config.embed_dim, config.num_freqs, config.freq_seed)


def positional_embedding(s, height, width, config):
    """ Fourier-feature embedding of one placement s = (x, y), d values

    Coordinates are normalized to u = x/(W-1), v = y/(H-1); the features
    [sin, cos](2 pi 2^f u) and [sin, cos](2 pi 2^f v), f = 0..F-1, go through a
    fixed seeded linear map to d values.
    """
    return positional_embeddings([s], height, width, config)[0]


def _positional_jacobians(pts, height, width, config):
    u, v = _normalize(pts, height, width)
    omega = _omegas(config.num_freqs)
    pu = u[:, np.newaxis] * omega
    pv = v[:, np.newaxis] * omega
    zero = np.zeros_like(pu)
    du = np.stack([omega * _cos(pu), -omega * _sin(pu), zero, zero], axis=-1).reshape(pts.shape[0], -1)
    dv = np.stack([zero, zero, omega * _cos(pv), -omega * _sin(pv)], axis=-1).reshape(pts.shape[0], -1)
    proj = _projection(config.embed_dim, config.num_freqs, config.freq_seed)
    return np.stack([du @ proj / (width - 1), dv @ proj / (height - 1)], axis=-1)


def positional_embedding_jacobian(s, height, width, config):
    """ Analytic d x 2 Jacobian of positional_embedding with respect to s """
    pts = _placement_array([s], height, width)
    return _positional_jacobians(pts, height, width, config)[0]


###########################################################################
#
#    Tokenization
#

def tokenize_arrays(image, placements, config, with_jacobians=False):
    """ Token features and positional embeddings as arrays

    Returns
    -------
    features : ndarray, shape (m, k*k*C)
    pos : ndarray, shape (m, d)
    features_jac, pos_jac : ndarray, shape (m, k*k*C, 2) and (m, d, 2)
        Only when with_jacobians is True.
    """
    data = _image_array(image)
    height, width, channels = data.shape
    pts = _placement_array(placements, height, width)
    m = pts.shape[0]
    k = config.window
    if m == 0:
        empty = (np.zeros((0, k * k * channels)), np.zeros((0, config.embed_dim)))
        if with_jacobians:
            return empty + (np.zeros((0, k * k * channels, 2)), np.zeros((0, config.embed_dim, 2)))
        return empty
    pos = positional_embeddings(pts, height, width, config)
    if not with_jacobians:
        return _sample_windows(data, pts, k).reshape(m, -1), pos
    values, dx, dy = _sample_windows(data, pts, k, with_jacobian=True)
    features_jac = np.stack([dx.reshape(m, -1), dy.reshape(m, -1)], axis=-1)
    return values.reshape(m, -1), pos, features_jac, _positional_jacobians(pts, height, width, config)


def tokenize(image, placements, config):
    """ One Token per placement, in placement order

    Placements may overlap; no non-overlap constraint is imposed.
    """
    data = _image_array(image)
    pts = _placement_array(placements, data.shape[0], data.shape[1])
    features, pos = tokenize_arrays(data, pts, config)
    return [Token(f, p, e) for f, p, e in zip(features, pts, pos)]
