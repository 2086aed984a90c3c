#
# Spatial priors for initial token placements
#
# Every sampler returns a PlacementSet of m continuous (x, y) positions inside
# [0, W-1] x [0, H-1]. Stochastic samplers are keyed by an explicit seed
# through a counter-based generator, so draws never depend on call order.
#

import logging

import numpy as np
import scipy.stats.qmc

from . import conf
from .accel_math import _float, _exp
from .imagery import SaliencyMask
from .utils import make_rng, derive_seed

_log = logging.getLogger('subtok')

__all__ = ['PlacementSet', 'PriorSpec', 'PRIOR_KINDS', 'sample_uniform', 'sample_gaussian', 'sample_sobol',
           'sample_isotropic', 'sample_center', 'sample_weighted', 'sample_patchdropout',
           'derive_background_weights', 'derive_boundary_weights', 'lattice_centers',
           'write_placement_csv', 'read_placement_csv']

PRIOR_KINDS = ('uniform', 'gaussian', 'sobol', 'isotropic', 'center', 'salient', 'background', 'boundary',
               'patchdropout')

# priors that need a saliency mask to sample from
MASKED_KINDS = ('salient', 'background')
# priors that draw from a random stream
STOCHASTIC_KINDS = ('uniform', 'gaussian', 'salient', 'background', 'boundary', 'patchdropout')


class PlacementSet(object):
    """ An ordered list of m continuous placements (x, y) in pixel units

    Parameters
    ----------
    points : array_like, shape (m, 2)
        Columns are x (along the width) and y (along the height).
    height, width : int
        Image dimensions the placements refer to. All points must lie in
        [0, width-1] x [0, height-1].
    """

    def __init__(self, points, height, width):
        points = np.array(points, dtype=_float()).reshape(-1, 2)
        if not np.all(np.isfinite(points)):
            raise ValueError("Placements must be finite")
        if points.size and (points[:, 0].min() < 0 or points[:, 0].max() > width - 1 or
                            points[:, 1].min() < 0 or points[:, 1].max() > height - 1):
            raise ValueError("Placements must lie within [0, {}] x [0, {}]".format(width - 1, height - 1))
        points.setflags(write=False)
        self._points = points
        self.height = int(height)
        self.width = int(width)

    @property
    def points(self):
        return self._points

    @property
    def m(self):
        return self._points.shape[0]

    def __len__(self):
        return self.m

    def __iter__(self):
        return iter(map(tuple, self._points))

    def __eq__(self, other):
        return (isinstance(other, PlacementSet) and self.shape_key == other.shape_key and
                np.array_equal(self._points, other._points))

    @property
    def shape_key(self):
        return (self.height, self.width, self.m)

    def to_csv_row(self):
        return ",".join(repr(float(v)) for v in self._points.ravel())

    def __repr__(self):
        return "PlacementSet(m={0}, {1}x{2})".format(self.m, self.height, self.width)


def _check_m(m):
    if int(m) != m or m < 1:
        raise ValueError("Token count m must be a positive integer, got {}".format(m))
    return int(m)


def _clamp(x, y, height, width):
    return np.clip(x, 0, width - 1), np.clip(y, 0, height - 1)


def _square_side(m):
    g = int(round(np.sqrt(m)))
    if g * g != m:
        raise ValueError("Token count m must be a perfect square for lattice priors, got {}".format(m))
    return g


def lattice_centers(g, length):
    """ Centers (j + 0.5) * length / g - 0.5 of a g-cell lattice along one axis """
    return (np.arange(g, dtype=_float()) + 0.5) * length / g - 0.5


###########################################################################
#
#    Samplers
#

def sample_uniform(m, height, width, seed):
    """ m independent uniform draws over the image domain """
    m = _check_m(m)
    rng = make_rng(seed)
    x = rng.uniform(0, width - 1, size=m)
    y = rng.uniform(0, height - 1, size=m)
    return PlacementSet(np.stack([x, y], axis=1), height, width)


def sample_gaussian(m, height, width, sigma_frac, seed):
    """ Per-axis normal draws around the image center, clamped to the domain

    The standard deviation is sigma_frac * min(H, W).
    """
    m = _check_m(m)
    if not sigma_frac > 0:
        raise ValueError("sigma_frac must be positive, got {}".format(sigma_frac))
    sigma = sigma_frac * min(height, width)
    rng = make_rng(seed)
    x = rng.normal((width - 1) / 2.0, sigma, size=m)
    y = rng.normal((height - 1) / 2.0, sigma, size=m)
    x, y = _clamp(x, y, height, width)
    return PlacementSet(np.stack([x, y], axis=1), height, width)


def sample_sobol(m, height, width):
    """ First m points of the unscrambled 2-D Sobol sequence, scaled to the domain

    The sequence starts at the origin; dimension 1 is the base-2 van der Corput
    sequence and dimension 2 uses the Joe-Kuo direction numbers.
    """
    m = _check_m(m)
    sampler = scipy.stats.qmc.Sobol(d=2, scramble=False)
    # drawing a power of two keeps the sequence balanced and avoids scipy's warning
    unit = sampler.random_base2(int(np.ceil(np.log2(m))))[:m]
    return PlacementSet(unit * np.array([width - 1, height - 1], dtype=_float()), height, width)


def sample_isotropic(m, height, width):
    """ Centers of a g x g lattice (m = g^2), row-major

    x_j = (j + 0.5) W / g - 0.5 and y_i = (i + 0.5) H / g - 0.5. For g = W / k
    these coincide with the centers of the non-overlapping k x k patches.
    """
    m = _check_m(m)
    g = _square_side(m)
    xs = lattice_centers(g, width)
    ys = lattice_centers(g, height)
    yy, xx = np.meshgrid(ys, xs, indexing='ij')
    return PlacementSet(np.stack([xx.ravel(), yy.ravel()], axis=1), height, width)


def _center_warp(u, gamma):
    t = 2 * u - 1
    return 0.5 + 0.5 * np.sign(t) * np.abs(t) ** gamma


def sample_center(m, height, width, gamma):
    """ Lattice fractions pulled toward the image center

    u = (j + 0.5) / g is warped by v = 0.5 + 0.5 sign(2u-1) |2u-1|^gamma and
    mapped to v * (D - 1) per axis. gamma = 1 gives an even lattice.
    """
    m = _check_m(m)
    if gamma < 1:
        raise ValueError("center_gamma must be at least 1, got {}".format(gamma))
    g = _square_side(m)
    u = (np.arange(g, dtype=_float()) + 0.5) / g
    v = _center_warp(u, gamma)
    yy, xx = np.meshgrid(v * (height - 1), v * (width - 1), indexing='ij')
    return PlacementSet(np.stack([xx.ravel(), yy.ravel()], axis=1), height, width)


def sample_weighted(m, weights, seed):
    """ Draw m distinct pixels with probability proportional to weight

    Gumbel-top-k over log-weights: adding independent Gumbel noise to the
    log-weights and keeping the m largest keys samples without replacement.
    Zero-weight pixels are never chosen. Each chosen pixel center gets an
    independent U[-0.5, 0.5) jitter per axis, clamped to the domain.

    Parameters
    ----------
    m : int
    weights : ndarray, shape (H, W)
        Nonnegative weights; need not be normalized.
    seed : int
    """
    m = _check_m(m)
    weights = np.asarray(weights, dtype=_float())
    if weights.ndim != 2:
        raise ValueError("Weights must be a 2-dimensional grid, got shape {}".format(weights.shape))
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("Weights must be finite and nonnegative")
    height, width = weights.shape
    flat = weights.ravel()
    admissible = np.flatnonzero(flat > 0)
    if admissible.size == 0:
        raise ValueError("Weights are all zero: no pixel can be sampled")
    if m > admissible.size:
        raise ValueError("Cannot draw {} distinct pixels from {} positive-weight pixels".format(
            m, admissible.size))

    rng = make_rng(seed)
    keys = np.log(flat[admissible]) + rng.gumbel(size=admissible.size)
    # stable descending order so equal keys resolve by pixel index
    chosen = admissible[np.argsort(-keys, kind='stable')[:m]]
    rows, cols = np.divmod(chosen, width)
    jitter = rng.uniform(-0.5, 0.5, size=(m, 2))
    x, y = _clamp(cols + jitter[:, 0], rows + jitter[:, 1], height, width)
    return PlacementSet(np.stack([x, y], axis=1), height, width)


def sample_patchdropout(m, height, width, grid_g, seed):
    """ m distinct centers of the g x g patch lattice, uniformly without replacement

    This is the random patch-dropping baseline: a standard grid tokenizer that
    keeps a random subset of its patches.
    """
    m = _check_m(m)
    if m > grid_g * grid_g:
        raise ValueError("Cannot keep {} patches of a {}x{} grid".format(m, grid_g, grid_g))
    rng = make_rng(seed)
    kept = np.sort(rng.permutation(grid_g * grid_g)[:m])
    rows, cols = np.divmod(kept, grid_g)
    x = lattice_centers(grid_g, width)[cols]
    y = lattice_centers(grid_g, height)[rows]
    return PlacementSet(np.stack([x, y], axis=1), height, width)


###########################################################################
#
#    Weight maps for the adversarial priors
#

def derive_background_weights(mask):
    """ Inverse saliency, 1 - M """
    data = mask.data if isinstance(mask, SaliencyMask) else np.asarray(mask, dtype=_float())
    return 1.0 - data


def _border_distance(x, y, height, width):
    """ Distance of (x, y) to the nearest edge of [0, W-1] x [0, H-1] """
    return np.minimum(np.minimum(x, width - 1 - x), np.minimum(y, height - 1 - y))


def derive_boundary_weights(height, width, tau_frac):
    """ Edge-biased weights exp(-d_border / (tau_frac * min(H, W)))

    d_border is the distance of a pixel center to the nearest edge of the
    placement domain, so the corner pixels get weight 1.
    """
    if not tau_frac > 0:
        raise ValueError("tau_frac must be positive, got {}".format(tau_frac))
    rows, cols = np.mgrid[0:height, 0:width].astype(_float())
    d = _border_distance(cols, rows, height, width)
    return _exp(-d / (tau_frac * min(height, width)))


###########################################################################
#
#    Prior specification
#

class PriorSpec(object):
    """ Which prior to sample initial placements from, with its parameters

    Parameters
    ----------
    kind : str
        One of PRIOR_KINDS.
    m : int
        Token budget.
    seed : int
        Unsigned 64-bit seed for stochastic priors. Per-image draws use
        seed XOR image index.
    gaussian_sigma_frac, center_gamma, boundary_tau_frac : float, optional
        Prior shape parameters; defaults from `subtok.conf`.
    grid_g : int
        Lattice side for the patchdropout prior.
    """

    def __init__(self, kind, m, seed=0, gaussian_sigma_frac=None, center_gamma=None, boundary_tau_frac=None,
                 grid_g=8):
        if kind not in PRIOR_KINDS:
            raise ValueError("Unknown prior kind '{}'; expected one of {}".format(kind, ", ".join(PRIOR_KINDS)))
        self.kind = kind
        self.m = _check_m(m)
        self.seed = int(seed)
        self.gaussian_sigma_frac = conf.gaussian_sigma_frac if gaussian_sigma_frac is None else gaussian_sigma_frac
        self.center_gamma = conf.center_gamma if center_gamma is None else center_gamma
        self.boundary_tau_frac = conf.boundary_tau_frac if boundary_tau_frac is None else boundary_tau_frac
        self.grid_g = int(grid_g)
        if not self.gaussian_sigma_frac > 0:
            raise ValueError("gaussian_sigma_frac must be positive")
        if not self.boundary_tau_frac > 0:
            raise ValueError("boundary_tau_frac must be positive")
        if self.center_gamma < 1:
            raise ValueError("center_gamma must be at least 1")
        if kind in ('isotropic', 'center'):
            _square_side(self.m)

    @property
    def stochastic(self):
        return self.kind in STOCHASTIC_KINDS

    @property
    def needs_mask(self):
        return self.kind in MASKED_KINDS

    def sample(self, height, width, mask=None, index=0):
        """ Draw the placements for one image

        Parameters
        ----------
        height, width : int
        mask : SaliencyMask, optional
            Required by the salient and background priors.
        index : int
            Image index, mixed into the seed.
        """
        seed = derive_seed(self.seed, index)
        if self.needs_mask:
            if mask is None:
                raise ValueError("The {} prior requires a saliency mask".format(self.kind))
            if mask.shape != (height, width):
                raise ValueError("Saliency mask shape {} does not match image {}x{}".format(
                    mask.shape, height, width))

        if self.kind == 'uniform':
            return sample_uniform(self.m, height, width, seed)
        elif self.kind == 'gaussian':
            return sample_gaussian(self.m, height, width, self.gaussian_sigma_frac, seed)
        elif self.kind == 'sobol':
            return sample_sobol(self.m, height, width)
        elif self.kind == 'isotropic':
            return sample_isotropic(self.m, height, width)
        elif self.kind == 'center':
            return sample_center(self.m, height, width, self.center_gamma)
        elif self.kind == 'salient':
            return sample_weighted(self.m, mask.data, seed)
        elif self.kind == 'background':
            return sample_weighted(self.m, derive_background_weights(mask), seed)
        elif self.kind == 'boundary':
            return sample_weighted(self.m, derive_boundary_weights(height, width, self.boundary_tau_frac), seed)
        elif self.kind == 'patchdropout':
            return sample_patchdropout(self.m, height, width, self.grid_g, seed)

    def with_seed(self, seed):
        return PriorSpec(self.kind, self.m, seed, self.gaussian_sigma_frac, self.center_gamma,
                         self.boundary_tau_frac, self.grid_g)

    def as_dict(self):
        return dict(kind=self.kind, m=self.m, seed=self.seed, gaussian_sigma_frac=self.gaussian_sigma_frac,
                    center_gamma=self.center_gamma, boundary_tau_frac=self.boundary_tau_frac, grid_g=self.grid_g)

    def __repr__(self):
        return "PriorSpec(kind={0!r}, m={1}, seed={2})".format(self.kind, self.m, self.seed)


###########################################################################
#
#    CSV I/O
#

def _csv_header(m):
    return ",".join("x{0},y{0}".format(i) for i in range(m))


def write_placement_csv(rows, path):
    """ Write placements as CSV, header x0,y0,...,x{m-1},y{m-1}, one row per set

    rows is a sequence of PlacementSet or of (m, 2) arrays, all with the same m.
    """
    arrays = [r.points if isinstance(r, PlacementSet) else np.asarray(r, dtype=_float()).reshape(-1, 2)
              for r in rows]
    if len(arrays) == 0:
        raise ValueError("Nothing to write: no placement rows")
    m = arrays[0].shape[0]
    if any(a.shape[0] != m for a in arrays):
        raise ValueError("All placement rows must have the same token count")
    table = np.stack([a.ravel() for a in arrays])
    np.savetxt(path, table, delimiter=',', header=_csv_header(m), comments='', fmt='%.17g')


def read_placement_csv(path):
    """ Read a placement CSV; returns an array of shape (rows, m, 2) """
    from .imagery import DataFormatError
    with open(path, 'r') as f:
        header = f.readline().strip()
    columns = header.split(',') if header else []
    if len(columns) == 0 or len(columns) % 2 != 0:
        raise DataFormatError("Placement CSV {} must have an even number of columns, got {}".format(
            path, len(columns)))
    m = len(columns) // 2
    if header != _csv_header(m):
        raise DataFormatError("Placement CSV {} has unexpected header".format(path))
    table = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2, dtype=_float())
    if table.shape[1] != 2 * m:
        raise DataFormatError("Placement CSV {} rows have {} columns, header has {}".format(
            path, table.shape[1], 2 * m))
    return table.reshape(table.shape[0], m, 2)
