#
# Oracle placement search
#
# Per-image gradient search over token placements through a frozen encoder.
# The learning rate is defined on normalized coordinates u = (x/(W-1), y/(H-1)),
# i.e. a pixel step of lr*(W-1)^2 per unit gradient, clamped to the image
# after every step. Variants: gradient ascent, a random wrong
# label ("obfuscated"), and projection onto the centers of a g x g patch grid.
#

import logging
import os

import numpy as np

from . import conf
from .accel_math import _float
from .encoder import forward_batch, loss as _loss, position_gradient, NumericalError
from .imagery import DataFormatError
from .priors import PlacementSet, lattice_centers, read_placement_csv, write_placement_csv
from .subpixel import tokenize_arrays, _placement_array
from .utils import make_rng, derive_seed

_log = logging.getLogger('subtok')

__all__ = ['OracleConfig', 'Trajectory', 'spot_on_search', 'grid_snap', 'transfer_positions',
           'predict_at', 'obfuscated_label']

MODES = ('subpixel', 'grid_snap')
OBJECTIVES = ('descent', 'ascent', 'obfuscated')
SNAP_WHEN = ('every-step', 'final')


class OracleConfig(object):
    """ Settings of one oracle search

    Parameters
    ----------
    lr : float
        Step size in normalized coordinates per unit gradient.
    steps : int
        Number of gradient steps; 0 returns the initial placements.
    mode : {'subpixel', 'grid_snap'}
    objective : {'descent', 'ascent', 'obfuscated'}
    grid_g : int
        Side of the snap grid (the dense token grid, 8 for the toy task).
    seed : int
        Base seed of the obfuscated label draw; image i uses seed XOR i.
    snap_when : {'every-step', 'final'}
        In grid_snap mode, project after every step or only the last one.
    embedding_gradient : bool
        Include the positional-embedding path in the position gradient.
    """

    def __init__(self, lr=None, steps=None, mode='subpixel', objective='descent', grid_g=8, seed=0,
                 snap_when='every-step', embedding_gradient=True):
        self.lr = float(conf.oracle_lr if lr is None else lr)
        self.steps = int(conf.oracle_steps if steps is None else steps)
        if not self.lr > 0:
            raise ValueError("Oracle lr must be positive, got {}".format(self.lr))
        if self.steps < 0:
            raise ValueError("Oracle steps must be nonnegative, got {}".format(self.steps))
        if mode not in MODES:
            raise ValueError("Unknown oracle mode '{}'; expected one of {}".format(mode, ", ".join(MODES)))
        if objective not in OBJECTIVES:
            raise ValueError("Unknown oracle objective '{}'; expected one of {}".format(
                objective, ", ".join(OBJECTIVES)))
        if snap_when not in SNAP_WHEN:
            raise ValueError("Unknown snap_when '{}'; expected one of {}".format(snap_when, ", ".join(SNAP_WHEN)))
        if int(grid_g) < 1:
            raise ValueError("grid_g must be at least 1")
        self.mode = mode
        self.objective = objective
        self.grid_g = int(grid_g)
        self.seed = int(seed)
        self.snap_when = snap_when
        self.embedding_gradient = bool(embedding_gradient)

    def as_dict(self):
        return dict(lr=self.lr, steps=self.steps, mode=self.mode, objective=self.objective, grid_g=self.grid_g,
                    seed=self.seed, snap_when=self.snap_when, embedding_gradient=self.embedding_gradient)

    def __repr__(self):
        return "OracleConfig({})".format(", ".join("{}={}".format(k, v) for k, v in self.as_dict().items()))


class Trajectory(object):
    """ Placements visited by one oracle search

    Attributes
    ----------
    positions : ndarray, shape (steps+1, m, 2)
        Row 0 is the initial placement set.
    losses : ndarray, shape (steps+1,)
        Search objective at each row.
    final_prediction : int
        Predicted class at the last row.
    """

    def __init__(self, positions, losses, final_prediction, label=None, label_used=None):
        self.positions = np.asarray(positions, dtype=_float())
        self.losses = np.asarray(losses, dtype=_float())
        if self.positions.ndim != 3 or self.positions.shape[2] != 2:
            raise ValueError("Trajectory positions must have shape (steps+1, m, 2)")
        if self.losses.shape != (self.positions.shape[0],):
            raise ValueError("Trajectory needs one loss per recorded step")
        self.final_prediction = int(final_prediction)
        self.label = label
        self.label_used = label_used

    @property
    def steps(self):
        return self.positions.shape[0] - 1

    @property
    def m(self):
        return self.positions.shape[1]

    @property
    def initial_placements(self):
        return self.positions[0]

    @property
    def final_placements(self):
        return self.positions[-1]

    @staticmethod
    def loss_path(path):
        root, ext = os.path.splitext(path)
        return root + '_loss' + (ext or '.csv')

    def write_csv(self, path):
        """ Positions CSV (one row per step) plus a sidecar CSV of per-step losses """
        write_placement_csv(list(self.positions), path)
        table = np.stack([np.arange(self.losses.size, dtype=_float()), self.losses], axis=1)
        np.savetxt(self.loss_path(path), table, delimiter=',', header='step,loss', comments='',
                   fmt=['%d', '%.17g'])

    @classmethod
    def read_csv(cls, path, final_prediction=-1):
        positions = read_placement_csv(path)
        loss_file = cls.loss_path(path)
        if os.path.exists(loss_file):
            losses = np.loadtxt(loss_file, delimiter=',', skiprows=1, ndmin=2)[:, 1]
        else:
            losses = np.full(positions.shape[0], np.nan)
        if losses.size != positions.shape[0]:
            raise DataFormatError("Loss sidecar {} has {} rows, trajectory has {}".format(
                loss_file, losses.size, positions.shape[0]))
        return cls(positions, losses, final_prediction)

    def __repr__(self):
        return "Trajectory(steps={0}, m={1})".format(self.steps, self.m)


def grid_snap(placements, height, width, g):
    """ Map each placement to the nearest center of a g x g patch grid

    Centers are (j + 0.5) * D / g - 0.5 per axis; exact midpoints go to the
    lower index.
    """
    if int(g) < 1:
        raise ValueError("grid_snap requires g >= 1, got {}".format(g))
    pts = _placement_array(placements, height, width)
    xs = lattice_centers(int(g), width)
    ys = lattice_centers(int(g), height)
    # argmin returns the first minimum, i.e. the lower index on ties
    jx = np.argmin(np.abs(pts[:, 0:1] - xs), axis=1)
    jy = np.argmin(np.abs(pts[:, 1:2] - ys), axis=1)
    return PlacementSet(np.stack([xs[jx], ys[jy]], axis=1), height, width)


def obfuscated_label(label, num_classes, seed, index=0):
    """ A seeded uniform draw from the classes other than label """
    if num_classes < 2:
        raise ValueError("Label obfuscation needs at least two classes")
    rng = make_rng(derive_seed(seed, index), stream=3)
    draw = int(rng.integers(num_classes - 1))
    return draw + (draw >= label)


def predict_at(params, image, placements, tokcfg=None):
    """ Logits of params for one image at the given placements """
    tokcfg = params.tokenizer if tokcfg is None else tokcfg
    features, pos = tokenize_arrays(image, placements, tokcfg)
    return forward_batch(params, features[np.newaxis], pos[np.newaxis]).logits[0]


def spot_on_search(params, image, label, initial, tokcfg=None, oracfg=None, index=0):
    """ Gradient search over the placements of one image with the encoder frozen

    Parameters
    ----------
    params : EncoderParams
        Only read; its digest is unchanged by the search.
    image : Image
    label : int
        True class of the image.
    initial : PlacementSet or array_like, shape (m, 2)
        Initial placements; recorded unchanged as row 0.
    tokcfg : TokenizerConfig, optional
        Defaults to the tokenizer stored with params.
    oracfg : OracleConfig, optional
    index : int
        Image index, mixed into the obfuscated label seed.

    Returns
    -------
    Trajectory
    """
    tokcfg = params.tokenizer if tokcfg is None else tokcfg
    oracfg = OracleConfig() if oracfg is None else oracfg
    height, width = image.height, image.width
    start = np.array(_placement_array(initial, height, width), dtype=_float())
    if start.shape[0] == 0:
        raise ValueError("Oracle search requires at least one initial placement")

    target = label
    if oracfg.objective == 'obfuscated':
        target = obfuscated_label(label, params.config.num_classes, oracfg.seed, index)
    direction = -1.0 if oracfg.objective == 'ascent' else 1.0
    upper = np.array([width - 1, height - 1], dtype=_float())
    # lr applies to coordinates normalized to [0, 1]; the step is taken in pixels
    pixel_lr = oracfg.lr * upper ** 2
    snapping = oracfg.mode == 'grid_snap'

    latent = start
    current = start
    positions = [start]
    losses = []
    for step in range(oracfg.steps):
        value, grad = position_gradient(params, image, current, target, tokcfg,
                                        embedding_path=oracfg.embedding_gradient)
        losses.append(value)
        latent = np.clip(latent - direction * pixel_lr * grad, 0.0, upper)
        current = latent
        if snapping and (oracfg.snap_when == 'every-step' or step == oracfg.steps - 1):
            current = grid_snap(current, height, width, oracfg.grid_g).points
        positions.append(current)
        _log.debug("oracle step {0}: loss {1:.6f}".format(step, value))

    logits = predict_at(params, image, current, tokcfg)
    final_loss = _loss(logits, target, params.config.label_smoothing)
    if not np.isfinite(final_loss):
        raise NumericalError("Non-finite loss at the final placements of image {}".format(index))
    losses.append(final_loss)
    return Trajectory(np.stack(positions), losses, int(np.argmax(logits)), label=label, label_used=target)


def transfer_positions(params_target, images, labels, trajectories, tokcfg=None):
    """ Top-1 accuracy of a target model at placements found by another model's searches

    Parameters
    ----------
    params_target : EncoderParams
    images : sequence of Image
    labels : sequence of int
    trajectories : sequence of Trajectory or of (m, 2) arrays
        One per image; the last row of each trajectory is used.
    """
    images = list(images)
    labels = list(labels)
    trajectories = list(trajectories)
    if len(images) == 0:
        raise ValueError("transfer_positions requires a nonempty image set")
    if not (len(images) == len(labels) == len(trajectories)):
        raise ValueError("Image/trajectory mismatch: {} images, {} labels, {} trajectories".format(
            len(images), len(labels), len(trajectories)))
    correct = 0
    for image, label, traj in zip(images, labels, trajectories):
        placements = traj.final_placements if isinstance(traj, Trajectory) else np.asarray(traj)
        logits = predict_at(params_target, image, placements, tokcfg)
        correct += int(np.argmax(logits) == label)
    return correct / len(images)
