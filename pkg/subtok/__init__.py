# Licensed under a 3-clause BSD style license - see LICENSE.md

"""SUBpixel TOKens (subtok)

subtok reads vision-transformer tokens at continuous image positions rather
than on a fixed patch lattice. It provides differentiable bilinear token
extraction, a family of spatial priors for the initial token placements, a
small transformer classifier with hand-written forward and reverse passes,
an oracle that searches placements by gradient descent through the frozen
classifier, and the evaluation metrics used to compare placements (top-1 and
kNN accuracy, saliency gain, transfer between models).

Everything runs at desk scale on a synthetic shape-classification task that
ships with the package.
"""
import os
import sys
from warnings import warn
from astropy import config as _config

try:
    from .version import version as __version__
except ImportError:
    __version__ = ''

__minimum_python_version__ = "3.7"


class UnsupportedPythonError(Exception):
    pass


if sys.version_info < tuple((int(val) for val in __minimum_python_version__.split('.'))):
    raise UnsupportedPythonError("subtok does not support Python < {}".format(__minimum_python_version__))


class Conf(_config.ConfigNamespace):
    """
    Configuration parameters for `subtok`.
    """

    use_multiprocessing = _config.ConfigItem(False,
                                             'Should per-image evaluation and oracle searches run in parallel '
                                             'using the Python multiprocessing framework (if True) or serially '
                                             'in a single process (if False; slower but a bit more robust)?')

    n_processes = _config.ConfigItem(4, 'Maximum number of additional ' +
                                     'worker processes to spawn, if multiprocessing is enabled. ' +
                                     'Set to 0 for autoselect.')

    use_numexpr = _config.ConfigItem(True, 'Use NumExpr to accelerate elementwise array math (assuming it ' +
                                     'is available)?')

    default_logging_level = _config.ConfigItem('INFO', 'Logging ' +
                                               'verbosity: one of {DEBUG, INFO, WARN, ERROR, or CRITICAL}')

    enable_speed_tests = _config.ConfigItem(False, 'Enable additional ' +
                                            'verbose printout of computation times. Useful for benchmarking.')

    data_dir = _config.ConfigItem('', 'Default root directory for generated toy datasets. If empty, '
                                      'the SPOT_DATA_DIR environment variable is used, then ./spot_data')

    window = _config.ConfigItem(8, 'Default token window size k, in pixels.')
    embed_dim = _config.ConfigItem(128, 'Default encoder width d (also the positional embedding size).')
    num_freqs = _config.ConfigItem(6, 'Number of octave frequencies in the Fourier positional embedding.')
    depth = _config.ConfigItem(4, 'Default number of transformer blocks.')
    heads = _config.ConfigItem(4, 'Default number of attention heads.')
    mlp_ratio = _config.ConfigItem(4, 'Hidden width of the MLP as a multiple of the encoder width.')
    num_classes = _config.ConfigItem(8, 'Number of classes of the toy task.')

    gaussian_sigma_frac = _config.ConfigItem(0.2, 'Standard deviation of the Gaussian prior, as a fraction '
                                                  'of min(H, W).')
    center_gamma = _config.ConfigItem(1.5, 'Warp exponent of the center prior (1 = isotropic lattice).')
    boundary_tau_frac = _config.ConfigItem(0.05, 'Decay length of the boundary prior, as a fraction '
                                                 'of min(H, W).')

    knn_k = _config.ConfigItem(20, 'Number of neighbours in the kNN evaluation.')
    knn_temperature = _config.ConfigItem(0.07, 'Temperature of the kNN similarity weights.')

    oracle_lr = _config.ConfigItem(3e-3, 'Default oracle step size, in normalized image coordinates.')
    oracle_steps = _config.ConfigItem(5, 'Default number of oracle steps.')

    cmap_trajectory = _config.ConfigItem(
        'viridis',
        'Select a default colormap to represent the step index along rendered trajectories'
    )


conf = Conf()

config_dir = os.path.dirname(__file__)
config_template = os.path.join(config_dir, __package__ + ".cfg")
if os.path.isfile(config_template):
    try:
        _config.configuration.update_default_config(
            __package__, config_dir, version=__version__)
    except TypeError as orig_error:
        try:
            _config.configuration.update_default_config(
                __package__, config_dir)
        except _config.configuration.ConfigurationDefaultMissingError as e:
            wmsg = (e.args[0] + " Cannot install default profile. If you are "
                                "importing from source, this is expected.")
            warn(_config.configuration.ConfigurationDefaultMissingWarning(wmsg))
            del e
        except Exception:
            raise orig_error
    except Exception:
        # newer astropy releases dropped update_default_config
        pass

from . import imagery
from . import priors
from . import subpixel
from . import encoder
from . import oracle
from . import metrics
from . import toytask

from .imagery import *
from .priors import *
from .subpixel import *
from .encoder import *
from .oracle import *
from .metrics import *
from .toytask import *

__all__ = (['conf', '__version__'] + imagery.__all__ + priors.__all__ + subpixel.__all__ +
           encoder.__all__ + oracle.__all__ + metrics.__all__ + toytask.__all__)
