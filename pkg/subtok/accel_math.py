# accel_math.py
#
# Elementwise math accelerated with numexpr, when it is available.
#
import numpy as np
from . import conf

import logging
_log = logging.getLogger('subtok')

try:
    # try to import numexpr package to see if it is available
    import numexpr as ne

    _NUMEXPR_AVAILABLE = True
except ImportError:
    ne = None
    _NUMEXPR_AVAILABLE = False

_USE_NUMEXPR = (conf.use_numexpr and _NUMEXPR_AVAILABLE)


def update_math_settings():
    """ Update the module-level math flags, based on user settings
    """
    global _USE_NUMEXPR
    _USE_NUMEXPR = (conf.use_numexpr and _NUMEXPR_AVAILABLE)


def _float():
    """ Returns numpy data type used for all internal arrays """
    # gradient checks need double precision throughout
    return np.float64


def _exp(x):
    """
    Function to speed up taking exponential of an array if NumExpr is available.
    Otherwise defaults to np.exp()

    """
    if _USE_NUMEXPR:
        return ne.evaluate("exp(x)", optimization='moderate', )
    else:
        return np.exp(x)


def _sin(x):
    """ Elementwise sine, using NumExpr if available. """
    if _USE_NUMEXPR:
        return ne.evaluate("sin(x)")
    else:
        return np.sin(x)


def _cos(x):
    """ Elementwise cosine, using NumExpr if available. """
    if _USE_NUMEXPR:
        return ne.evaluate("cos(x)")
    else:
        return np.cos(x)


def _softmax(x, axis=-1):
    """ Numerically stable softmax along one axis. """
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = _exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)
