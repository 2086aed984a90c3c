#
# subtok utility functions
#
# Seeded random streams, file digests, and the process pool used to spread
# per-image work over several processes.
#

import hashlib
import logging
import multiprocessing
import os
import time

import numpy as np

_log = logging.getLogger('subtok')

__all__ = ['make_rng', 'derive_seed', 'file_digest', 'map_in_order', 'estimate_optimal_nprocesses']


_SEED_MASK = (1 << 64) - 1


def derive_seed(base_seed, index):
    """ Per-item seed for order-independent reproducibility: base_seed XOR index. """
    return (int(base_seed) ^ int(index)) & _SEED_MASK


def make_rng(seed, stream=0):
    """ Return a counter-based random generator keyed by (seed, stream).

    The generator is a Philox stream, so two calls with the same key produce
    identical draws no matter which process makes them or in what order.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed.
    stream : int
        Independent sub-stream index; distinct streams never overlap.
    """
    seed = int(seed)
    stream = int(stream)
    if seed < 0 or stream < 0:
        raise ValueError("Seeds and stream indices must be nonnegative integers")
    key = (seed & _SEED_MASK) | ((stream & _SEED_MASK) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def file_digest(path, chunk_size=1 << 20):
    """ sha256 hex digest of a file's contents """
    sha = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b''):
            sha.update(chunk)
    return sha.hexdigest()


def estimate_optimal_nprocesses(n_items, requested=None):
    """ Pick a number of worker processes for a batch of per-image jobs.

    Never more processes than items or CPUs.
    """
    from . import conf
    nproc = requested if requested is not None else conf.n_processes
    if nproc is None or nproc < 1:
        nproc = os.cpu_count() or 1
    nproc = min(int(nproc), os.cpu_count() or 1, max(int(n_items), 1))
    _log.debug("using {0} processes for {1} items".format(nproc, n_items))
    return nproc


def map_in_order(function, arguments, nproc=1):
    """ Apply a picklable top-level function to each argument, keeping order.

    With nproc > 1 the work runs on a forkserver pool; pool.map returns results
    in argument order, so the output never depends on the process count.
    """
    arguments = list(arguments)
    if nproc is None or nproc <= 1 or len(arguments) <= 1:
        return [function(a) for a in arguments]

    nproc = estimate_optimal_nprocesses(len(arguments), nproc)
    tstart = time.time()
    ctx = multiprocessing.get_context('forkserver')
    _log.info("Beginning multiprocessor job using {0} processes".format(nproc))
    with ctx.Pool(int(nproc)) as pool:
        results = pool.map(function, arguments)
    _log.info("Finished multiprocessor job in {0:.2f} s".format(time.time() - tstart))
    return results
