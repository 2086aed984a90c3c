#
# Experiment orchestration
#
# Evaluation of placement priors with and without the oracle, placement
# transfer between models, adversarial ablations, saliency gain sweeps and the
# forward-throughput benchmark. The command-line front end in cli.py is a thin
# layer over these functions.
#

import logging
import multiprocessing
import os
import time

import numpy as np

from . import conf
from .encoder import forward_batch
from .metrics import (EvalReport, accuracy, aggregate_rsg, knn_predict, per_class_accuracy, rsg,
                      summarize_reports, transfer_delta)
from .oracle import OracleConfig, spot_on_search, transfer_positions
from .priors import PriorSpec, sample_sobol
from .subpixel import tokenize_arrays
from .toytask import tokenize_batch
from .utils import map_in_order

_log = logging.getLogger('subtok')

__all__ = ['evaluate_prior', 'evaluate_seeds', 'run_oracle', 'evaluate_transfer', 'run_ablation', 'run_rsg',
           'benchmark_throughput', 'accuracy_vs_budget', 'ABLATIONS']

ABLATIONS = ('background', 'boundary', 'ascent', 'obfuscate')
STOCHASTIC_SEED_COUNT = 3
EVAL_BATCH = 64


def _forward_samples(params, samples, prior, batch_size=EVAL_BATCH):
    """ Logits and class-token features of params on samples at placements from prior """
    logits, features = [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        f, p = tokenize_batch(chunk, prior, params.tokenizer)
        trace = forward_batch(params, f, p)
        logits.append(trace.logits)
        features.append(trace.cls_feature)
    return np.concatenate(logits), np.concatenate(features)


def _forward_placements(params, samples, placements, batch_size=EVAL_BATCH):
    """ Like _forward_samples, with explicit per-sample placements of equal size """
    logits, features = [], []
    for start in range(0, len(samples), batch_size):
        stacked = [tokenize_arrays(s.image, pl, params.tokenizer)
                   for s, pl in zip(samples[start:start + batch_size], placements[start:start + batch_size])]
        trace = forward_batch(params, np.stack([t[0] for t in stacked]), np.stack([t[1] for t in stacked]))
        logits.append(trace.logits)
        features.append(trace.cls_feature)
    return np.concatenate(logits), np.concatenate(features)


def _wrap_search_for_multiprocessing(args):
    """ Top-level helper so oracle searches can be mapped over a process pool """
    params, sample, initial, oracfg = args
    return spot_on_search(params, sample.image, sample.label, initial, params.tokenizer, oracfg, sample.index)


def run_oracle(params, samples, prior, oracfg, nproc=1):
    """ Oracle trajectories for every sample, starting from placements drawn from prior """
    args = [(params, s, prior.sample(s.image.height, s.image.width, s.saliency, s.index).points, oracfg)
            for s in samples]
    tstart = time.time()
    trajectories = map_in_order(_wrap_search_for_multiprocessing, args, nproc)
    if conf.enable_speed_tests:
        _log.info("Oracle searches on {} images took {:.2f} s".format(len(samples), time.time() - tstart))
    return trajectories


def _recipe_label(prior, oracfg):
    label = "{}/m={}".format(prior.kind, prior.m)
    if oracfg is not None:
        label += "/oracle:{}:{}:lr={:g}:steps={}".format(oracfg.mode, oracfg.objective, oracfg.lr, oracfg.steps)
        if oracfg.mode == 'grid_snap':
            label += ":{}".format(oracfg.snap_when)
    return label


def evaluate_prior(params, train_samples, val_samples, prior, oracfg=None, nproc=1, knn=True):
    """ Top-1 and kNN accuracy of params with placements drawn from a prior

    Parameters
    ----------
    params : EncoderParams
    train_samples : list of ToySample
        Reference set of the kNN vote (tokenized with the same prior, no oracle).
    val_samples : list of ToySample
    prior : PriorSpec
    oracfg : OracleConfig, optional
        If given, predictions and kNN queries use the final oracle placements.
    nproc : int
    knn : bool

    Returns
    -------
    report : EvalReport
    trajectories : list of Trajectory, or None without oracle
    """
    if len(val_samples) == 0:
        raise ValueError("Evaluation requires at least one validation sample")
    labels = np.array([s.label for s in val_samples])
    trajectories = None
    if oracfg is None:
        logits, query = _forward_samples(params, val_samples, prior)
        predictions = np.argmax(logits, axis=1)
    else:
        trajectories = run_oracle(params, val_samples, prior, oracfg, nproc)
        predictions = np.array([t.final_prediction for t in trajectories])
        _, query = _forward_placements(params, val_samples, [t.final_placements for t in trajectories])

    knn_top1 = float('nan')
    if knn and len(train_samples):
        _, reference = _forward_samples(params, train_samples, prior)
        knn_labels = knn_predict(reference, [s.label for s in train_samples], query)
        knn_top1 = accuracy(knn_labels, labels)

    extra = dict(prior=prior.kind, seed=prior.seed)
    if trajectories is not None:
        gains = np.array([t.losses[-1] <= t.losses[0] for t in trajectories])
        extra.update(oracle=oracfg.objective, mode=oracfg.mode, lr=oracfg.lr, steps=oracfg.steps,
                     loss_nonincreasing=float(gains.mean()))
    report = EvalReport(accuracy(predictions, labels), knn_top1,
                        per_class_accuracy(predictions, labels, params.config.num_classes),
                        len(val_samples), prior.m, _recipe_label(prior, oracfg), extra)
    _log.info("{}: top-1 {:.4f}, kNN {:.4f}".format(report.label, report.top1, report.knn_top1))
    return report, trajectories


def evaluate_seeds(params, train_samples, val_samples, prior, oracfg=None, nproc=1, knn=True):
    """ evaluate_prior over consecutive seeds for stochastic priors, once otherwise

    Returns (reports, summary, trajectories of the first seed).
    """
    seeds = [prior.seed + i for i in range(STOCHASTIC_SEED_COUNT)] if prior.stochastic else [prior.seed]
    reports, first = [], None
    for seed in seeds:
        report, traj = evaluate_prior(params, train_samples, val_samples, prior.with_seed(seed), oracfg, nproc, knn)
        reports.append(report)
        first = traj if first is None else first
    return reports, summarize_reports(reports), first


def evaluate_transfer(source, target, samples, prior, oracfg, nproc=1):
    """ Accuracy of target at its initial placements and at placements found by source's oracle

    Returns (summary, trajectories). The summary holds acc_original, acc_transfer,
    delta and the source's own oracle accuracy.
    """
    if len(samples) == 0:
        raise ValueError("Transfer requires a nonempty image set")
    trajectories = run_oracle(source, samples, prior, oracfg, nproc)
    images = [s.image for s in samples]
    labels = [s.label for s in samples]
    acc_original = transfer_positions(target, images, labels, [t.initial_placements for t in trajectories])
    acc_transfer = transfer_positions(target, images, labels, trajectories)
    source_oracle = accuracy([t.final_prediction for t in trajectories], labels)
    return dict(acc_original=acc_original, acc_transfer=acc_transfer,
                delta=transfer_delta(acc_original, acc_transfer), source_oracle_top1=source_oracle,
                n_images=len(samples), m=prior.m), trajectories


def run_ablation(params, train_samples, val_samples, kind, m, seed=0, oracfg=None, nproc=1):
    """ One adversarial ablation against the isotropic baseline at budget m

    background and boundary replace the prior (no oracle); ascent and
    obfuscate run the oracle from isotropic placements with that objective.

    Returns (ablation report, baseline report).
    """
    if kind not in ABLATIONS:
        raise ValueError("Unknown ablation '{}'; expected one of {}".format(kind, ", ".join(ABLATIONS)))
    baseline_prior = PriorSpec('isotropic', m, seed)
    baseline, _ = evaluate_prior(params, train_samples, val_samples, baseline_prior, None, nproc)
    if kind in ('background', 'boundary'):
        reports, summary, _ = evaluate_seeds(params, train_samples, val_samples, PriorSpec(kind, m, seed),
                                             None, nproc)
        report = reports[0]
        report.extra.update(top1_mean=summary['top1_mean'], top1_spread=summary['top1_spread'])
    else:
        base = OracleConfig() if oracfg is None else oracfg
        objective = 'ascent' if kind == 'ascent' else 'obfuscated'
        adversary = OracleConfig(base.lr, base.steps, base.mode, objective, base.grid_g, seed, base.snap_when)
        report, _ = evaluate_prior(params, train_samples, val_samples, baseline_prior, adversary, nproc)
    report.extra.update(ablation=kind, baseline_top1=baseline.top1, delta=report.top1 - baseline.top1)
    return report, baseline


def run_rsg(params, samples, budgets, oracfg, nproc=1):
    """ Relative saliency gain of descent oracles from isotropic placements, per budget

    Returns (summary rows, raw per-token rows). Raw rows are
    (m, image index, token, gain) with NaN for excluded tokens.
    """
    summary, raw = [], []
    k = params.tokenizer.window
    for m in budgets:
        prior = PriorSpec('isotropic', m)
        trajectories = run_oracle(params, samples, prior, oracfg, nproc)
        gains = [rsg(t, s.saliency, k, strict=False) for t, s in zip(trajectories, samples)]
        agg = aggregate_rsg(gains)
        summary.append(dict(m=m, rsg_mean=agg['mean'], n_images=agg['n_images'], n_tokens=agg['n_tokens'],
                            n_excluded=agg['n_excluded'],
                            top1=accuracy([t.final_prediction for t in trajectories], [s.label for s in samples])))
        for sample, g in zip(samples, gains):
            for token, value in enumerate(g):
                raw.append(dict(m=m, image=sample.index, token=token, rsg=float(value)))
        _log.info("RSG at m={}: {:.4f} ({} tokens excluded)".format(m, agg['mean'], agg['n_excluded']))
    return summary, raw


###########################################################################
#
#    Throughput
#

_THREAD_VARIABLES = ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS', 'MKL_NUM_THREADS', 'NUMEXPR_NUM_THREADS')


def _time_forward(params, m, repeats, batch_size):
    """ Median images/second of forward passes at budget m """
    size = 64
    rng = np.random.Generator(np.random.Philox(key=m))
    image = rng.uniform(0, 1, size=(size, size, 3))
    placements = sample_sobol(m, size, size)
    f, p = tokenize_arrays(image, placements, params.tokenizer)
    features = np.broadcast_to(f, (batch_size,) + f.shape).copy()
    pos = np.broadcast_to(p, (batch_size,) + p.shape).copy()
    forward_batch(params, features, pos)
    rates = []
    for _ in range(repeats):
        tstart = time.perf_counter()
        forward_batch(params, features, pos)
        rates.append(batch_size / (time.perf_counter() - tstart))
    return float(np.median(rates))


def _wrap_bench_for_multiprocessing(args):
    """ Top-level helper so the benchmark can run in a fresh single-threaded process """
    params, m_list, repeats, batch_size = args
    return [_time_forward(params, m, repeats, batch_size) for m in m_list]


def benchmark_throughput(params, m_list, repeats=5, batch_size=64, single_thread=True):
    """ Forward-only throughput (images/second, median over repeats) per token budget

    In single-thread mode the timings run in a freshly spawned process whose
    BLAS and numexpr pools are limited to one thread; otherwise they run in
    this process with the default thread pools.
    """
    m_list = [int(m) for m in m_list]
    if repeats < 1:
        raise ValueError("Benchmark repeats must be at least 1")
    if not single_thread:
        rates = _wrap_bench_for_multiprocessing((params, m_list, repeats, batch_size))
    else:
        saved = {name: os.environ.get(name) for name in _THREAD_VARIABLES}
        try:
            for name in _THREAD_VARIABLES:
                os.environ[name] = '1'
            ctx = multiprocessing.get_context('spawn')
            with ctx.Pool(1) as pool:
                rates = pool.map(_wrap_bench_for_multiprocessing, [(params, m_list, repeats, batch_size)])[0]
        finally:
            for name, value in saved.items():
                if value is None:
                    os.environ.pop(name, None)
                else:
                    os.environ[name] = value
    rows = [dict(m=m, images_per_sec=rate) for m, rate in zip(m_list, rates)]
    for row in rows:
        _log.info("m={m}: {images_per_sec:.1f} images/s".format(**row))
    return rows


def accuracy_vs_budget(params, samples, m_list, prior_kind='sobol', seed=0):
    """ Top-1 accuracy without oracle at each budget, for the accuracy/throughput trade-off """
    labels = np.array([s.label for s in samples])
    result = []
    for m in m_list:
        try:
            prior = PriorSpec(prior_kind, m, seed)
        except ValueError:
            prior = PriorSpec('sobol', m, seed)
        logits, _ = _forward_samples(params, samples, prior)
        result.append(accuracy(np.argmax(logits, axis=1), labels))
    return result
