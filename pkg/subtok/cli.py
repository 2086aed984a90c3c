#
# Command-line front end
#
#   subtok gen-data | train | eval | oracle | transfer | ablate | rsg | render | bench
#
# Each command writes its outputs plus a JSON run manifest (command, resolved
# configuration, seeds, input digests, outputs, timings). Exit codes: 0 success,
# 1 usage error, 2 data error, 3 numerical failure. Errors are reported on
# standard error as a single line: error code=<n> kind=<Name> message=<text>
#

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import conf, __version__
from .encoder import NumericalError, load_params, save_params
from .imagery import DataFormatError, load_image
from .metrics import write_reports_csv
from .oracle import OracleConfig
from .priors import PRIOR_KINDS, PriorSpec, read_placement_csv
from .toytask import TrainConfig, gen_dataset, load_dataset, save_dataset, split_dataset, train_toy
from .utils import file_digest
from . import display, experiments

_log = logging.getLogger('subtok')

__all__ = ['main', 'RunManifest', 'resolve_data_dir', 'EXIT_OK', 'EXIT_USAGE', 'EXIT_DATA', 'EXIT_NUMERIC']

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_DATA_DIR = 'spot_data'
MODEL_NAME = 'model.sptc'
MODES = {'subpixel': 'subpixel', 'grid': 'grid_snap'}
OBJECTIVES = {'descent': 'descent', 'ascent': 'ascent', 'obfuscate': 'obfuscated'}


class UsageError(Exception):
    """ Invalid command line """
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_data_dir(explicit=None):
    """ Dataset root: explicit argument, then SPOT_DATA_DIR, then conf.data_dir, then ./spot_data """
    for candidate in (explicit, os.environ.get('SPOT_DATA_DIR'), conf.data_dir):
        if candidate:
            return candidate
    return DEFAULT_DATA_DIR


def _input_digest(path):
    """ sha256 of a file, or of the sorted (name, digest) pairs of the dataset files in a directory """
    if not os.path.exists(path):
        raise FileNotFoundError("No such file or directory: {}".format(path))
    if os.path.isfile(path):
        return file_digest(path)
    sha = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if os.path.isfile(full) and (name.endswith(".sptf") or name == "manifest.csv"):
            sha.update(name.encode('utf-8'))
            sha.update(file_digest(full).encode('ascii'))
    return sha.hexdigest()


class RunManifest(object):
    """ Record of one command run

    Written with status 'running' before the work starts and rewritten with
    the outputs, timings and final status afterwards. Timings make the
    manifest itself the one output that differs between identical runs.
    A run that raises is finalized with status 'failed' by main().
    """

    active = None

    def __init__(self, command, config, seeds, inputs, path):
        self.command = command
        self.config = config
        self.seeds = seeds
        self.inputs = {name: dict(path=p, sha256=_input_digest(p)) for name, p in inputs.items()}
        self.outputs = []
        self.results = {}
        self.timings = {}
        self.status = 'running'
        self.path = path
        self._start = time.time()

    def as_dict(self):
        return dict(command=self.command, version=__version__, config=self.config, seeds=self.seeds,
                    inputs=self.inputs, outputs=self.outputs, results=self.results, timings=self.timings,
                    status=self.status)

    def write(self):
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(self.path, 'w') as f:
            json.dump(self.as_dict(), f, indent=2, sort_keys=True, default=_json_default)
            f.write('\n')
        RunManifest.active = self if self.status == 'running' else None

    def add_output(self, path):
        self.outputs.append(path)
        return path

    def finalize(self, status='ok'):
        self.status = status
        self.timings['wall_seconds'] = time.time() - self._start
        self.write()


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError("Cannot serialize {!r}".format(value))


###########################################################################
#
#    Argument handling
#

def _nproc(args):
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        return args.threads
    return conf.n_processes if conf.use_multiprocessing else 1


def _from_flags(cls, *args, **kwargs):
    """ Build a config object; values it rejects are a usage error """
    try:
        return cls(*args, **kwargs)
    except ValueError as err:
        raise UsageError(str(err)) from err


def _prior_from_args(args, kind=None):
    return _from_flags(PriorSpec, kind or args.prior, args.m, args.seed)


def _oracle_from_args(args, objective=None):
    return _from_flags(OracleConfig, lr=args.lr, steps=args.steps, mode=MODES[args.mode],
                       objective=objective or OBJECTIVES[args.objective], seed=args.seed,
                       snap_when=args.snap_when)


def _out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _load_split(args):
    data_dir = resolve_data_dir(args.data)
    train, val = split_dataset(load_dataset(data_dir))
    if args.limit is not None:
        if args.limit < 1:
            raise UsageError("--limit must be at least 1")
        val = val[:args.limit]
    return data_dir, train, val


def _model_path(args, attr='model'):
    path = getattr(args, attr)
    return path if path else os.path.join(resolve_data_dir(args.data), MODEL_NAME)


def _print_reports(reports):
    print("{:<48s} {:>4s} {:>6s} {:>8s} {:>8s}".format('recipe', 'm', 'n', 'top1', 'knn'))
    for r in reports:
        print("{:<48s} {:>4d} {:>6d} {:>8.4f} {:>8.4f}".format(r.label, r.m, r.n_images, r.top1, r.knn_top1))


def _write_reports(manifest, args, reports, stem='report'):
    for i, report in enumerate(reports):
        suffix = '' if len(reports) == 1 else '_seed{}'.format(report.extra.get('seed', i))
        report.write_text(manifest.add_output(_out_path(args, '{}{}.txt'.format(stem, suffix))))
    write_reports_csv(reports, manifest.add_output(_out_path(args, stem + '.csv')))
    _print_reports(reports)


###########################################################################
#
#    Commands
#

def cmd_gen_data(args):
    out = resolve_data_dir(args.out)
    manifest = RunManifest('gen-data', dict(n=args.n, size=args.size), dict(seed=args.seed), {},
                           os.path.join(out, 'run_gen-data.json'))
    manifest.write()
    samples = gen_dataset(args.n, args.seed, args.size, _nproc(args))
    save_dataset(samples, out)
    manifest.add_output(out)
    manifest.finalize()
    print("wrote {} samples to {}".format(len(samples), out))


def cmd_train(args):
    data_dir = resolve_data_dir(args.data)
    jitter = dict(jitter_budgets=args.jitter_budgets) if args.jitter_budgets else {}
    config = _from_flags(TrainConfig, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                         prior=args.prior, m=args.m, budget_jitter=args.budget_jitter or bool(jitter),
                         prior_mix=args.prior_mix, **jitter)
    out = args.out if args.out else os.path.join(data_dir, MODEL_NAME)
    manifest = RunManifest('train', config.as_dict(), dict(seed=args.seed), dict(data=data_dir),
                           os.path.splitext(out)[0] + '_run.json')
    manifest.write()
    history = []
    params = train_toy(config, load_dataset(data_dir), history)
    save_params(params, manifest.add_output(out))
    manifest.results['history'] = history
    manifest.finalize()
    print("wrote weights to {} (best val top-1 {:.4f})".format(out, max(h['val_top1'] for h in history)))


def cmd_eval(args):
    prior = _prior_from_args(args)
    oracfg = _oracle_from_args(args) if args.oracle else None
    data_dir, train, val = _load_split(args)
    model = _model_path(args)
    config = dict(prior=prior.as_dict(), oracle=oracfg.as_dict() if oracfg else None, limit=args.limit)
    manifest = RunManifest('eval', config, dict(seed=args.seed), dict(data=data_dir, model=model),
                           _out_path(args, 'run_eval.json'))
    manifest.write()
    params = load_params(model)
    reports, summary, _ = experiments.evaluate_seeds(params, train, val, prior, oracfg, _nproc(args))
    _write_reports(manifest, args, reports)
    if len(reports) > 1:
        write_reports_csv([summary], manifest.add_output(_out_path(args, 'summary.csv')))
        print("{label}: top1 {top1_mean:.4f} +- {top1_spread:.4f} over {n_seeds} seeds".format(**summary))
    manifest.finalize()


def cmd_oracle(args):
    prior = _prior_from_args(args)
    oracfg = _oracle_from_args(args)
    data_dir, train, val = _load_split(args)
    model = _model_path(args)
    manifest = RunManifest('oracle', dict(prior=prior.as_dict(), oracle=oracfg.as_dict(), limit=args.limit),
                           dict(seed=args.seed), dict(data=data_dir, model=model), _out_path(args, 'run_oracle.json'))
    manifest.write()
    params = load_params(model)
    report, trajectories = experiments.evaluate_prior(params, train, val, prior, oracfg, _nproc(args))
    traj_dir = os.path.join(args.out, 'trajectories')
    os.makedirs(traj_dir, exist_ok=True)
    for sample, traj in zip(val, trajectories):
        path = os.path.join(traj_dir, 'traj_{:05d}.csv'.format(sample.index))
        traj.write_csv(path)
        manifest.add_output(path)
    _write_reports(manifest, args, [report])
    manifest.finalize()


def cmd_transfer(args):
    prior = _prior_from_args(args)
    oracfg = _oracle_from_args(args)
    data_dir, _, val = _load_split(args)
    manifest = RunManifest('transfer', dict(prior=prior.as_dict(), oracle=oracfg.as_dict(), limit=args.limit),
                           dict(seed=args.seed), dict(data=data_dir, source=args.source, target=args.target),
                           _out_path(args, 'run_transfer.json'))
    manifest.write()
    source = load_params(args.source)
    target = load_params(args.target)
    result, _ = experiments.evaluate_transfer(source, target, val, prior, oracfg, _nproc(args))
    row = dict(source=args.source, target=args.target, **result)
    write_reports_csv([row], manifest.add_output(_out_path(args, 'transfer.csv')))
    print("transfer {source} -> {target}: original {acc_original:.4f}, transferred {acc_transfer:.4f}, "
          "delta {delta:+.4f}".format(**row))
    manifest.finalize()


def cmd_ablate(args):
    # the ablations run against the isotropic baseline at the same budget
    _prior_from_args(args, kind='isotropic')
    oracfg = _oracle_from_args(args, objective='descent')
    data_dir, train, val = _load_split(args)
    model = _model_path(args)
    manifest = RunManifest('ablate', dict(kind=args.kind, m=args.m, oracle=oracfg.as_dict(), limit=args.limit),
                           dict(seed=args.seed), dict(data=data_dir, model=model),
                           _out_path(args, 'run_ablate_{}.json'.format(args.kind)))
    manifest.write()
    params = load_params(model)
    report, baseline = experiments.run_ablation(params, train, val, args.kind, args.m, args.seed, oracfg,
                                                _nproc(args))
    _write_reports(manifest, args, [baseline, report], stem='ablate_{}'.format(args.kind))
    manifest.finalize()


def cmd_rsg(args):
    for m in args.budgets:
        _from_flags(PriorSpec, 'isotropic', m)
    oracfg = _oracle_from_args(args)
    data_dir, _, val = _load_split(args)
    model = _model_path(args)
    manifest = RunManifest('rsg', dict(budgets=args.budgets, oracle=oracfg.as_dict(), limit=args.limit),
                           dict(seed=args.seed), dict(data=data_dir, model=model), _out_path(args, 'run_rsg.json'))
    manifest.write()
    params = load_params(model)
    summary, raw = experiments.run_rsg(params, val, args.budgets, oracfg, _nproc(args))
    write_reports_csv(summary, manifest.add_output(_out_path(args, 'rsg.csv')))
    write_reports_csv(raw, manifest.add_output(_out_path(args, 'rsg_tokens.csv')))
    for row in summary:
        print("m={m}: RSG {rsg_mean:+.4f} over {n_images} images ({n_excluded} tokens excluded)".format(**row))
    manifest.finalize()


def cmd_render(args):
    out = args.out if args.out else os.path.splitext(args.trajectory)[0] + '.svg'
    manifest = RunManifest('render', dict(k=args.k), {}, dict(trajectory=args.trajectory, image=args.image),
                           os.path.splitext(out)[0] + '_run.json')
    manifest.write()
    positions = read_placement_csv(args.trajectory)
    image = load_image(args.image)
    display.render_trajectory_svg(positions, image, args.k, manifest.add_output(out))
    manifest.finalize()


def cmd_bench(args):
    model = _model_path(args)
    inputs = dict(model=model)
    if args.with_accuracy:
        inputs['data'] = resolve_data_dir(args.data)
    manifest = RunManifest('bench', dict(budgets=args.budgets, repeats=args.repeats, batch_size=args.batch_size,
                                         parallel=args.parallel), {}, inputs, _out_path(args, 'run_bench.json'))
    manifest.write()
    params = load_params(model)
    rows = experiments.benchmark_throughput(params, args.budgets, args.repeats, args.batch_size,
                                            single_thread=not args.parallel)
    if args.with_accuracy:
        _, _, val = _load_split(args)
        for row, acc in zip(rows, experiments.accuracy_vs_budget(params, val, args.budgets)):
            row['top1'] = acc
    # throughput varies from run to run; keep it out of the deterministic outputs
    write_reports_csv(rows, _out_path(args, 'bench.csv'))
    manifest.results['throughput'] = rows
    for row in rows:
        print("m={:>4d} {:>10.1f} images/s".format(row['m'], row['images_per_sec']))
    manifest.finalize()


###########################################################################
#
#    Parser
#

def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help='Base random seed')
    common.add_argument('--threads', type=int, default=None, help='Worker processes for per-image work')
    common.add_argument('--out', default=None, help='Output file or directory')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', '-v', action='store_true', help='Log debugging detail')
    verbosity.add_argument('--quiet', '-q', action='store_true', help='Log warnings and errors only')
    return common


def _eval_parser():
    evaluation = argparse.ArgumentParser(add_help=False)
    evaluation.add_argument('--data', default=None, help='Dataset directory (default: $SPOT_DATA_DIR)')
    evaluation.add_argument('--model', default=None, help='Weight file (default: <data>/{})'.format(MODEL_NAME))
    evaluation.add_argument('--limit', type=int, default=None, help='Use only the first N validation images')
    evaluation.add_argument('--m', type=int, default=9, help='Token budget')
    evaluation.add_argument('--prior', choices=PRIOR_KINDS, default='isotropic', help='Placement prior')
    evaluation.add_argument('--lr', type=float, default=None, help='Oracle step size')
    evaluation.add_argument('--steps', type=int, default=None, help='Oracle steps')
    evaluation.add_argument('--mode', choices=sorted(MODES), default='subpixel', help='Oracle placement domain')
    evaluation.add_argument('--snap-when', choices=('every-step', 'final'), default='every-step',
                            help='When grid mode projects onto the patch grid')
    evaluation.add_argument('--objective', choices=sorted(OBJECTIVES), default='descent', help='Oracle objective')
    return evaluation


def build_parser():
    common = _common_parser()
    evaluation = _eval_parser()
    parser = _ArgumentParser(prog='subtok', description='Subpixel token placement experiments')
    parser.add_argument('--version', action='version', version='%(prog)s ' + str(__version__))
    commands = parser.add_subparsers(dest='command', parser_class=_ArgumentParser)
    commands.required = True

    p = commands.add_parser('gen-data', parents=[common], help='Generate the toy dataset')
    p.add_argument('--n', type=int, default=5000, help='Number of samples')
    p.add_argument('--size', type=int, default=64, help='Image side length')
    p.set_defaults(func=cmd_gen_data)

    p = commands.add_parser('train', parents=[common], help='Train the toy encoder')
    p.add_argument('--data', default=None)
    p.add_argument('--epochs', type=int, default=20)
    p.add_argument('--batch-size', type=int, default=32)
    p.add_argument('--lr', type=float, default=1e-3)
    p.add_argument('--m', type=int, default=64, help='Token budget, also used for validation')
    p.add_argument('--prior', choices=PRIOR_KINDS, default='isotropic')
    p.add_argument('--prior-mix', choices=PRIOR_KINDS, nargs='+', default=(),
                   help='Draw the prior of each batch from these kinds')
    p.add_argument('--budget-jitter', action='store_true', help='Draw a budget from {16, 32, 64} per batch')
    p.add_argument('--jitter-budgets', type=int, nargs='+', default=None,
                   help='Budgets to draw from per batch (implies --budget-jitter)')
    p.set_defaults(func=cmd_train)

    p = commands.add_parser('eval', parents=[common, evaluation], help='Evaluate a placement prior')
    p.add_argument('--oracle', action='store_true', help='Refine placements with the oracle search')
    p.set_defaults(func=cmd_eval)

    p = commands.add_parser('oracle', parents=[common, evaluation], help='Run oracle searches, save trajectories')
    p.set_defaults(func=cmd_oracle)

    p = commands.add_parser('transfer', parents=[common, evaluation], help='Transfer oracle placements')
    p.add_argument('--source', required=True, help='Weight file whose oracle finds the placements')
    p.add_argument('--target', required=True, help='Weight file evaluated at those placements')
    p.set_defaults(func=cmd_transfer)

    p = commands.add_parser('ablate', parents=[common, evaluation], help='Adversarial prior/oracle ablations')
    p.add_argument('kind', choices=experiments.ABLATIONS)
    p.set_defaults(func=cmd_ablate)

    p = commands.add_parser('rsg', parents=[common, evaluation], help='Relative saliency gain of the oracle')
    p.add_argument('--budgets', type=int, nargs='+', default=[9, 16, 36, 64])
    p.set_defaults(func=cmd_rsg)

    p = commands.add_parser('render', parents=[common], help='Render a trajectory CSV as SVG')
    p.add_argument('trajectory')
    p.add_argument('image')
    p.add_argument('--k', type=int, default=None, help='Window size (default: conf.window)')
    p.set_defaults(func=cmd_render)

    p = commands.add_parser('bench', parents=[common], help='Forward throughput per token budget')
    p.add_argument('--data', default=None)
    p.add_argument('--model', default=None)
    p.add_argument('--limit', type=int, default=None)
    p.add_argument('--budgets', type=int, nargs='+', default=[8, 16, 32, 64])
    p.add_argument('--repeats', type=int, default=5)
    p.add_argument('--batch-size', type=int, default=64)
    p.add_argument('--parallel', action='store_true', help='Use the default BLAS thread pool')
    p.add_argument('--with-accuracy', action='store_true', help='Add top-1 accuracy on the validation split')
    p.set_defaults(func=cmd_bench)
    return parser


def _error_line(code, err):
    message = " ".join(str(err).split())
    return "error code={} kind={} message={}".format(code, type(err).__name__, message)


def _setup_logging(args):
    level = conf.default_logging_level
    if getattr(args, 'verbose', False):
        level = 'DEBUG'
    elif getattr(args, 'quiet', False):
        level = 'WARNING'
    logging.basicConfig(stream=sys.stderr, level=level, format='%(asctime)s %(name)s %(levelname)s %(message)s')


def _fail(code, err):
    print(_error_line(code, err), file=sys.stderr)
    if RunManifest.active is not None:
        RunManifest.active.results['error'] = _error_line(code, err)
        RunManifest.active.finalize('failed')
    return code


def main(argv=None):
    """ Entry point of the subtok command; returns the exit code """
    parser = build_parser()
    RunManifest.active = None
    try:
        args = parser.parse_args(argv)
        if getattr(args, 'out', None) is None and args.command not in ('gen-data', 'train', 'render'):
            args.out = os.path.join('subtok_out', args.command)
        if args.command == 'render' and args.k is None:
            args.k = conf.window
        _setup_logging(args)
        args.func(args)
    except UsageError as err:
        return _fail(EXIT_USAGE, err)
    except NumericalError as err:
        return _fail(EXIT_NUMERIC, err)
    except (DataFormatError, FileNotFoundError, ValueError, OSError) as err:
        return _fail(EXIT_DATA, err)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
