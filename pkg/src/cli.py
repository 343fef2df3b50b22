"""
cli.py

Command line front end. Every subcommand maps onto one library call:

    synthesize  -> hazegen.build_corpus
    train       -> pipeline.train
    dehaze      -> pipeline.dehaze_one
    evaluate    -> pipeline.evaluate + metrics.write_report
    gradcheck   -> gradcheck.run_suite
    bench       -> pipeline.bench

run(argv) returns the process exit code: 0 on success, 1 on domain or
I/O errors (message on stderr), 2 on usage errors.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from src.errors import LCANetError
import src.gradcheck as gradcheck
import src.hazegen as hazegen
import src.imageio as imageio
import src.metrics as metrics
from src.model import Model
import src.pipeline as pipeline
from src.tensor import PRECISIONS, DEFAULT_PRECISION


logger = logging.getLogger(__name__)

THREADS_ENV = 'LCA_THREADS'
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError as valueerror:
        raise argparse.ArgumentTypeError(f'<{text}> is not an integer') from valueerror
    if value < 1:
        raise argparse.ArgumentTypeError(f'<{text}> must be >= 1')
    return value


def resolve_threads(flag: Optional[int], environ=None) -> int:
    '''
    --threads wins, then the LCA_THREADS environment variable, then 1
    '''
    if flag is not None:
        return flag
    environ = os.environ if environ is None else environ
    value = environ.get(THREADS_ENV)
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError as valueerror:
        raise LCANetError(f'{THREADS_ENV}=<{value}> is not an integer') from valueerror
    if threads < 1:
        raise LCANetError(f'{THREADS_ENV}=<{value}> must be >= 1')
    return threads


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--threads', type=_positive_int, default=None,
                        help=f'worker threads (default: ${THREADS_ENV} or 1)')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true', help='debug logging')
    verbosity.add_argument('-q', '--quiet', action='store_true', help='warnings only')

    parser = argparse.ArgumentParser(prog='lcanet', description='Light convolutional autoencoder for image dehazing')
    subparsers = parser.add_subparsers(dest='command', metavar='command')

    synth = subparsers.add_parser('synthesize', parents=[common], help='build a hazy corpus from clear images')
    synth.add_argument('--clear-dir', required=True)
    synth.add_argument('--out', required=True)
    synth.add_argument('--levels', help='JSON file of haze levels (default: 5 A x 7 beta)')
    synth.add_argument('--seed', type=int, default=0)
    synth.add_argument('--test-fraction', type=float, default=0.0)
    synth.add_argument('--depth-dir', help='directory of <stem>.npy depth maps')
    synth.add_argument('--format', choices=imageio.FORMATS, default='png')

    train = subparsers.add_parser('train', parents=[common], help='train a model on a corpus manifest')
    train.add_argument('--manifest', required=True)
    train.add_argument('--out-dir', required=True)
    train.add_argument('--epochs', type=int, default=pipeline.DEFAULT_EPOCHS)
    train.add_argument('--batch', type=int, default=pipeline.DEFAULT_BATCH_SIZE)
    train.add_argument('--seed', type=int, default=0)
    train.add_argument('--resolution', type=int, default=pipeline.DEFAULT_RESOLUTION)
    train.add_argument('--checkpoint-every', type=int, default=pipeline.DEFAULT_CHECKPOINT_EVERY)
    train.add_argument('--precision', choices=sorted(PRECISIONS), default=DEFAULT_PRECISION)
    train.add_argument('--split', default='train', help="manifest split, 'all' for every record")
    train.add_argument('--lr', type=float, default=pipeline.DEFAULT_LR)
    train.add_argument('--resume', help='checkpoint to continue from')

    dehaze = subparsers.add_parser('dehaze', parents=[common], help='dehaze a single image')
    dehaze.add_argument('--model', required=True)
    dehaze.add_argument('--input', required=True)
    dehaze.add_argument('--output', required=True)
    dehaze.add_argument('--resolution', type=int, default=None)

    evaluate = subparsers.add_parser('evaluate', parents=[common], help='score a model on a manifest')
    source = evaluate.add_mutually_exclusive_group(required=True)
    source.add_argument('--model')
    source.add_argument('--identity', action='store_true', help='score the hazy images as they are')
    evaluate.add_argument('--manifest', required=True)
    evaluate.add_argument('--report', required=True, help='CSV report path')
    evaluate.add_argument('--json', nargs='?', const='', default=None,
                          help='also write JSON (default path: report with .json suffix)')
    evaluate.add_argument('--split', default=None)
    evaluate.add_argument('--ssim-mode', choices=metrics.SSIM_MODES, default='luma')
    evaluate.add_argument('--figures', help='directory for hazy | dehazed | clear panels')
    evaluate.add_argument('--resolution', type=int, default=None)

    check = subparsers.add_parser('gradcheck', parents=[common], help='finite-difference gradient checks')
    check.add_argument('--layer', choices=gradcheck.CHECKS + ('all',), default='all')
    check.add_argument('--tolerance', type=float, default=None)
    check.add_argument('--seed', type=int, default=0)

    bench = subparsers.add_parser('bench', parents=[common], help='time dehazing over a manifest')
    bench.add_argument('--model', required=True)
    bench.add_argument('--manifest', required=True)
    bench.add_argument('--split', default=None)
    bench.add_argument('--resolution', type=int, default=None)
    bench.add_argument('--csv', help='also write the table as CSV')
    return parser


def _configure_logging(args):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _split(value):
    return None if value in (None, 'all') else value


def cmd_synthesize(args, threads):
    levels = hazegen.load_levels(args.levels) if args.levels else None
    manifest = hazegen.build_corpus(args.clear_dir, args.out, levels, seed=args.seed,
                                    test_fraction=args.test_fraction, depth_dir=args.depth_dir,
                                    image_format=args.format, threads=threads)
    print(f'{len(manifest)} hazy images, manifest {Path(args.out) / hazegen.MANIFEST_NAME}')
    return 0


def cmd_train(args, threads):
    cfg = pipeline.TrainConfig(manifest=args.manifest, out_dir=args.out_dir, epochs=args.epochs,
                               batch_size=args.batch, seed=args.seed,
                               checkpoint_every=args.checkpoint_every, resolution=args.resolution,
                               precision=args.precision, threads=threads,
                               split=_split(args.split), resume=args.resume, lr=args.lr)
    _, logs = pipeline.train(cfg)
    print(f'final loss {logs[-1].mean_loss:.6g} after {len(logs)} epochs, '
          f'model {Path(args.out_dir) / pipeline.FINAL_CHECKPOINT}')
    return 0


def cmd_dehaze(args, threads):
    model = Model.load(args.model)
    result = pipeline.dehaze_one(model, args.input, args.output, args.resolution)
    print(f'{result.output_path} {result.width}x{result.height} {result.dehaze_time:.4f}s')
    return 0


def cmd_evaluate(args, threads):
    if args.identity:
        model, dehazer = None, pipeline.IdentityDehazer()
    else:
        model, dehazer = Model.load(args.model), None
    records, summary = pipeline.evaluate(args.manifest, model, split=_split(args.split),
                                         ssim_mode=args.ssim_mode, dehazer=dehazer,
                                         figures_dir=args.figures, threads=threads,
                                         resolution=args.resolution)
    json_path = None
    if args.json is not None:
        json_path = args.json or Path(args.report).with_suffix('.json')
    metrics.write_report(records, args.report, json_path)
    print(f'{summary["count"]} images, psnr {metrics.format_psnr(summary["psnr_mean"])} dB, '
          f'ssim {summary["ssim_mean"]:.4f}, report {args.report}')
    return 0


def cmd_gradcheck(args, threads):
    results = gradcheck.run_suite(args.layer, args.tolerance, args.seed)
    for result in results:
        print(result)
    return 0 if all(result.passed for result in results) else 1


def cmd_bench(args, threads):
    model = Model.load(args.model)
    frame = pipeline.bench(args.manifest, model, split=_split(args.split), resolution=args.resolution)
    first = frame.iloc[0]
    height, width = pipeline.Dehazer(model, args.resolution).working_size(int(first['height']),
                                                                          int(first['width']))
    print(f'model {args.model}: {model.parameter_count()} parameters')
    print(pipeline.layer_table(model, height, width).to_string(index=False))
    print()
    print(frame.to_string(index=False, na_rep='-'))
    for dataset in metrics.REFERENCE_RESULTS:
        print(f'\n{dataset} ({metrics.REFERENCE_LABEL})')
        print(metrics.reference_frame(dataset).to_string(na_rep='-'))
    if args.csv:
        frame.to_csv(args.csv, index=False)
    return 0


COMMANDS = {
    'synthesize': cmd_synthesize,
    'train': cmd_train,
    'dehaze': cmd_dehaze,
    'evaluate': cmd_evaluate,
    'gradcheck': cmd_gradcheck,
    'bench': cmd_bench,
}


def run(argv: List[str]) -> int:
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        return exit_request.code if isinstance(exit_request.code, int) else 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    _configure_logging(args)
    try:
        threads = resolve_threads(args.threads)
        return COMMANDS[args.command](args, threads)
    except LCANetError as error:
        print(f'error: {error.message}', file=sys.stderr)
        return 1
    except OSError as error:
        print(f'error: {error}', file=sys.stderr)
        return 1


def main():
    sys.exit(run(sys.argv[1:]))
