import argparse
import json
import logging
import sys
import time

import numpy as np

from . import prox
from .config import OUTPUT_FORMATS, ConfigError, load_config
from .experiments import min_pilot_length, run_sweep
from .log import create_logger
from .metrics import calibrate_epsilon, nmse_db, recovery_success
from .model import InvalidArgument, generate_scenario
from .results import (prepare_output_dir, write_manifest, write_min_lengths,
                      write_sweep)
from .solvers import REGISTRY, get_solver


logger = create_logger(__name__, level=logging.INFO)

EXIT_OK = 0
EXIT_ERROR = 2


def parse_pilot_range(text):
    """
    'a:b' is the inclusive range a..b, 'a,b,c' an explicit list.
    """
    try:
        if ':' in text:
            start, stop = (int(x) for x in text.split(':'))
            return list(range(start, stop + 1))
        return [int(x) for x in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f'invalid pilot length range: {text}')


def parse_solvers(text):
    return [tag.strip() for tag in text.split(',') if tag.strip()]


def cmd_run(args):
    pilot_lengths = args.l_range if args.l_range is not None else args.l
    overrides = {
        'n_devices': args.n,
        'n_active': args.k,
        'n_antennas': args.m,
        'pilot_lengths': pilot_lengths,
        'snr_db': args.snr,
        'trials': args.trials,
        'base_seed': args.seed,
        'solvers': args.solvers,
        'node_limit': args.node_limit,
        'output_dir': args.out,
        'output_format': args.format,
        'k_range': args.k_range,
    }
    config = load_config(args.config, args.preset, overrides)
    prepare_output_dir(config.output_dir)
    spec = config.to_spec()
    logger.info(f'running {config.name} into {config.output_dir}')
    started = time.perf_counter()

    if config.is_min_length_search:
        solver = spec.solvers[0]
        rows = min_pilot_length(
            spec, config.k_range, config.success_target, solver=solver,
            workers=config.workers, progress=not args.quiet,
        )
        files = write_min_lengths(config.name, rows, config.output_dir, config.output_format)
        point_trials = {str(L): spec.trials for L in spec.pilot_lengths}
    else:
        sweep = run_sweep(spec, workers=config.workers, progress=not args.quiet)
        files = write_sweep(config.name, sweep, config.output_dir, config.output_format)
        point_trials = {
            f'{row.pilot_len}/{row.solver}': int(row.trials)
            for row in sweep.aggregates.itertuples()
        }
    seeds = {L: spec.seeds(L) for L in spec.pilot_lengths}
    write_manifest(
        config, config.output_dir, files, seeds, point_trials,
        time.perf_counter() - started
    )
    return EXIT_OK


def summarize(scenario, result):
    """
    Summary of one solve as a JSON-friendly dict.
    """
    truth = scenario.ground_truth
    summary = result.to_dict()
    summary.update({
        'n_devices': scenario.n_devices,
        'n_active': scenario.n_active,
        'n_antennas': scenario.n_antennas,
        'pilot_len': scenario.pilot_len,
        'snr_db': scenario.snr_db,
        'seed': scenario.seed,
        'true_support': list(scenario.active_set),
        'success': recovery_success(result.estimate, truth),
        'nmse_db': nmse_db(result.estimate, truth) if np.any(truth) else None,
    })
    if scenario.pilot_len <= scenario.n_active:
        summary['note'] = (
            f'pilot length {scenario.pilot_len} is below the minimum K+1={scenario.n_active + 1} '
            'needed to recover every K-sparse activity pattern'
        )
    return summary


def format_summary(summary):
    lines = [
        f"solver:      {summary['solver']} ({summary['status']})",
        f"instance:    N={summary['n_devices']} K={summary['n_active']} "
        f"M={summary['n_antennas']} L={summary['pilot_len']} "
        f"snr={summary['snr_db']} seed={summary['seed']}",
        f"support:     {summary['support']} (true {summary['true_support']})",
        f"objective:   {summary['objective']}",
        f"success:     {str(summary['success']).lower()}",
        f"nmse_db:     {summary['nmse_db']}",
        f"residual:    {summary['residual_fro']:.3e}",
        f"nodes:       {summary['nodes_explored']}",
        f"runtime_ms:  {summary['runtime_ms']:.1f}",
    ]
    if 'note' in summary:
        lines.append(f"note:        {summary['note']}")
    return '\n'.join(lines)


def cmd_solve(args, solver_tag=None):
    tag = solver_tag or args.solver
    scenario = generate_scenario(args.n, args.m, args.l, args.k, args.snr, args.seed)
    epsilon = calibrate_epsilon(scenario.noise_var, args.l, args.m)
    params = {'node_limit': args.node_limit} if tag == 'bnb' else {}
    solver = get_solver(tag, **params)
    started = time.perf_counter()
    try:
        result = solver(scenario, epsilon)
    except (prox.ConvergenceError, np.linalg.LinAlgError, ValueError) as e:
        result = solver.recover_from(scenario, e, started)
        if result is None:
            print(f'jadce {args.command}: {tag} failed: {e}', file=sys.stderr)
            return EXIT_ERROR
        logger.warning(f'{tag} failed ({e}); reporting its best iterate')
    summary = summarize(scenario, result)
    if args.json:
        print(json.dumps(summary, indent=2))
    else:
        print(format_summary(summary))
    return EXIT_OK


def _add_instance_args(parser, solver_choice=True):
    parser.add_argument('--n', type=int, default=30, help='number of devices N')
    parser.add_argument('--k', type=int, default=5, help='number of active devices K')
    parser.add_argument('--m', type=int, default=2, help='number of antennas M')
    parser.add_argument('--l', type=int, default=6, help='pilot length L')
    parser.add_argument('--snr', type=float, default=None, help='SNR in dB, noiseless when omitted')
    parser.add_argument('--seed', type=int, default=0)
    parser.add_argument('--node-limit', type=int, default=200_000)
    parser.add_argument('--json', action='store_true', help='print the summary as JSON')
    if solver_choice:
        parser.add_argument('--solver', default='bnb', choices=sorted(REGISTRY))


def build_parser():
    parser = argparse.ArgumentParser(
        prog='jadce',
        description='Group-sparse activity detection and channel estimation experiments.'
    )
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='run a Monte-Carlo sweep and write curve files')
    run.add_argument('--config', help='JSON file with run settings')
    run.add_argument('--preset', help='figure preset: fig1, fig2, fig3 or fig4')
    run.add_argument('--n', type=int)
    run.add_argument('--k', type=int)
    run.add_argument('--m', type=int)
    run.add_argument('--l', type=int, nargs='+', help='one or more pilot lengths')
    run.add_argument('--l-range', type=parse_pilot_range, help="pilot lengths as 'a:b' or 'a,b,c'")
    run.add_argument('--k-range', type=parse_pilot_range, help='search the minimum pilot length for these K')
    run.add_argument('--snr', type=float)
    run.add_argument('--trials', type=int)
    run.add_argument('--seed', type=int)
    run.add_argument('--solvers', type=parse_solvers, help='comma separated solver tags')
    run.add_argument('--node-limit', type=int)
    run.add_argument('--out', help='output directory')
    run.add_argument('--format', choices=OUTPUT_FORMATS)
    run.add_argument('--quiet', action='store_true', help='no progress bars')

    solve = sub.add_parser('solve', help='solve a single generated instance')
    _add_instance_args(solve)

    oracle = sub.add_parser('oracle', help='brute-force a single small instance')
    _add_instance_args(oracle, solver_choice=False)
    oracle.set_defaults(n=10, k=2, l=4)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == 'run':
            return cmd_run(args)
        if args.command == 'solve':
            return cmd_solve(args)
        return cmd_solve(args, solver_tag='oracle')
    except (ConfigError, InvalidArgument, NotImplementedError, OSError) as e:
        print(f'jadce {args.command}: error: {e}', file=sys.stderr)
        return EXIT_ERROR
