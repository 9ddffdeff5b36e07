"""
Command-line front end.

Exit codes: 0 success, 1 input or I/O error (usage errors included),
2 non-convergence or a failed equilibrium/tolerance check.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from ncgg.config import configure_logging, get_settings
from ncgg.core import UtilityFunction
from ncgg.db_manager import RunStore
from ncgg.discrete import DiscreteCgpInstance, cgp_fptas, exact_dp
from ncgg.dynamics import DynamicsConfig, InitialState, Schedule, is_eps_ne, run_dynamics
from ncgg.errors import ConvergenceError, NcggError, ResourceLimitError
from ncgg.generators import random_bipartite, random_tree
from ncgg.io import (
    allocation_to_dict, instance_to_dict, load_allocation, load_instance, poa_frame, save_allocation,
    save_instance, write_poa_report, write_trace,
)
from ncgg.lab import growth_exponent, poa_star_instance, poa_star_row, strong_uniqueness_check, weak_uniqueness_check
from ncgg.waterfill import CgpInstance, water_fill

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FAILED = 2


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the input-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _utility(text):
    try:
        return UtilityFunction.parse(text)
    except NcggError as e:
        raise argparse.ArgumentTypeError(str(e))


def _seed(args):
    return args.seed if args.seed is not None else get_settings().seed


def _store(args):
    if args.store is None:
        return None
    return RunStore(args.store or None)


def _print_json(document):
    print(json.dumps(document, indent=2))


def cmd_gen(args):
    seed = _seed(args)
    if args.kind == 'star':
        instance = poa_star_instance(args.n, args.utility or UtilityFunction.power(0.5))
    elif args.kind == 'random-bipartite':
        instance = random_bipartite(
            args.goods, args.agents, args.edge_prob, seed, utility=args.utility, alpha_max=args.alpha_max
        )
    else:
        instance = random_tree(args.size, seed, utility=args.utility, alpha_max=args.alpha_max)

    if args.out:
        save_instance(instance, args.out)
        logger.info("%s instance with %d goods and %d agents written to %s", args.kind, instance.n, instance.m, args.out)
    else:
        _print_json(instance_to_dict(instance))
    return EXIT_OK


def _fmt_list(values):
    return ','.join(f"{v:.6g}" for v in values)


def cmd_solve_cgp(args):
    if args.discrete is None:
        solution = water_fill(CgpInstance(tuple(args.alphas), args.budget))
        print(f"level {solution.level:.6g}")
        print(f"x {_fmt_list(solution.x)}")
        return EXIT_OK

    inst = DiscreteCgpInstance(tuple(args.alphas), args.discrete, args.utility or UtilityFunction.power(0.5))
    approx = cgp_fptas(inst, args.eps)
    print(f"value {approx.value:.6f}")
    print(f"selection {','.join(str(c) for c in approx.counts)}")
    try:
        exact = exact_dp(inst)
    except ResourceLimitError as e:
        logger.info("exact DP skipped: %s", e)
    else:
        print(f"exact {exact.value:.6f}")
    return EXIT_OK


def cmd_dynamics(args):
    instance = load_instance(args.instance)
    config = DynamicsConfig.from_settings(
        epsilon=args.eps,
        schedule=args.schedule,
        initial_state=args.initial_state,
        max_rounds=args.max_rounds,
        seed=_seed(args),
        k=args.k,
    )
    result = run_dynamics(instance, config)
    trace = result.trace

    if args.trace_out:
        write_trace(trace, args.trace_out)
    if args.out:
        save_allocation(instance, result.alloc, args.out)
    else:
        _print_json(allocation_to_dict(instance, result.alloc))

    worst_gap = None
    ok = False
    if trace.converged:
        check = is_eps_ne(instance, result.alloc, config.epsilon)
        worst_gap, ok = check.worst_gap, check.ok
        logger.info("worst gap %.6g at %s (epsilon %g)", check.worst_gap, check.worst_agent, config.epsilon)

    store = _store(args)
    if store is not None:
        store.add_dynamics_run({
            'instance_name': Path(args.instance).stem,
            'epsilon': config.epsilon,
            'schedule': config.schedule.value,
            'seed': config.seed,
            'k': trace.k,
            'rounds': len(trace.rounds),
            'total_moves': trace.total_moves,
            'converged': trace.converged,
            'worst_gap': worst_gap,
        })
    return EXIT_OK if ok else EXIT_FAILED


def cmd_verify(args):
    instance = load_instance(args.instance)
    alloc = load_allocation(args.allocation)
    check = is_eps_ne(instance, alloc, args.eps)
    print(f"worst_gap {check.worst_gap:.6g}")
    print(f"worst_agent {check.worst_agent}")
    print("ok" if check.ok else "not ok")
    return EXIT_OK if check.ok else EXIT_FAILED


def cmd_poa(args):
    epsilon = args.eps if args.eps is not None else get_settings().epsilon
    reports = [poa_star_row(n, args.utility, epsilon) for n in args.n]

    if args.out:
        write_poa_report(reports, args.out)
    else:
        print(poa_frame(reports).to_csv(index=False, float_format='%.12g'), end='')
    if len(reports) >= 2:
        logger.info("growth exponent %.4f", growth_exponent(args.n, [r.ratio_lower_bound for r in reports]))

    store = _store(args)
    if store is not None:
        for r in reports:
            store.add_poa_record({
                'n': r.n,
                'utility': args.utility.spec,
                'epsilon': epsilon,
                'welfare_ne': r.welfare_ne,
                'welfare_common': r.welfare_reference,
                'ratio': r.ratio,
                'clamped': r.clamped,
            })
    return EXIT_OK


def cmd_uniqueness(args):
    instance = load_instance(args.instance)
    seed = _seed(args) or 0
    seeds = range(seed, seed + args.trials)
    check = strong_uniqueness_check if args.strong else weak_uniqueness_check
    report = check(instance, args.trials, args.eps, seeds=seeds, refine=args.refine)

    print(f"trials {report.trials}")
    print(f"k {report.k}")
    print(f"max_level_discrepancy {report.max_level_discrepancy:.6g}")
    print(f"max_allocation_discrepancy {report.max_allocation_discrepancy:.6g}")
    print(f"tolerance {report.tolerance:.6g}")
    if report.failed_trials:
        print(f"failed_trials {','.join(str(s) for s in report.failed_trials)}")
    print("within tolerance" if report.within_tolerance else "outside tolerance")

    store = _store(args)
    if store is not None:
        store.add_uniqueness_run({
            'instance_name': Path(args.instance).stem,
            'strong': report.strong,
            'trials': report.trials,
            'k': report.k,
            'max_level_discrepancy': report.max_level_discrepancy,
            'max_allocation_discrepancy': report.max_allocation_discrepancy,
            'failed_trials': report.failed_trials,
        })
    return EXIT_OK if report.within_tolerance else EXIT_FAILED


def build_parser():
    parser = _Parser(prog='ncgg', description="Networked common goods games: solvers and experiments")
    parser.add_argument('--log-level', default=None, help="Logging level (default: settings log_level)")
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen', help="Generate an instance file")
    gen.add_argument('kind', choices=['star', 'random-bipartite', 'random-tree'])
    gen.add_argument('--n', type=int, default=4, help="Star size")
    gen.add_argument('--goods', type=int, default=5)
    gen.add_argument('--agents', type=int, default=5)
    gen.add_argument('--edge-prob', type=float, default=0.5)
    gen.add_argument('--size', type=int, default=9, help="Tree nodes (goods plus agents)")
    gen.add_argument('--utility', type=_utility, default=None, help="kind:param; random per agent if omitted")
    gen.add_argument('--alpha-max', type=float, default=1.0)
    gen.add_argument('--seed', type=int, default=None, help="Seed (CLI > env:NCGG_SEED)")
    gen.add_argument('--out', default=None)
    gen.set_defaults(handler=cmd_gen)

    solve = commands.add_parser('solve-cgp', help="Solve a single-agent common goods problem")
    solve.add_argument('--alphas', type=_float_list, required=True)
    solve.add_argument('--budget', type=float, default=1.0)
    solve.add_argument('--discrete', type=int, default=None, metavar='B', help="Number of unit atoms")
    solve.add_argument('--utility', type=_utility, default=None)
    solve.add_argument('--eps', type=float, default=0.1)
    solve.set_defaults(handler=cmd_solve_cgp)

    dynamics = commands.add_parser('dynamics', help="Run best-response dynamics on an instance")
    dynamics.add_argument('instance')
    dynamics.add_argument('--eps', type=float, default=None)
    dynamics.add_argument('--schedule', choices=[s.value for s in Schedule], default=None)
    dynamics.add_argument('--initial-state', choices=[s.value for s in InitialState], default=None)
    dynamics.add_argument('--max-rounds', type=int, default=None)
    dynamics.add_argument('--k', type=int, default=None, help="Override the resolution derived from eps")
    dynamics.add_argument('--seed', type=int, default=None)
    dynamics.add_argument('--trace-out', default=None)
    dynamics.add_argument('--out', default=None, help="Final allocation document (stdout if omitted)")
    dynamics.add_argument('--store', nargs='?', const='', default=None, metavar='URL')
    dynamics.set_defaults(handler=cmd_dynamics)

    verify = commands.add_parser('verify', help="Check an allocation for an epsilon-equilibrium")
    verify.add_argument('instance')
    verify.add_argument('allocation')
    verify.add_argument('--eps', type=float, required=True)
    verify.set_defaults(handler=cmd_verify)

    poa = commands.add_parser('poa', help="Price-of-anarchy rows of the star family")
    poa.add_argument('--n', type=_int_list, required=True, help="Comma-separated star sizes")
    poa.add_argument('--utility', type=_utility, default=UtilityFunction.power(0.5))
    poa.add_argument('--eps', type=float, default=None)
    poa.add_argument('--out', default=None)
    poa.add_argument('--store', nargs='?', const='', default=None, metavar='URL')
    poa.set_defaults(handler=cmd_poa)

    uniqueness = commands.add_parser('uniqueness', help="Equilibrium uniqueness suite")
    uniqueness.add_argument('instance')
    uniqueness.add_argument('--trials', type=int, default=10)
    uniqueness.add_argument('--eps', type=float, default=1.0)
    uniqueness.add_argument('--strong', action='store_true')
    uniqueness.add_argument('--refine', type=int, default=None)
    uniqueness.add_argument('--seed', type=int, default=None)
    uniqueness.add_argument('--store', nargs='?', const='', default=None, metavar='URL')
    uniqueness.set_defaults(handler=cmd_uniqueness)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_INPUT

    try:
        configure_logging(args.log_level)
        return args.handler(args)
    except ConvergenceError as e:
        logger.error("%s", e)
        return EXIT_FAILED
    except (NcggError, OSError, json.JSONDecodeError) as e:
        logger.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
