"""
`sweep` subcommand: antenna, lattice-scale or scheme sweeps.
"""
import sys

from commands import EXIT_CONFIG_ERROR, add_config_arguments, load_config, report
from utils.config import MAX_WORKERS
from utils.script_runner import run_script_with_output


def register_sweep_command(subparsers):
    """
    Register the sweep subcommand.

    Args:
        subparsers: Subparsers of the top-level parser
    """
    parser = subparsers.add_parser('sweep', help='Sweep one parameter over a list of values')
    add_config_arguments(parser)
    parser.add_argument('--param', required=True, choices=['M', 'rho', 'scheme'], help='Parameter to sweep')
    parser.add_argument('--values', required=True, help='Comma-separated values, e.g. 2,5,10,20')
    parser.add_argument('--workers', type=int, default=MAX_WORKERS, help='Parallel runs')
    parser.set_defaults(handler=handle_sweep)


def handle_sweep(args):
    from simulation.errors import ConfigError
    from scripts.sweep import sweep_configs

    cfg, code = load_config(args)
    if cfg is None:
        return code
    try:
        sweep_configs(cfg, args.param, args.values)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    status, output = run_script_with_output(
        'scripts.sweep', cfg=cfg, param=args.param, values=args.values, max_workers=args.workers
    )
    return report(status, output)
