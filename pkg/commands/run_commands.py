"""
`run` subcommand: one experiment config, every scheme and seed.
"""
from commands import add_config_arguments, load_config, report
from utils.config import MAX_WORKERS
from utils.script_runner import run_script_with_output


def register_run_command(subparsers):
    """
    Register the run subcommand.

    Args:
        subparsers: Subparsers of the top-level parser
    """
    parser = subparsers.add_parser('run', help='Run a single experiment config')
    add_config_arguments(parser)
    parser.add_argument('--name', help='Base name of the output CSV (default: config file stem)')
    parser.add_argument('--workers', type=int, default=MAX_WORKERS, help='Parallel (scheme, seed) runs')
    parser.set_defaults(handler=handle_run)


def handle_run(args):
    cfg, code = load_config(args)
    if cfg is None:
        return code
    status, output = run_script_with_output(
        'scripts.run_experiment', cfg=cfg, name=args.name, max_workers=args.workers
    )
    return report(status, output)
