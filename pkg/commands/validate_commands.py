"""
`validate` subcommand: the property and oracle suite plus the desk-scale
experiment checks.
"""
from commands import load_config, report
from utils.config import DESK_CONFIG_PATH, MAX_WORKERS
from utils.script_runner import run_script_with_output


def register_validate_command(subparsers):
    """
    Register the validate subcommand.

    Args:
        subparsers: Subparsers of the top-level parser
    """
    parser = subparsers.add_parser('validate', help='Run the property/oracle and experiment checks')
    parser.add_argument('--seed', type=int, default=0, help='Master seed for the property checks')
    parser.add_argument('--check', action='append', dest='checks', metavar='NAME',
                        help='Run only this check (repeatable)')
    parser.add_argument('--quick', action='store_true',
                        help='Reduced sample sizes; experiment checks only when named with --check')
    parser.add_argument('--config', default=DESK_CONFIG_PATH,
                        help='Experiment TOML for the experiment checks (default: configs/desk.toml)')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a setting of that config (repeatable)')
    parser.add_argument('--workers', type=int, default=MAX_WORKERS, help='Parallel seeds in the experiment checks')
    parser.set_defaults(handler=handle_validate)


def handle_validate(args):
    cfg, code = load_config(args)
    if cfg is None:
        return code
    status, output = run_script_with_output(
        'scripts.validate_properties',
        seed=args.seed, checks=args.checks, quick=args.quick, cfg=cfg, max_workers=args.workers,
    )
    return report(status, output)
