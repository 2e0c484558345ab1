"""
Commands package initialization.
Register all subcommands of the FedCPU command line and share the config
loading that maps configuration problems to exit code 2.
"""
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from simulation.errors import ConfigError

EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def register_all_commands(subparsers):
    """
    Register all subcommands with the argument parser.

    Args:
        subparsers: The object returned by ArgumentParser.add_subparsers()
    """
    from commands.run_commands import register_run_command
    from commands.sweep_commands import register_sweep_command
    from commands.validate_commands import register_validate_command
    from commands.plot_data_commands import register_plot_data_command

    register_run_command(subparsers)
    register_sweep_command(subparsers)
    register_validate_command(subparsers)
    register_plot_data_command(subparsers)


def parse_overrides(items):
    """
    Turn KEY=VALUE strings into an overrides dict. Values are read as TOML
    literals (numbers, booleans, arrays, quoted strings) and fall back to
    plain strings.
    """
    overrides = {}
    for item in items or []:
        key, sep, raw = item.partition('=')
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form KEY=VALUE")
        try:
            value = tomllib.loads(f"value = {raw.strip()}")['value']
        except tomllib.TOMLDecodeError:
            value = raw.strip()
        overrides[key.strip()] = value
    return overrides


def load_config(args):
    """
    Load the experiment config named by --config with --set overrides.

    Returns:
        Tuple of (ExperimentConfig or None, exit code)
    """
    from utils.config import load_experiment_config

    try:
        return load_experiment_config(args.config, parse_overrides(args.set)), EXIT_SUCCESS
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return None, EXIT_CONFIG_ERROR


def report(status, output):
    """Print captured script output and map the status to an exit code."""
    print(output)
    return EXIT_SUCCESS if status == "SUCCESS" else EXIT_FAILURE


def add_config_arguments(parser):
    parser.add_argument('--config', required=True, help='Experiment TOML file')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='Override a setting, e.g. --set channel.snr=5 (repeatable)')
