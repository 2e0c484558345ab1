"""
FedCPU simulator command line.

    python app.py run --config configs/desk.toml
    python app.py sweep --config configs/desk.toml --param M --values 2,5,10,20
    python app.py sweep --config configs/desk.toml --param rho --values 0.25,0.5,1,2
    python app.py validate
    python app.py emit-plot-data output/sweep_M

Exit codes: 0 success, 1 runtime or validation failure, 2 bad configuration.
"""
import argparse
import sys

from dotenv import load_dotenv

# Load environment variables before any module reads them
load_dotenv()

from commands import EXIT_FAILURE, register_all_commands  # noqa: E402


def build_parser():
    parser = argparse.ArgumentParser(
        prog='fedcpu',
        description='Federated learning with over-the-air lattice aggregation: simulator and experiment harness.',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)
    register_all_commands(subparsers)
    return parser


def run_cli(argv=None):
    """
    Parse arguments and dispatch to the selected subcommand.

    Args:
        argv: Argument list (default: sys.argv[1:])

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(run_cli())
