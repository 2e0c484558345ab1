"""
`emit-plot-data` subcommand: mean and standard-error series from run CSVs.
"""
from commands import report
from utils.script_runner import run_script_with_output


def register_plot_data_command(subparsers):
    """
    Register the emit-plot-data subcommand.

    Args:
        subparsers: Subparsers of the top-level parser
    """
    parser = subparsers.add_parser('emit-plot-data', help='Aggregate run CSVs into plot series')
    parser.add_argument('inputs', nargs='*', help='CSV files or directories (default: output directory)')
    parser.add_argument('--output', help='Destination CSV (default: <output>/plot_data.csv)')
    parser.set_defaults(handler=handle_emit_plot_data)


def handle_emit_plot_data(args):
    status, output = run_script_with_output('scripts.emit_plot_data', inputs=args.inputs, output=args.output)
    return report(status, output)
