"""
Aggregate run CSVs into mean and standard-error series for plotting.

Each input CSV becomes one label: the sweep value recorded in its manifest,
or the file name otherwise. The output has one row per (label, scheme, round)
with mean/stderr of test accuracy, DMSE (absolute and per lattice cell) and
QMSE over seeds.
"""
import glob
import json
import os
import traceback

import pandas as pd

from utils.config import OUTPUT_DIRECTORY
from utils.logging_setup import configure_logging
from utils.metrics_writer import FLOAT_FORMAT, manifest_path, read_metrics_csv, summarize

# Configure logging
logger = configure_logging('emit_plot_data')


def collect_inputs(inputs):
    """Expand directories to the CSVs they contain (manifests and summaries excluded)."""
    paths = []
    for item in inputs:
        if os.path.isdir(item):
            paths.extend(sorted(glob.glob(os.path.join(item, '*.csv'))))
        else:
            paths.append(item)
    return [p for p in paths if not os.path.basename(p).startswith('plot_data')]


def series_label(csv_path):
    """Sweep value from the manifest when present, file stem otherwise."""
    manifest = manifest_path(csv_path)
    if os.path.exists(manifest):
        with open(manifest) as f:
            sweep = json.load(f).get('sweep')
        if sweep:
            return f"{sweep['param']}={sweep['value']}"
    return os.path.splitext(os.path.basename(csv_path))[0]


def build_plot_data(paths):
    """
    Args:
        paths: Metrics CSV paths

    Returns:
        Summary DataFrame sorted by (label, scheme, round)
    """
    frames = []
    for path in paths:
        frame = read_metrics_csv(path)
        frame.insert(0, 'label', series_label(path))
        frames.append(frame)
    if not frames:
        raise ValueError("no metrics CSVs to aggregate")
    return summarize(pd.concat(frames, ignore_index=True))


def main(inputs=None, output=None):
    """
    Args:
        inputs: CSV files and/or directories (default: the output directory)
        output: Destination CSV (default: <output>/plot_data.csv)

    Returns:
        True on success, False otherwise
    """
    try:
        paths = collect_inputs(inputs or [OUTPUT_DIRECTORY])
        logger.info(f"Aggregating {len(paths)} metrics file(s)")
        summary = build_plot_data(paths)

        output = output or os.path.join(OUTPUT_DIRECTORY, 'plot_data.csv')
        os.makedirs(os.path.dirname(os.path.abspath(output)), exist_ok=True)
        summary.to_csv(output, index=False, float_format=FLOAT_FORMAT, na_rep='', lineterminator='\n')
        logger.info(f"Wrote {len(summary)} series points to {output}")
        print(f"Wrote plot data to {output}")
        return True

    except Exception as e:
        logger.error(f"Error: {e}")
        logger.error(traceback.format_exc())
        print(f"Error: {e}")
        return False


if __name__ == "__main__":
    main()
