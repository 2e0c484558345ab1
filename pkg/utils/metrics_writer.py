"""
CSV and JSON persistence for round metrics.

CSV columns (frozen):
    scheme,seed,round,a,b_norm,eta,dmse,dmse_cells,qmse,decode_success,
    aggregate_error_norm,test_accuracy[,wall_time]

dmse is in units of the normalized update; dmse_cells divides it by the
lattice second moment.

Rows are sorted by (scheme, seed, round), floats use %.10g and values that
do not apply to a scheme are empty cells.
"""
import json
import os
import subprocess
import sys
from dataclasses import asdict
from datetime import datetime

import numpy as np
import pandas as pd

CSV_COLUMNS = [
    'scheme', 'seed', 'round', 'a', 'b_norm', 'eta', 'dmse', 'dmse_cells', 'qmse',
    'decode_success', 'aggregate_error_norm', 'test_accuracy',
]
WALL_TIME_COLUMN = 'wall_time'
FLOAT_FORMAT = '%.10g'
MANIFEST_SUFFIX = '.manifest.json'
PACKAGE_VERSION = '0.1.0'


def metrics_frame(records, record_wall_time=False):
    """
    Build the frozen-schema DataFrame for a list of RoundMetrics.

    Args:
        records: RoundMetrics instances
        record_wall_time: Keep the wall_time column

    Returns:
        pandas DataFrame sorted by (scheme, seed, round)
    """
    columns = CSV_COLUMNS + ([WALL_TIME_COLUMN] if record_wall_time else [])
    frame = pd.DataFrame([asdict(r) for r in records], columns=CSV_COLUMNS + [WALL_TIME_COLUMN])
    frame = frame[columns].sort_values(['scheme', 'seed', 'round'], kind='mergesort').reset_index(drop=True)
    # nullable bool keeps N/A cells empty instead of turning the column into floats
    frame['decode_success'] = frame['decode_success'].astype('boolean')
    return frame


def write_metrics_csv(records, path, record_wall_time=False):
    """Write RoundMetrics to CSV; returns the DataFrame written."""
    frame = metrics_frame(records, record_wall_time)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep='', lineterminator='\n')
    return frame


def read_metrics_csv(path):
    """Read a metrics CSV back with the schema's dtypes."""
    frame = pd.read_csv(path, dtype={'scheme': str, 'a': str}, keep_default_na=True)
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return frame


def version_string():
    """git describe output when available, the package version otherwise."""
    try:
        described = subprocess.run(
            ['git', 'describe', '--tags', '--always', '--dirty'],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if described.returncode == 0 and described.stdout.strip():
            return described.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return PACKAGE_VERSION


def manifest_path(csv_path):
    root, _ = os.path.splitext(csv_path)
    return root + MANIFEST_SUFFIX


def write_manifest(csv_path, cfg, extra=None, argv=None):
    """
    Write the JSON run manifest next to a CSV.

    Args:
        csv_path: The CSV the manifest describes
        cfg: ExperimentConfig used for the run
        extra: Optional dict merged into the manifest (e.g. sweep parameter)
        argv: Command line (default: sys.argv)

    Returns:
        Manifest path
    """
    manifest = {
        'csv': os.path.basename(csv_path),
        'version': version_string(),
        'created_at': datetime.now().isoformat(timespec='seconds'),
        'command_line': list(sys.argv if argv is None else argv),
        'schemes': list(cfg.schemes),
        'seeds': list(cfg.seeds),
        'config': cfg.to_dict(),
        'config_toml': cfg.to_toml(),
    }
    if extra:
        manifest.update(extra)
    path = manifest_path(csv_path)
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def summarize(frame, group_by=('label', 'scheme', 'round'), values=('test_accuracy', 'dmse', 'dmse_cells', 'qmse')):
    """
    Mean and standard error per group.

    Args:
        frame: Metrics DataFrame (several seeds)
        group_by: Grouping columns present in the frame
        values: Columns to aggregate (absent ones are skipped)

    Returns:
        DataFrame with <value>_mean, <value>_stderr and n_seeds columns
    """
    group_by = [c for c in group_by if c in frame.columns]
    values = [v for v in values if v in frame.columns]
    grouped = frame.groupby(group_by, sort=True)
    summary = grouped[list(values)].agg(['mean', 'std', 'count'])
    out = pd.DataFrame(index=summary.index)
    for value in values:
        count = summary[(value, 'count')]
        out[f'{value}_mean'] = summary[(value, 'mean')]
        out[f'{value}_stderr'] = (summary[(value, 'std')] / np.sqrt(count)).where(count > 1, 0.0)
    out['n_seeds'] = grouped.size()
    return out.reset_index()
