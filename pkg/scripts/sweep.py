"""
Parameter sweeps over antennas M, lattice scale rho or the scheme.

Every sweep value gets its own CSV and manifest under
<output_dir>/sweep_<param>/, so emit_plot_data can read them back with the
value as the series label. All (value, scheme, seed) runs share one pool.
"""
import os
import traceback
from dataclasses import replace
from datetime import datetime

from simulation.federated import SCHEMES, run_jobs
from utils.config import MAX_WORKERS, apply_overrides, load_experiment_config
from utils.logging_setup import configure_logging
from utils.metrics_writer import write_manifest, write_metrics_csv
from utils.progress_tracker import ProgressTracker
from scripts.run_experiment import job_progress

# Configure logging
logger = configure_logging('sweep')

# Sweep parameter -> (override key, value parser)
SWEEP_PARAMETERS = {
    'M': ('antennas', int),
    'rho': ('lattice.rho', float),
    'scheme': ('schemes', lambda value: (value,)),
}


def parse_values(param, values):
    """Split a comma-separated value list and convert it for the parameter."""
    if param not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {param!r}; expected one of {', '.join(SWEEP_PARAMETERS)}")
    if isinstance(values, str):
        values = [v.strip() for v in values.split(',') if v.strip()]
    if not values:
        raise ValueError("no sweep values given")
    _, convert = SWEEP_PARAMETERS[param]
    if param == 'scheme':
        unknown = [v for v in values if v not in SCHEMES]
        if unknown:
            raise ValueError(f"unknown scheme(s) {unknown}")
    return [(str(v), convert(v)) for v in values]


def sweep_configs(cfg, param, values):
    """
    One validated config per sweep value.

    Returns:
        List of (label, ExperimentConfig)
    """
    parsed = parse_values(param, values)
    key, _ = SWEEP_PARAMETERS[param]
    points = []
    for label, value in parsed:
        point = apply_overrides(cfg, {key: value})
        point = replace(point, output_dir=os.path.join(cfg.output_dir, f"sweep_{param}"))
        points.append((label, point.validate()))
    return points


def main(cfg=None, config_path=None, param='M', values='2,5,10,20', max_workers=MAX_WORKERS):
    """
    Args:
        cfg: Loaded ExperimentConfig (takes precedence over config_path)
        config_path: TOML file to load when cfg is None
        param: 'M', 'rho' or 'scheme'
        values: Comma-separated values or a list
        max_workers: Pool width

    Returns:
        True on success, False otherwise
    """
    try:
        start_time = datetime.now()
        logger.info(f"Sweep over {param} started at {start_time.strftime('%Y-%m-%d %H:%M:%S')}")

        if cfg is None:
            cfg = load_experiment_config(config_path)
        points = sweep_configs(cfg, param, values)

        jobs, owners = [], []
        for label, point in points:
            for scheme in point.schemes:
                for seed in point.seeds:
                    jobs.append((point, scheme, seed))
                    owners.append(label)

        progress = ProgressTracker(f"Sweep {param}", len(jobs), output_dir=cfg.output_dir)
        progress.update(0, f"Sweeping {param} over {', '.join(label for label, _ in points)}")

        results = run_jobs(jobs, max_workers, job_progress(progress), show_progress=True)
        for label, point in points:
            records = [r for owner, job_records in zip(owners, results) if owner == label for r in job_records]
            csv_path = os.path.join(point.output_dir, f"{param}={label}.csv")
            write_metrics_csv(records, csv_path, point.record_wall_time)
            write_manifest(csv_path, point, extra={'sweep': {'param': param, 'value': label}})
            logger.info(f"{param}={label}: wrote {len(records)} rows to {csv_path}")
            print(f"Wrote {csv_path}")

        progress.complete(f"Sweep over {param} finished ({len(points)} values)")
        duration = datetime.now() - start_time
        logger.info(f"Total execution time: {duration.total_seconds():.2f} seconds")
        return True

    except Exception as e:
        logger.error(f"Error: {e}")
        logger.error(traceback.format_exc())
        print(f"Error: {e}")

        if 'progress' in locals():
            progress.set_error(str(e))

        return False


if __name__ == "__main__":
    main(config_path=os.path.join("configs", "desk.toml"))
