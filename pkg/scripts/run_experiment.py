"""
Run one experiment config: every scheme over every seed.

Writes <output_dir>/<name>.csv with one row per (scheme, seed, round) and a
JSON manifest next to it that is enough to re-run the experiment.

Uses shared utilities for:
- Seeded FedAvg runs from simulation.federated
- Standardized logging and progress tracking
- Centralized configuration
"""
import os
import traceback
from datetime import datetime

from simulation.federated import run_jobs
from utils.config import MAX_WORKERS, load_experiment_config
from utils.logging_setup import configure_logging
from utils.metrics_writer import write_manifest, write_metrics_csv
from utils.progress_tracker import ProgressTracker

# Configure logging
logger = configure_logging('run_experiment')


def job_progress(progress_tracker):
    """Callback that advances a ProgressTracker by one finished (scheme, seed) job, or None."""
    if progress_tracker is None:
        return None

    def done(job):
        _, scheme, seed = job
        progress_tracker.increment(1, f"Finished {scheme} seed {seed}")
    return done


def run_config(cfg, name, max_workers=MAX_WORKERS, progress_tracker=None, extra=None):
    """
    Run all schemes and seeds of a config and persist the CSV and manifest.

    Returns:
        Path of the written CSV
    """
    jobs = [(cfg, scheme, seed) for scheme in cfg.schemes for seed in cfg.seeds]
    results = run_jobs(jobs, max_workers, job_progress(progress_tracker), show_progress=True)
    records = [record for job_records in results for record in job_records]

    csv_path = os.path.join(cfg.output_dir, f"{name}.csv")
    write_metrics_csv(records, csv_path, cfg.record_wall_time)
    write_manifest(csv_path, cfg, extra=extra)
    logger.info(f"Wrote {len(records)} rows to {csv_path}")
    return csv_path


def main(cfg=None, config_path=None, name=None, max_workers=MAX_WORKERS):
    """
    Args:
        cfg: Loaded ExperimentConfig (takes precedence over config_path)
        config_path: TOML file to load when cfg is None
        name: CSV base name (default: config file stem or 'run')
        max_workers: Pool width

    Returns:
        True on success, False otherwise
    """
    try:
        start_time = datetime.now()
        logger.info(f"Script started at {start_time.strftime('%Y-%m-%d %H:%M:%S')}")

        if cfg is None:
            cfg = load_experiment_config(config_path)
        if name is None:
            name = os.path.splitext(os.path.basename(cfg.source_path))[0] if cfg.source_path else "run"

        progress = ProgressTracker("Experiment Run", len(cfg.schemes) * len(cfg.seeds), output_dir=cfg.output_dir)
        progress.update(0, f"Running {len(cfg.schemes)} scheme(s) x {len(cfg.seeds)} seed(s)")

        csv_path = run_config(cfg, name, max_workers, progress)
        print(f"\nWrote metrics to {csv_path}")
        progress.complete(f"Wrote {csv_path}")

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
