"""
Centralized logging configuration for the FedCPU scripts.
"""
import logging
import os
from datetime import datetime

from utils.config import LOG_LEVEL, LOG_TO_FILE, OUTPUT_DIRECTORY

# Library modules log under this package name
LIBRARY_LOGGER = 'simulation'


def configure_logging(script_name, level=None, log_to_file=None, output_dir=None):
    """
    Configure logging for a script and for the simulation library.

    Args:
        script_name: Name of the script for log filename
        level: Logging level (default: FEDCPU_LOG_LEVEL)
        log_to_file: Whether to log to a file in addition to console (default: FEDCPU_LOG_TO_FILE)
        output_dir: Root of the logs directory (default: FEDCPU_OUTPUT_DIR)

    Returns:
        Logger instance
    """
    if level is None:
        level = getattr(logging, LOG_LEVEL, logging.INFO)
    if log_to_file is None:
        log_to_file = LOG_TO_FILE

    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    handlers = []

    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    handlers.append(console_handler)

    if log_to_file:
        logs_dir = os.path.join(output_dir or OUTPUT_DIRECTORY, 'logs')
        os.makedirs(logs_dir, exist_ok=True)

        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        log_filename = os.path.join(logs_dir, f'{script_name}_{timestamp}.log')

        file_handler = logging.FileHandler(log_filename)
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        handlers.append(file_handler)

    for name in (script_name, LIBRARY_LOGGER):
        target = logging.getLogger(name)
        target.setLevel(level)
        # Remove existing handlers (in case logging is reconfigured)
        for handler in target.handlers[:]:
            target.removeHandler(handler)
            handler.close()
        for handler in handlers:
            target.addHandler(handler)

    logger = logging.getLogger(script_name)
    logger.info(f"Logging configured for {script_name}")
    return logger
