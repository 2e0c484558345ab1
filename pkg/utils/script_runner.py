"""
Script runner for the FedCPU command line.

Imports a script module, runs its main() with keyword arguments and
captures everything it prints so the caller can report it in one block.
"""
import importlib
import traceback
from contextlib import redirect_stderr, redirect_stdout
from datetime import datetime
from io import StringIO

# Lines emitted by a logging formatter already carry a timestamp
_LOGGED_MARKERS = (' - DEBUG - ', ' - INFO - ', ' - WARNING - ', ' - ERROR - ', ' - CRITICAL - ')


def _now():
    return datetime.now().strftime('%Y-%m-%d %H:%M:%S')


def _timestamp_lines(text):
    lines = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if any(marker in line for marker in _LOGGED_MARKERS):
            lines.append(line)
        else:
            lines.append(f"[{_now()}] {line}")
    return lines


def run_script_with_output(script_path, **kwargs):
    """
    Run a script by its module path and capture its output.

    Args:
        script_path: Module path to the script (e.g., "scripts.run_experiment")
        **kwargs: Forwarded to the script's main()

    Returns:
        Tuple of (status, output) where status is "SUCCESS" or "ERROR"
    """
    stdout_buffer = StringIO()
    stderr_buffer = StringIO()
    header = [f"[{_now()}] Starting execution of {script_path}..."]

    try:
        module = importlib.import_module(script_path)
        if not hasattr(module, 'main'):
            raise AttributeError(f"Module {script_path} has no main() function")

        with redirect_stdout(stdout_buffer), redirect_stderr(stderr_buffer):
            result = module.main(**kwargs)

        output = header + _timestamp_lines(stdout_buffer.getvalue() + stderr_buffer.getvalue())
        if result is True:
            output.append(f"[{_now()}] Script execution completed successfully!")
            return "SUCCESS", '\n'.join(output)
        output.append(f"[{_now()}] Script execution failed with an error.")
        return "ERROR", '\n'.join(output)

    except Exception as e:
        output = header + [f"[{_now()}] Exception: {e}", traceback.format_exc(), f"[{_now()}] Output before error:"]
        output += _timestamp_lines(stdout_buffer.getvalue() + stderr_buffer.getvalue())
        output.append(f"[{_now()}] Script execution failed with an exception.")
        return "ERROR", '\n'.join(output)
