"""
Shared helpers used across the lib modules and the entry script.
Contains the exception hierarchy, logging setup, and small serialization helpers.
"""

import json
import logging
import math
import os
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

LOG_FORMAT = '[%(asctime)s] %(levelname)s [%(module)s-%(funcName)s()::%(lineno)d] %(message)s'
LOG_DATEFMT = '%d/%b/%Y %H:%M:%S'


class CatastropheSimError(Exception):
    """
    Base class for errors the entry script maps to exit codes.
    """

    exit_code: int = 1


class ConfigError(CatastropheSimError):
    """
    Raised when an experiment config (file or flags) is invalid.
    """

    exit_code = 2


class ValidationFailure(CatastropheSimError):
    """
    Raised when the oracle suite finds an identity that does not hold.
    """

    exit_code = 3


def configure_logging(log_dir: Path, level_name: str) -> Path:
    """
    Sets up file logging in the house format.
    Returns the log-file path.
    Called by catastrophe_sim.py at startup.
    """
    log_dir.mkdir(parents=True, exist_ok=True)  # creates the log-directory if it doesn't exist
    log_file_path: Path = log_dir / 'catastrophe_sim.log'
    level: int = getattr(logging, level_name.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
        filename=log_file_path,
    )
    return log_file_path


def determine_thread_count(requested: int | None) -> int:
    """
    Returns the worker-thread count: the explicit request, else `CATSIM__THREADS`, else machine parallelism.
    """
    if requested is not None:
        if requested < 1:
            raise ConfigError(f'Error: --threads must be >= 1, got ``{requested}``')
        return requested
    envar_threads: str | None = os.environ.get('CATSIM__THREADS')
    if envar_threads:
        try:
            threads = int(envar_threads)
        except ValueError:
            raise ConfigError(f'Error: CATSIM__THREADS must be an integer, got ``{envar_threads}``')
        if threads >= 1:
            return threads
    return os.cpu_count() or 1


def float_text(value: float) -> str:
    """
    Serializes a float losslessly and deterministically (shortest round-trip repr).
    NaN becomes an empty field.
    """
    if math.isnan(value):
        return ''
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return repr(float(value))


def jsonable(value: object) -> object:
    """
    Converts numpy scalars/arrays to plain Python and non-finite floats to their `float_text` form.
    """
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [jsonable(item) for item in value.tolist()]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return float_text(value)
    return value


def json_line(payload: dict) -> str:
    return json.dumps(jsonable(payload), sort_keys=True, allow_nan=False)


def write_json(path: Path, payload: dict) -> None:
    """
    Writes a JSON document with sorted keys so identical payloads give identical bytes.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + '\n', encoding='utf-8')
    log.debug(f'wrote json, ``{path}``')
    return
