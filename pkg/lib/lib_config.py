"""
Experiment-config ingestion.

An experiment config is a JSON object; which keys are allowed depends on the subcommand.
Command-line flags override file values. Every problem found is reported in one ConfigError.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from lib.lib_common import ConfigError
from lib.lib_distributions import (
    EnvDistribution,
    ImmigrationDistribution,
    env_from_spec,
    imm_from_spec,
)
from lib.lib_popcount import PopCount

log = logging.getLogger(__name__)

COMMANDS: tuple[str, ...] = ('simulate', 'validate', 'classify', 'phase', 'neuts', 'diagnose')

ALLOWED_KEYS: dict[str, set[str]] = {
    'simulate': {'env', 'imm', 'horizon', 'x0', 'seed'},
    'validate': {'matrix', 'samples', 'seed', 'per_individual_env', 'state_cap'},
    'classify': {'a', 'beta', 'env', 'imm', 'seed'},
    'phase': {'a_grid', 'beta_grid', 'seed'},
    'neuts': {'env', 'imm', 'p', 'n', 'reps', 'horizon', 'seed'},
    'diagnose': {'n', 'reps', 'horizon', 'm', 'replications', 'b', 'series_n', 'seed'},
}

DEFAULTS: dict[str, dict] = {
    'simulate': {
        'env': {'type': 'uniform01'},
        'imm': {'type': 'inverse_square'},
        'horizon': 1000,
        'x0': 1,
        'seed': 0,
    },
    'validate': {
        'matrix': [
            {'env': env, 'imm': imm, 'n': n}
            for env in (
                {'type': 'point_mass', 'beta': 0.3},
                {'type': 'point_mass', 'beta': 0.7},
                {'type': 'finite_table', 'atoms': [[0.2, 0.5], [0.8, 0.5]]},
            )
            for imm in ({'type': 'deterministic', 'k': 2}, {'type': 'finite_table', 'pmf': [[1, 0.5], [2, 0.5]]})
            for n in (2, 5, 8)
        ],
        'samples': 100_000,
        'seed': 0,
        'per_individual_env': False,
        'state_cap': None,
    },
    'classify': {'a': None, 'beta': None, 'env': None, 'imm': None, 'seed': 0},
    'phase': {
        'a_grid': [0.5, 1.0, 2.0],
        'beta_grid': [round(0.05 * k, 2) for k in range(1, 20)],
        'seed': 0,
    },
    'neuts': {
        'env': {'type': 'point_mass', 'beta': 0.5},
        'imm': {'type': 'deterministic', 'k': 1},
        'p': 0.5,
        'n': 3,
        'reps': 100_000,
        'horizon': 100_000,
        'seed': 0,
    },
    'diagnose': {
        'n': 200,
        'reps': 2000,
        'horizon': 20_000,
        'm': 10,
        'replications': 4,
        'b': 0.9,
        'series_n': 500,
        'seed': 0,
    },
}


@dataclass(frozen=True)
class ValidationCell:
    env: EnvDistribution
    imm: ImmigrationDistribution
    n: int


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    seed: int = 0
    env: EnvDistribution | None = None
    imm: ImmigrationDistribution | None = None
    horizon: int = 0
    x0: PopCount = PopCount(n=1)
    n: int = 0
    reps: int = 0
    m: int = 0
    p: float = 0.5
    a: float | None = None
    beta: float | None = None
    a_grid: tuple[float, ...] = ()
    beta_grid: tuple[float, ...] = ()
    matrix: tuple[ValidationCell, ...] = ()
    samples: int = 0
    per_individual_env: bool = False
    state_cap: int | None = None
    replications: int = 0
    b: float = 0.9
    series_n: int = 0
    raw: dict = field(default_factory=dict, compare=False)


def read_config_file(config_path: Path) -> dict:
    if not config_path.exists():
        raise ConfigError(f'Error: config file does not exist, ``{config_path}``')
    try:
        payload = json.loads(config_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as err:
        raise ConfigError(f'Error: config file is not valid JSON, ``{config_path}``: {err}')
    if not isinstance(payload, dict):
        raise ConfigError(f'Error: config file must hold a JSON object, ``{config_path}``')
    return payload


def _int_field(merged: dict, key: str, minimum: int, problems: list[str]) -> int:
    value = merged.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        problems.append(f'``{key}`` must be an integer, got ``{value!r}``')
        return minimum
    if value < minimum:
        problems.append(f'``{key}`` must be >= {minimum}, got ``{value}``')
    return value


def _open_unit_field(merged: dict, key: str, problems: list[str]) -> float:
    value = merged.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f'``{key}`` must be a number, got ``{value!r}``')
        return 0.5
    if not (0.0 < value < 1.0):
        problems.append(f'``{key}`` must lie in (0,1), got ``{value}``')
    return float(value)


def _grid_field(merged: dict, key: str, problems: list[str], unit: bool) -> tuple[float, ...]:
    value = merged.get(key)
    if not isinstance(value, list) or not value:
        problems.append(f'``{key}`` must be a nonempty list of numbers')
        return ()
    grid: list[float] = []
    for item in value:
        if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
            problems.append(f'``{key}`` entries must be numbers, got ``{item!r}``')
            continue
        if unit and not (0.0 < item < 1.0):
            problems.append(f'``{key}`` entries must lie in (0,1), got ``{item}``')
        if not unit and not item > 0.0:
            problems.append(f'``{key}`` entries must be positive, got ``{item}``')
        grid.append(float(item))
    return tuple(grid)


def _laws(
    merged: dict, problems: list[str], required: bool
) -> tuple[EnvDistribution | None, ImmigrationDistribution | None]:
    env, imm = None, None
    for key in ('env', 'imm'):
        spec = merged.get(key)
        if spec is None:
            if required:
                problems.append(f'``{key}`` is required')
            continue
        try:
            if key == 'env':
                env = env_from_spec(spec)
            else:
                imm = imm_from_spec(spec)
        except ConfigError as err:
            problems.append(str(err))
    return (env, imm)


def _matrix(merged: dict, problems: list[str]) -> tuple[ValidationCell, ...]:
    cells_raw = merged.get('matrix')
    if not isinstance(cells_raw, list) or not cells_raw:
        problems.append('``matrix`` must be a nonempty list of {env, imm, n} cells')
        return ()
    cells: list[ValidationCell] = []
    for index, cell in enumerate(cells_raw):
        if not isinstance(cell, dict) or set(cell) != {'env', 'imm', 'n'}:
            problems.append(f'matrix cell ``{index}`` must have exactly the keys env, imm, n')
            continue
        env, imm = _laws(cell, problems, required=True)
        n = _int_field(cell, 'n', 1, problems)
        if env is not None and imm is not None:
            cells.append(ValidationCell(env=env, imm=imm, n=n))
    return tuple(cells)


def load_experiment_config(command: str, config_path: Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """
    Merges defaults, the config file, and flag overrides (None-valued overrides are ignored),
    then validates the result for `command`.
    """
    log.info(f'::: loading ``{command}`` config ----------')
    if command not in COMMANDS:
        raise ConfigError(f'Error: unknown command ``{command}``')
    raw = read_config_file(config_path) if config_path is not None else {}
    unknown = set(raw) - ALLOWED_KEYS[command]
    if unknown:
        log.error(f'unknown config keys, ``{sorted(unknown)}``')
        raise ConfigError(f'Error: unknown keys for ``{command}``: ``{sorted(unknown)}``')
    merged = {**DEFAULTS[command], **raw}
    merged.update({key: value for key, value in (overrides or {}).items() if value is not None})
    log.debug(f'merged config, ``{merged}``')

    problems: list[str] = []
    values: dict = {'command': command, 'raw': merged}
    values['seed'] = _int_field(merged, 'seed', 0, problems)
    if values['seed'] >= 2**64:
        problems.append(f'``seed`` must fit in 64 bits, got ``{values["seed"]}``')

    match command:
        case 'simulate':
            values['env'], values['imm'] = _laws(merged, problems, required=True)
            values['horizon'] = _int_field(merged, 'horizon', 0, problems)
            x0 = _int_field(merged, 'x0', 0, problems)
            values['x0'] = PopCount.from_int(x0) if 0 <= x0 <= 2**53 else PopCount(n=1)
        case 'validate':
            values['matrix'] = _matrix(merged, problems)
            values['samples'] = _int_field(merged, 'samples', 100, problems)
            values['per_individual_env'] = bool(merged.get('per_individual_env'))
            if merged.get('state_cap') is not None:
                values['state_cap'] = _int_field(merged, 'state_cap', 1, problems)
        case 'classify':
            values['env'], values['imm'] = _laws(merged, problems, required=False)
            has_laws = values['env'] is not None and values['imm'] is not None
            has_example = merged.get('a') is not None and merged.get('beta') is not None
            if has_example:
                a = merged['a']
                if isinstance(a, bool) or not isinstance(a, (int, float)) or not a > 0:
                    problems.append(f'``a`` must be a positive number, got ``{a!r}``')
                else:
                    values['a'] = float(a)
                values['beta'] = _open_unit_field(merged, 'beta', problems)
            elif not has_laws:
                problems.append('classify needs either --a and --beta or both env and imm specs')
        case 'phase':
            values['a_grid'] = _grid_field(merged, 'a_grid', problems, unit=False)
            values['beta_grid'] = _grid_field(merged, 'beta_grid', problems, unit=True)
        case 'neuts':
            values['env'], values['imm'] = _laws(merged, problems, required=True)
            values['p'] = _open_unit_field(merged, 'p', problems)
            values['n'] = _int_field(merged, 'n', 1, problems)
            values['reps'] = _int_field(merged, 'reps', 1, problems)
            values['horizon'] = _int_field(merged, 'horizon', 1, problems)
        case 'diagnose':
            values['n'] = _int_field(merged, 'n', 2, problems)
            values['reps'] = _int_field(merged, 'reps', 2, problems)
            values['horizon'] = _int_field(merged, 'horizon', 2, problems)
            values['m'] = _int_field(merged, 'm', 0, problems)
            values['replications'] = _int_field(merged, 'replications', 1, problems)
            values['b'] = _open_unit_field(merged, 'b', problems)
            values['series_n'] = _int_field(merged, 'series_n', 2, problems)

    if problems:
        message = 'Error: invalid config; ' + '; '.join(problems)
        log.error(message)
        raise ConfigError(message)
    log.info('ok / config loaded')
    return ExperimentConfig(**values)
