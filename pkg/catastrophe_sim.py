"""
See README.md for info.

Info...
- Subcommands: simulate, validate, classify, phase, neuts, diagnose.
- The work of each subcommand is in `lib/lib_commands.py`; this file parses flags, loads the
  experiment config, and maps errors to exit codes (0 ok, 2 config error, 3 validation failure).

Usage...
`$ uv run ./catastrophe_sim.py simulate --config ./experiment.json --seed 7 --out ./output/trajectory.csv`
`$ uv run ./catastrophe_sim.py classify --a 1 --beta 0.5`
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from dotenv import find_dotenv, load_dotenv

from lib import lib_commands
from lib.lib_common import CatastropheSimError, ConfigError, configure_logging, determine_thread_count, jsonable
from lib.lib_config import load_experiment_config

## load envars ------------------------------------------------------
this_file_path = Path(__file__).resolve()
dotenv_path: str = find_dotenv(usecwd=True)
if dotenv_path:
    load_dotenv(dotenv_path, override=False)

## set up logging ---------------------------------------------------
LOG_LEVEL: str = os.environ.get('CATSIM__LOG_LEVEL', 'INFO')
LOG_DIR: Path = Path(os.environ.get('CATSIM__LOG_DIR', str(this_file_path.parent / 'logs')))
configure_logging(LOG_DIR, LOG_LEVEL)
log = logging.getLogger(__name__)

DEFAULT_OUTPUTS: dict[str, str] = {
    'phase': 'output/phase.csv',
    'diagnose': 'output/diagnose',
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Simulates and classifies binomial-catastrophe Markov chains')
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add_common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument('--config', type=Path, default=None, help='Path to a JSON experiment config')
        sub.add_argument('--seed', type=int, default=None, help='Master seed (overrides the config)')
        sub.add_argument('--threads', type=int, default=None, help='Worker threads (default: CATSIM__THREADS or cpu count)')
        sub.add_argument('--out', type=Path, default=None, help='Output file (or directory, for diagnose)')
        sub.add_argument('--format', choices=['csv', 'jsonl'], default='csv', help='Trajectory output format')

    simulate = subparsers.add_parser('simulate', help='Simulate one trajectory')
    add_common(simulate)
    simulate.add_argument('--horizon', type=int, default=None)

    validate = subparsers.add_parser('validate', help='Run the oracle identities')
    add_common(validate)
    validate.add_argument('--samples', type=int, default=None)
    validate.add_argument(
        '--per-individual-env', action='store_true', default=None, help='Inject the one-beta-per-individual mistake'
    )

    classify = subparsers.add_parser('classify', help='Classify a regime')
    add_common(classify)
    classify.add_argument('--a', type=float, default=None)
    classify.add_argument('--beta', type=float, default=None)

    phase = subparsers.add_parser('phase', help='Write the (a, beta) phase grid')
    add_common(phase)

    neuts = subparsers.add_parser('neuts', help='Check the Neuts coupling and gap law')
    add_common(neuts)
    neuts.add_argument('--p', type=float, default=None)
    neuts.add_argument('--n', type=int, default=None)
    neuts.add_argument('--reps', type=int, default=None)

    diagnose = subparsers.add_parser('diagnose', help='Write recurrence diagnostics for the three regimes')
    add_common(diagnose)
    diagnose.add_argument('--n', type=int, default=None)
    diagnose.add_argument('--reps', type=int, default=None)
    diagnose.add_argument('--horizon', type=int, default=None)
    return parser


def collect_overrides(args: argparse.Namespace) -> dict:
    """
    Flag values that override config-file keys; unset flags are None and ignored downstream.
    """
    names = ('seed', 'horizon', 'samples', 'per_individual_env', 'a', 'beta', 'p', 'n', 'reps')
    return {name: getattr(args, name, None) for name in names}


def run(args: argparse.Namespace) -> dict | Path:
    cfg = load_experiment_config(args.command, args.config, collect_overrides(args))
    threads = determine_thread_count(args.threads)
    out: Path | None = args.out
    if out is None and args.command == 'simulate':
        out = Path(f'output/trajectory.{args.format}')
    elif out is None and args.command in DEFAULT_OUTPUTS:
        out = Path(DEFAULT_OUTPUTS[args.command])
    match args.command:
        case 'simulate':
            return lib_commands.cmd_simulate(cfg, out, args.format)  # type: ignore[arg-type]
        case 'validate':
            return lib_commands.cmd_validate(cfg, out, threads)
        case 'classify':
            return lib_commands.cmd_classify(cfg, out)
        case 'phase':
            return lib_commands.cmd_phase(cfg, out)  # type: ignore[arg-type]
        case 'neuts':
            return lib_commands.cmd_neuts(cfg, out)
        case 'diagnose':
            return lib_commands.cmd_diagnose(cfg, out, threads)  # type: ignore[arg-type]
    raise AssertionError(f'unhandled command ``{args.command}``')


def main(argv: list[str] | None = None) -> int:
    """
    Parses flags, runs the subcommand, and returns the process exit code.
    """
    log.debug('\n\nstarting main')
    parser = build_parser()
    args = parser.parse_args(argv)
    log.debug(f'args, ``{args}``')
    try:
        result = run(args)
    except CatastropheSimError as err:
        log.exception(f'{type(err).__name__}')
        print(str(err), file=sys.stderr)
        return err.exit_code
    except ValueError as err:  # a library precondition the config could not catch
        log.exception('invalid arguments')
        print(str(err), file=sys.stderr)
        return ConfigError.exit_code
    if isinstance(result, dict):
        print(json.dumps(jsonable({key: result[key] for key in result if key != 'checks'}), sort_keys=True))
    else:
        print(str(result))
    return 0


if __name__ == '__main__':
    sys.exit(main())
