"""
The subcommand operations behind catastrophe_sim.py.

Each `cmd_*` takes a validated ExperimentConfig, writes its outputs, and returns a summary dict.
Every command is deterministic given (config, seed); the thread count never changes results.
"""

import csv
import logging
import math
from pathlib import Path

import numpy as np

from lib.lib_chain import (
    ChainConfig,
    exact_distribution,
    green_partial_sum,
    pgf_exact,
    pgf_formula_exact,
    return_prob_exact,
    sample_direct_batch,
    sample_representation_batch,
    simulate,
    write_trajectory_csv,
    write_trajectory_jsonl,
)
from lib.lib_classify import (
    beta_critical,
    classify_distributions,
    classify_example,
    geometric_weighted_terms,
    last_half_max_increment,
)
from lib.lib_common import ConfigError, ValidationFailure, float_text, write_json
from lib.lib_config import ExperimentConfig, ValidationCell
from lib.lib_distributions import (
    Deterministic,
    ImmTable,
    InverseSquare,
    LogTail,
    PointMass,
    env_log_moment,
    env_to_spec,
    imm_normalizer,
    imm_pmf_total_bracket,
    imm_to_spec,
    laplace_direct,
    laplace_tail_form,
    log_tail,
    series_bound,
)
from lib.lib_neuts import (
    CouplingReport,
    NeutsConfig,
    collapse_gaps,
    collapse_times,
    coupling_check,
    embedded_recursion_holds,
    gap_law_test,
    simulate_neuts,
)
from lib.lib_popcount import ZERO
from lib.lib_stats import (
    RngSpec,
    chi_square_two_sample,
    derive_stream_seed,
    green_plateau_statistic,
    histogram,
    occupation_halves,
    replicate,
    return_time_stats,
    stream_rng,
    tv_distance,
    write_jsonl,
)

log = logging.getLogger(__name__)

TV_LIMIT: float = 0.01
SIGNIFICANCE: float = 0.01
IDENTITY_TOLERANCE: float = 1e-9
LAPLACE_TOLERANCE: float = 1e-10
LAPLACE_LAMBDAS: tuple[float, ...] = (0.01, 0.1, 1.0, 5.0)
PGF_POINTS: tuple[float, ...] = (0.1, 0.5, 0.9)
SERIES_GRID_C: tuple[float, ...] = (0.3, 0.5, 0.7, 0.9)
SERIES_GRID_I: tuple[int, ...] = tuple(range(1, 21))


## simulate ---------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out: Path, fmt: str = 'csv') -> Path:
    """
    Simulates one trajectory and writes it as CSV (or JSON lines).
    """
    log.info('::: simulate ----------')
    chain_cfg = ChainConfig(
        env=cfg.env, imm=cfg.imm, horizon=cfg.horizon, x0=cfg.x0, seed=cfg.seed  # type: ignore[arg-type]
    )
    traj = simulate(chain_cfg)
    if fmt == 'jsonl':
        write_trajectory_jsonl(out, traj.states, traj.env_draws, traj.imm_draws)
    else:
        write_trajectory_csv(out, traj.states, traj.env_draws, traj.imm_draws)
    log.info(f'ok / trajectory written, ``{out}``')
    return out


## validate ---------------------------------------------------------


def _check(name: str, passed: bool, detail: dict) -> dict:
    if passed:
        log.info(f'ok / {name}')
    else:
        log.warning(f'check failed, ``{name}``; detail, ``{detail}``')
    return {'name': name, 'passed': passed, 'detail': detail}


def _representation_cell(cell: ValidationCell, samples: int, per_individual_env: bool, state_cap: int | None, rng) -> dict:
    chain_cfg = ChainConfig(env=cell.env, imm=cell.imm, horizon=cell.n)
    representation = sample_representation_batch(chain_cfg, cell.n, samples, rng)
    direct = sample_direct_batch(chain_cfg, cell.n, samples, rng, per_individual_env=per_individual_env)
    law = exact_distribution(chain_cfg, cell.n, state_cap)
    tv = tv_distance(histogram(representation), law['pmf'])
    two_sample = chi_square_two_sample(histogram(representation), histogram(direct))
    return {
        'env': env_to_spec(cell.env),
        'imm': imm_to_spec(cell.imm),
        'n': cell.n,
        'tv_distance': tv,
        'truncated_mass': law['truncated_mass'],
        'two_sample': dict(two_sample),
    }


def check_representation_matrix(cfg: ExperimentConfig, threads: int) -> dict:
    """
    Representation draws vs the exact law (TV) and vs direct simulation (two-sample chi-square), per cell.
    One chi-square miss per 18 cells is tolerated.
    """
    if not cfg.matrix:
        raise ConfigError('Error: the validation matrix is empty')
    cells = list(cfg.matrix)

    def job(stream_index: int, rng: np.random.Generator) -> dict:
        return _representation_cell(cells[stream_index], cfg.samples, cfg.per_individual_env, cfg.state_cap, rng)

    results = replicate(job, len(cells), RngSpec(master_seed=cfg.seed), threads)
    tv_ok = all(result['tv_distance'] <= TV_LIMIT for result in results)
    misses = sum(1 for result in results if result['two_sample']['p_value'] <= SIGNIFICANCE)
    allowed = len(cells) // 18
    return _check(
        'representation_equivalence',
        tv_ok and misses <= allowed,
        {
            'cells': results,
            'chi_square_misses': misses,
            'allowed_misses': allowed,
            'per_individual_env': cfg.per_individual_env,
        },
    )


def _small_chain() -> ChainConfig:
    return ChainConfig(env=PointMass(b=0.5), imm=ImmTable(pmf=((1, 0.5), (2, 0.5))), horizon=10)


def check_return_probability() -> dict:
    chain_cfg = _small_chain()
    rows = []
    for n in range(2, 11):
        formula = return_prob_exact(chain_cfg, n)
        oracle = float(exact_distribution(chain_cfg, n)['pmf'][1])
        rows.append({'n': n, 'formula': formula, 'exact': oracle, 'difference': abs(formula - oracle)})
    passed = all(row['difference'] <= IDENTITY_TOLERANCE for row in rows) and abs(rows[0]['exact'] - 3 / 16) <= 1e-12
    return _check('return_probability_identity', passed, {'rows': rows})


def check_pgf() -> dict:
    chain_cfg = _small_chain()
    rows = []
    for n in range(1, 9):
        for s in PGF_POINTS:
            oracle, formula = pgf_exact(chain_cfg, n, s), pgf_formula_exact(chain_cfg, n, s)
            rows.append({'n': n, 's': s, 'exact': oracle, 'formula': formula, 'difference': abs(oracle - formula)})
    near_one = 1.0 - 1e-12
    at_one = [pgf_exact(chain_cfg, n, near_one) for n in range(1, 9)]
    at_one += [pgf_formula_exact(chain_cfg, n, near_one) for n in range(1, 9)]
    passed = all(row['difference'] <= IDENTITY_TOLERANCE for row in rows)
    passed = passed and all(abs(v - 1.0) <= IDENTITY_TOLERANCE for v in at_one)
    return _check('pgf_identity', passed, {'rows': rows, 'near_one': at_one})


def check_laplace() -> dict:
    laws = [Deterministic(k=1), ImmTable(pmf=((1, 0.5), (2, 0.5))), LogTail(a=1.0), LogTail(a=2.0), InverseSquare()]
    rows = []
    for law in laws:
        for lam in LAPLACE_LAMBDAS:
            direct, tail_form = laplace_direct(law, lam), laplace_tail_form(law, lam)
            rows.append(
                {
                    'imm': imm_to_spec(law),
                    'lambda': lam,
                    'direct': direct,
                    'tail_form': tail_form,
                    'difference': abs(direct - tail_form),
                }
            )
    return _check('laplace_identity', all(row['difference'] <= LAPLACE_TOLERANCE for row in rows), {'rows': rows})


def check_series_bound() -> dict:
    rows = []
    for c in SERIES_GRID_C:
        for i in SERIES_GRID_I:
            lhs, rhs = series_bound(c, i)
            rows.append({'c': c, 'i': i, 'lhs': lhs, 'rhs': rhs, 'holds': 0.0 <= lhs <= rhs})
    return _check('series_bound', all(row['holds'] for row in rows), {'rows': rows})


def check_normalizer() -> dict:
    total_low, total_high = imm_pmf_total_bracket(LogTail(a=1.0))
    c1 = imm_normalizer(1.0)
    report = log_tail(LogTail(a=1.0), 40.0)
    functional_bracket = [report['t'] * report['tail_low'], report['t'] * report['tail_high']]
    beta_c = beta_critical()
    detail = {
        'pmf_total_bracket': [total_low, total_high],
        'c1': c1,
        'functional_t40': report['functional'],
        'functional_t40_bracket': functional_bracket,
        'beta_c': beta_c,
        'round_trip_error': abs(-math.log(beta_c) - c1),
    }
    passed = (
        total_low >= 1.0 - 1e-8
        and total_high <= 1.0 + 1e-8
        and all(abs(value - c1) <= 0.1 * c1 for value in functional_bracket)
        and detail['round_trip_error'] <= 1e-12
    )
    return _check('normalizer_and_tail', passed, detail)


def cmd_validate(cfg: ExperimentConfig, out: Path | None, threads: int) -> dict:
    """
    Runs every oracle identity; writes the report, then raises ValidationFailure if any check failed.
    """
    log.info('::: validate ----------')
    checks = [
        check_representation_matrix(cfg, threads),
        check_return_probability(),
        check_pgf(),
        check_laplace(),
        check_series_bound(),
        check_normalizer(),
    ]
    report = {'passed': all(check['passed'] for check in checks), 'checks': checks, 'seed': cfg.seed}
    if out is not None:
        write_json(out, report)
    if not report['passed']:
        failed = [check['name'] for check in checks if not check['passed']]
        raise ValidationFailure(f'Error: validation failed for ``{failed}``')
    log.info('ok / all validation checks passed')
    return report


## classify / phase -------------------------------------------------


def cmd_classify(cfg: ExperimentConfig, out: Path | None) -> dict:
    log.info('::: classify ----------')
    if cfg.a is not None and cfg.beta is not None:
        regime = classify_example(cfg.a, cfg.beta)
        mu = -math.log(cfg.beta)
    else:
        regime = classify_distributions(cfg.env, cfg.imm)  # type: ignore[arg-type]
        mu = env_log_moment(cfg.env)  # type: ignore[arg-type]
    report = {**regime, 'mu': mu, 'beta_c': beta_critical()}
    if out is not None:
        write_json(out, report)
    log.info(f'ok / verdict ``{report["verdict"]}``')
    return report


def phase_rows(a_grid: tuple[float, ...], beta_grid: tuple[float, ...]) -> list[dict[str, str]]:
    beta_c = beta_critical()
    rows = []
    for a in a_grid:
        for beta in beta_grid:
            rows.append(
                {
                    'a': float_text(a),
                    'beta': float_text(beta),
                    'verdict': classify_example(a, beta)['verdict'],
                    'beta_c': float_text(beta_c) if a == 1.0 else '',
                }
            )
    return rows


def cmd_phase(cfg: ExperimentConfig, out: Path) -> Path:
    """
    Writes the (a, beta) verdict grid; beta_c is filled on the a = 1 rows.
    """
    log.info('::: phase ----------')
    rows = phase_rows(cfg.a_grid, cfg.beta_grid)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open('w', encoding='utf-8', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=['a', 'beta', 'verdict', 'beta_c'], lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)
    log.info(f'ok / ``{len(rows)}`` phase rows written, ``{out}``')
    return out


## neuts ------------------------------------------------------------


def cmd_neuts(cfg: ExperimentConfig, out: Path | None) -> CouplingReport:
    log.info('::: neuts ----------')
    coupled = NeutsConfig(
        p=cfg.p, env=cfg.env, imm=cfg.imm, horizon=cfg.horizon, seed=cfg.seed, y0=ZERO  # type: ignore[arg-type]
    )
    coupling = coupling_check(coupled, cfg.n, cfg.reps)
    plain = NeutsConfig(p=cfg.p, env=cfg.env, imm=cfg.imm, horizon=cfg.horizon, seed=cfg.seed)  # type: ignore[arg-type]
    traj = simulate_neuts(plain)
    times = collapse_times(traj)
    gap_law = gap_law_test(collapse_gaps(times), cfg.p)
    report = CouplingReport(
        p=cfg.p,
        n=cfg.n,
        reps=cfg.reps,
        coupling=coupling,
        gap_law=gap_law,
        collapses=len(times),
        embedded_recursion_holds=embedded_recursion_holds(traj),
    )
    if out is not None:
        write_json(out, report)
    log.info(f'ok / coupling p-value ``{coupling["p_value"]}``, gap-law p-value ``{gap_law["p_value"]}``')
    return report


## diagnose ---------------------------------------------------------


def diagnose_regimes() -> list[tuple[str, PointMass, LogTail]]:
    """
    One config per regime of the log-tail example; shift -1 puts mass on state 1.
    """
    beta_c = beta_critical()
    return [
        ('positive_recurrent', PointMass(b=0.5), LogTail(a=2.0, shift=-1)),
        ('null_recurrent', PointMass(b=0.7 * beta_c), LogTail(a=1.0, shift=-1)),
        ('transient', PointMass(b=1.3 * beta_c), LogTail(a=1.0, shift=-1)),
    ]


def _write_columns(path: Path, index_name: str, columns: dict[str, np.ndarray]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    length = len(next(iter(columns.values())))
    with path.open('w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow([index_name, *names])
        for row in range(length):
            writer.writerow([row + 1, *[float_text(float(columns[name][row])) for name in names]])
    return


def cmd_diagnose(cfg: ExperimentConfig, out_dir: Path, threads: int) -> dict:
    """
    Writes diagnose.json, green_partial_sums.csv, geometric_series.csv and replications.jsonl into `out_dir`.
    """
    log.info('::: diagnose ----------')
    spec = RngSpec(master_seed=cfg.seed)
    regimes = diagnose_regimes()
    count = cfg.replications

    def job(stream_index: int, rng: np.random.Generator) -> dict:
        name, env, imm = regimes[stream_index // count]
        seed = derive_stream_seed(spec, stream_index)
        traj = simulate(ChainConfig(env=env, imm=imm, horizon=cfg.horizon, seed=seed))
        first_half, last_half = occupation_halves(traj, cfg.m)
        return {
            'stream_index': stream_index,
            'seed': seed,
            'regime': name,
            **return_time_stats(traj, cfg.m),
            'occupation_first_half': first_half,
            'occupation_last_half': last_half,
        }

    summaries = replicate(job, count * len(regimes), spec, threads)
    base = count * len(regimes)
    green_columns: dict[str, np.ndarray] = {}
    series_columns: dict[str, np.ndarray] = {}
    report: dict = {'seed': cfg.seed, 'beta_c': beta_critical(), 'regimes': {}}
    for offset, (name, env, imm) in enumerate(regimes):
        chain_cfg = ChainConfig(env=env, imm=imm, horizon=cfg.n)
        green = green_partial_sum(chain_cfg, cfg.n, cfg.reps, stream_rng(spec, base + offset))
        terms = geometric_weighted_terms(imm, cfg.b, cfg.series_n, stream_rng(spec, base + len(regimes) + offset))
        series = np.cumsum(terms)
        green_columns[name] = green
        series_columns[name] = series
        own = [summary for summary in summaries if summary['regime'] == name]
        report['regimes'][name] = {
            'env': env_to_spec(env),
            'imm': imm_to_spec(imm),
            'verdict': classify_distributions(env, imm)['verdict'],
            'green_final': float(green[-1]),
            'green_plateau_statistic': green_plateau_statistic(green),
            'series_last_half_max_increment': last_half_max_increment(terms),
            'mean_occupation_frequency': float(np.mean([summary['occupation_frequency'] for summary in own])),
        }
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / 'diagnose.json', report)
    _write_columns(out_dir / 'green_partial_sums.csv', 'N', green_columns)
    _write_columns(out_dir / 'geometric_series.csv', 'i', series_columns)
    write_jsonl(summaries, out_dir / 'replications.jsonl')
    log.info(f'ok / diagnostics written, ``{out_dir}``')
    return report
