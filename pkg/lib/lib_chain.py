"""
The binomial-catastrophe chain X_n = B_(n-1) + Z_n, with B_n ~ Binomial(X_n, beta_(n+1)).

Contains...
- single-path simulation (`simulate`) and its one-step primitives;
- the sum-of-independent-binomials representation of X_n (`representation_sample`);
- vectorized batch samplers for bounded immigration laws;
- the exact law of X_n by forward dynamic programming (`exact_distribution`);
- the bottom-state return probability and generating-function formulas, by Monte Carlo and summed exactly.

Convention: B_0 = 0, so X_1 = Z_1 whatever x0 is; x0 only labels time 0.
"""

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TypedDict

import numpy as np
from scipy import stats

from lib.lib_common import float_text, json_line
from lib.lib_distributions import (
    CompoundGeometric,
    EnvDistribution,
    EnvTable,
    ImmigrationDistribution,
    PointMass,
    env_sample_n,
    imm_irreducible,
    imm_pmf,
    imm_sample_counts,
    imm_sample_n,
    imm_support_max,
)
from lib.lib_popcount import LOG_SWITCH_DOWN, ZERO, PopCount, add

log = logging.getLogger(__name__)

EXACT_BINOMIAL_MAX: int = 10**6
LOG_SKIP: float = -60.0 * math.log(2.0)
CI_Z: float = float(stats.norm.ppf(0.995))
TRUNCATION_TOLERANCE: float = 1e-12


@dataclass(frozen=True)
class ChainConfig:
    env: EnvDistribution
    imm: ImmigrationDistribution
    horizon: int
    x0: PopCount = PopCount(n=1)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ValueError(f'Error: horizon must be >= 0, got ``{self.horizon}``')
        if not (0 <= self.seed < 2**64):
            raise ValueError(f'Error: seed must be a 64-bit unsigned integer, got ``{self.seed}``')
        if not imm_irreducible(self.imm):
            log.warning(f'immigration law puts no mass on counts >= 2, ``{self.imm!r}``')


@dataclass(frozen=True)
class Trajectory:
    """
    states[k] is X_k for k = 0..horizon; env_draws[k] / imm_draws[k] are the beta and Z of step k
    (index 0 holds None).
    """

    states: tuple[PopCount, ...]
    env_draws: tuple[float | None, ...]
    imm_draws: tuple[PopCount | None, ...]
    seed: int


class ExactLaw(TypedDict):
    """
    - pmf: P(X_n = k) for k in 0..state_cap
    - truncated_mass: probability pushed beyond state_cap
    """

    pmf: np.ndarray
    truncated_mass: float


## one step ---------------------------------------------------------


def _thin_log_prob(count: PopCount, log_p: float, rng: np.random.Generator) -> PopCount:
    """
    Binomial(count, e^log_p) in the regime that suits the size of `count`.
    """
    if count.n is not None:
        n = count.n
        if n == 0:
            return ZERO
        p = math.exp(log_p)
        if p == 0.0:
            return ZERO
        if n <= EXACT_BINOMIAL_MAX:
            return PopCount.exact(int(rng.binomial(n, p)))
        return PopCount.from_int(_approximate_binomial(n, p, rng))
    drifted = count.logval + log_p  # type: ignore[operator]
    if drifted > LOG_SWITCH_DOWN:
        return PopCount.from_log(drifted, was_log=True)
    ## the drifted mean fell below the log band: sample around it
    mean = math.exp(drifted)
    p = math.exp(log_p)
    if mean * (1.0 - p) > 100.0:
        draw = math.floor(rng.normal(mean, math.sqrt(mean * (1.0 - p))) + 0.5)
    else:
        draw = int(rng.poisson(mean))
    return PopCount.from_int(max(draw, 0))


def _approximate_binomial(n: int, p: float, rng: np.random.Generator) -> int:
    mean = n * p
    variance = mean * (1.0 - p)
    if variance > 100.0:
        draw = math.floor(rng.normal(mean, math.sqrt(variance)) + 0.5)  # continuity correction
    elif p <= 1e-6 and mean <= 50.0:
        draw = int(rng.poisson(mean))
    else:
        draw = int(stats.binom.ppf(rng.random(), n, p))
    return min(max(draw, 0), n)


def binomial_thin(count: PopCount, p: float, rng: np.random.Generator) -> PopCount:
    """
    Survivors when each of `count` individuals survives independently with probability p.

    Exact binomial sampling up to 10^6 individuals; normal (with continuity correction), Poisson,
    or inversion approximations above that; deterministic log drift for log-scale counts.
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f'Error: thinning probability must lie in (0,1), got ``{p}``')
    return _thin_log_prob(count, math.log(p), rng)


def step(x: PopCount, beta: float, z: PopCount, rng: np.random.Generator) -> PopCount:
    return add(binomial_thin(x, beta, rng), z)


## paths ------------------------------------------------------------


def _spawn_streams(seed: int, count: int) -> list[np.random.Generator]:
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def simulate(cfg: ChainConfig) -> Trajectory:
    """
    Simulates X_0..X_horizon. One beta per step is shared by every individual alive at that step.
    Environment, immigration and thinning each draw from their own stream spawned from cfg.seed.
    """
    env_rng, imm_rng, thin_rng = _spawn_streams(cfg.seed, 3)
    betas = env_sample_n(cfg.env, cfg.horizon, env_rng).tolist()
    immigrants = imm_sample_n(cfg.imm, cfg.horizon, imm_rng)
    states: list[PopCount] = [cfg.x0]
    state = cfg.x0
    for k in range(1, cfg.horizon + 1):
        previous = ZERO if k == 1 else state  # B_0 = 0
        state = step(previous, betas[k - 1], immigrants[k - 1], thin_rng)
        states.append(state)
    log.debug(f'simulated ``{cfg.horizon}`` steps, final state ``{state}``')
    return Trajectory(
        states=tuple(states),
        env_draws=(None, *betas),
        imm_draws=(None, *immigrants),
        seed=cfg.seed,
    )


def _suffix_log_products(log_betas: np.ndarray) -> np.ndarray:
    """
    Row-wise sum_{j=i+1..n} ln beta_j for i = 1..n (last entry 0).
    """
    reverse_cumulative = np.cumsum(log_betas[..., ::-1], axis=-1)[..., ::-1]
    tail = np.zeros(log_betas.shape[:-1] + (1,), dtype=np.float64)
    return np.concatenate([reverse_cumulative[..., 1:], tail], axis=-1)


def representation_sample(cfg: ChainConfig, n: int, rng: np.random.Generator) -> PopCount:
    """
    Draws X_n as sum_i Binomial(Z_i, prod_{j=i+1..n} beta_j), with the n-th term equal to Z_n.
    Exact-count terms whose survival probability is below 2^-60 are skipped as zero.
    """
    if n < 1:
        raise ValueError(f'Error: n must be >= 1, got ``{n}``')
    betas = env_sample_n(cfg.env, n, rng)
    immigrants = imm_sample_n(cfg.imm, n, rng)
    suffix = _suffix_log_products(np.log(betas)).tolist()
    total = ZERO
    for index, (z, log_p) in enumerate(zip(immigrants, suffix)):
        if index == n - 1:
            term = z
        elif log_p < LOG_SKIP and z.is_exact:
            term = ZERO
        else:
            term = _thin_log_prob(z, log_p, rng)
        total = add(total, term)
    return total


def _require_bounded(imm: ImmigrationDistribution) -> None:
    if imm_support_max(imm) is None and not _is_bounded_compound(imm):
        raise ValueError(f'Error: batch sampling needs a finite-support immigration law, got ``{imm!r}``')


def _is_bounded_compound(imm: ImmigrationDistribution) -> bool:
    return isinstance(imm, CompoundGeometric) and imm_support_max(imm.base) is not None


def sample_representation_batch(cfg: ChainConfig, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    `size` independent representation draws of X_n as an int64 array (finite-support laws only).
    """
    if n < 1:
        raise ValueError(f'Error: n must be >= 1, got ``{n}``')
    _require_bounded(cfg.imm)
    betas = env_sample_n(cfg.env, n * size, rng).reshape(size, n)
    immigrants = imm_sample_counts(cfg.imm, n * size, rng).reshape(size, n)
    suffix = _suffix_log_products(np.log(betas))
    skipped = suffix < LOG_SKIP
    probabilities = np.where(skipped, 0.0, np.exp(suffix))
    survivors = rng.binomial(immigrants, probabilities)
    return survivors.sum(axis=1)


def sample_direct_batch(
    cfg: ChainConfig, n: int, size: int, rng: np.random.Generator, per_individual_env: bool = False
) -> np.ndarray:
    """
    `size` independent direct-recursion draws of X_n as an int64 array (finite-support laws only).

    `per_individual_env=True` draws a separate beta for every individual instead of one per step.
    That is the wrong model; it exists so validation can show the oracles catch it.
    """
    if n < 1:
        raise ValueError(f'Error: n must be >= 1, got ``{n}``')
    _require_bounded(cfg.imm)
    population = imm_sample_counts(cfg.imm, size, rng)
    for _ in range(2, n + 1):
        if per_individual_env:
            individuals = int(population.sum())
            survived = rng.random(individuals) < env_sample_n(cfg.env, individuals, rng)
            owners = np.repeat(np.arange(size), population)
            survivors = np.bincount(owners, weights=survived, minlength=size).astype(np.int64)
        else:
            survivors = rng.binomial(population, env_sample_n(cfg.env, size, rng))
        population = survivors + imm_sample_counts(cfg.imm, size, rng)
    return population


## exact law --------------------------------------------------------


def _env_atoms(env: EnvDistribution) -> list[tuple[float, float]]:
    match env:
        case PointMass(b=b):
            return [(b, 1.0)]
        case EnvTable():
            return list(env.atoms)
    raise ValueError(f'Error: exact routes need a point-mass or finite-table env, got ``{env!r}``')


def _imm_pmf_vector(imm: ImmigrationDistribution) -> np.ndarray:
    support_max = imm_support_max(imm)
    if support_max is None:
        raise ValueError(f'Error: exact routes need a finite-support immigration law, got ``{imm!r}``')
    return np.array([imm_pmf(imm, k) for k in range(support_max + 1)], dtype=np.float64)


def exact_distribution(cfg: ChainConfig, n: int, state_cap: int | None = None) -> ExactLaw:
    """
    Exact law of X_n by forward DP: thin with the env-mixed binomial kernel, convolve with the
    immigration pmf, cut at `state_cap`. The default cap n * max(Z) loses no mass.
    """
    if n < 1:
        raise ValueError(f'Error: n must be >= 1, got ``{n}``')
    atoms = _env_atoms(cfg.env)
    z_pmf = _imm_pmf_vector(cfg.imm)
    cap = state_cap if state_cap is not None else n * (len(z_pmf) - 1)
    if cap < 0:
        raise ValueError(f'Error: state cap must be >= 0, got ``{cap}``')
    pmf = np.zeros(cap + 1, dtype=np.float64)
    kept = min(len(z_pmf), cap + 1)
    pmf[:kept] = z_pmf[:kept]
    truncated = float(z_pmf[kept:].sum())
    states = np.arange(cap + 1)
    kernel = np.zeros((cap + 1, cap + 1), dtype=np.float64)
    for value, weight in atoms:
        kernel += weight * stats.binom.pmf(states[None, :], states[:, None], value)
    for _ in range(2, n + 1):
        thinned = pmf @ kernel
        convolved = np.convolve(thinned, z_pmf)
        pmf = convolved[: cap + 1]
        truncated += float(convolved[cap + 1 :].sum())
    if truncated > TRUNCATION_TOLERANCE:
        log.warning(f'exact law truncated at cap ``{cap}``, lost mass ``{truncated}``')
    return ExactLaw(pmf=pmf, truncated_mass=truncated)


## return probability and generating function -----------------------


def _imm_float_matrix(imm: ImmigrationDistribution, rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    if imm_support_max(imm) is not None or _is_bounded_compound(imm):
        return imm_sample_counts(imm, rows * cols, rng).astype(np.float64).reshape(rows, cols)
    draws = imm_sample_n(imm, rows * cols, rng)
    return np.array([draw.as_float() for draw in draws], dtype=np.float64).reshape(rows, cols)


def _weighted_log1p(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """
    weights * log1p(-x), with 0 wherever x == 0 (so infinite weights never meet a zero log).
    """
    with np.errstate(invalid='ignore'):
        product = weights * np.log1p(-x)
    return np.where(x > 0.0, product, 0.0)


def _bottom_mass(imm: ImmigrationDistribution) -> float:
    p1 = imm_pmf(imm, 1)
    if p1 <= 0.0:
        log.error('return-probability formula called with P(Z=1) = 0')
        raise ValueError('Error: the return-probability formula needs P(Z=1) > 0')
    return p1


def _mean_and_halfwidth(values: np.ndarray) -> tuple[float, float]:
    reps = len(values)
    estimate = float(values.mean())
    halfwidth = CI_Z * float(values.std(ddof=1)) / math.sqrt(reps) if reps > 1 else math.inf
    return (estimate, halfwidth)


def return_prob_formula(cfg: ChainConfig, n: int, reps: int, rng: np.random.Generator) -> tuple[float, float]:
    """
    Monte Carlo estimate of P(X_n = 1) = p1 * E[exp(sum_{i<n} Z_(i+1) ln(1 - prod_{j<=i} beta_j))],
    returned with a 99% CI half-width.
    """
    if n < 2:
        raise ValueError(f'Error: n must be >= 2, got ``{n}``')
    if reps < 2:
        raise ValueError(f'Error: reps must be >= 2, got ``{reps}``')
    p1 = _bottom_mass(cfg.imm)
    products = np.exp(np.cumsum(np.log(env_sample_n(cfg.env, reps * (n - 1), rng).reshape(reps, n - 1)), axis=1))
    immigrants = _imm_float_matrix(cfg.imm, reps, n - 1, rng)
    values = p1 * np.exp(_weighted_log1p(immigrants, products).sum(axis=1))
    return _mean_and_halfwidth(values)


def green_partial_sum(cfg: ChainConfig, N: int, reps: int, rng: np.random.Generator) -> np.ndarray:
    """
    Partial sums sum_{n<=N} P(X_n = 1), each term from the return-probability formula.
    All terms share one set of simulated paths, so the sums are nondecreasing.
    """
    if N < 1:
        raise ValueError(f'Error: N must be >= 1, got ``{N}``')
    if reps < 1:
        raise ValueError(f'Error: reps must be >= 1, got ``{reps}``')
    p1 = _bottom_mass(cfg.imm)
    terms = np.empty(N, dtype=np.float64)
    terms[0] = p1  # X_1 = Z_1
    if N > 1:
        products = np.exp(np.cumsum(np.log(env_sample_n(cfg.env, reps * (N - 1), rng).reshape(reps, N - 1)), axis=1))
        immigrants = _imm_float_matrix(cfg.imm, reps, N - 1, rng)
        exponents = np.cumsum(_weighted_log1p(immigrants, products), axis=1)
        terms[1:] = p1 * np.exp(exponents).mean(axis=0)
    return np.cumsum(terms)


def pgf_formula(cfg: ChainConfig, n: int, s: float, reps: int, rng: np.random.Generator) -> tuple[float, float]:
    """
    Monte Carlo estimate of E(s^X_n) = E[exp(sum_i Z_i ln(1 - beta_(i,n) (1-s)))], beta_(i,n) = prod_{j>i} beta_j.
    """
    if not (0.0 < s < 1.0):
        raise ValueError(f'Error: s must lie in (0,1), got ``{s}``')
    if n < 1:
        raise ValueError(f'Error: n must be >= 1, got ``{n}``')
    if reps < 2:
        raise ValueError(f'Error: reps must be >= 2, got ``{reps}``')
    suffix = _suffix_log_products(np.log(env_sample_n(cfg.env, reps * n, rng).reshape(reps, n)))
    immigrants = _imm_float_matrix(cfg.imm, reps, n, rng)
    values = np.exp(_weighted_log1p(immigrants, np.exp(suffix) * (1.0 - s)).sum(axis=1))
    return _mean_and_halfwidth(values)


def pgf_exact(cfg: ChainConfig, n: int, s: float) -> float:
    """
    E(s^X_n) from the exact DP law.
    """
    if not (0.0 < s < 1.0):
        raise ValueError(f'Error: s must lie in (0,1), got ``{s}``')
    law = exact_distribution(cfg, n)
    pmf = law['pmf']
    return float(np.sum(pmf * s ** np.arange(len(pmf))))


def _imm_pgf(z_pmf: np.ndarray, u: float) -> float:
    return float(np.sum(z_pmf * u ** np.arange(len(z_pmf))))


def _beta_paths(atoms: list[tuple[float, float]], length: int):
    """
    Yields (betas, weight) over every sequence of `length` env atoms.
    """
    for combo in itertools.product(atoms, repeat=length):
        yield ([value for value, _ in combo], math.prod(weight for _, weight in combo))


def return_prob_exact(cfg: ChainConfig, n: int) -> float:
    """
    p1 * E_beta[prod_{i<n} phi(1 - prod_{j<=i} beta_j)], phi the PGF of Z, summed over every beta path.
    For a point-mass env this is p1 * prod_{i<n} phi(1 - b^i).
    """
    if n < 2:
        raise ValueError(f'Error: n must be >= 2, got ``{n}``')
    p1 = _bottom_mass(cfg.imm)
    atoms = _env_atoms(cfg.env)
    z_pmf = _imm_pmf_vector(cfg.imm)
    total = 0.0
    for betas, weight in _beta_paths(atoms, n - 1):
        products = np.cumprod(betas)
        total += weight * math.prod(_imm_pgf(z_pmf, 1.0 - product) for product in products)
    return p1 * total


def pgf_formula_exact(cfg: ChainConfig, n: int, s: float) -> float:
    """
    E_beta[prod_{i<=n} phi(1 - beta_(i,n) (1-s))] summed over every path of beta_2..beta_n.
    """
    if not (0.0 < s < 1.0):
        raise ValueError(f'Error: s must lie in (0,1), got ``{s}``')
    if n < 1:
        raise ValueError(f'Error: n must be >= 1, got ``{n}``')
    atoms = _env_atoms(cfg.env)
    z_pmf = _imm_pmf_vector(cfg.imm)
    total = 0.0
    for betas, weight in _beta_paths(atoms, n - 1):
        suffix = np.exp(_suffix_log_products(np.log(np.array([1.0, *betas])))).tolist()
        total += weight * math.prod(_imm_pgf(z_pmf, 1.0 - product * (1.0 - s)) for product in suffix)
    return total


## export -----------------------------------------------------------

TRAJECTORY_HEADER: list[str] = ['step', 'population_log10', 'beta', 'z_log10', 'exact']


def _trajectory_rows(
    states, env_draws, imm_draws, collapse_flags: tuple[bool, ...] | None = None
) -> list[dict[str, str]]:
    rows = []
    for index, state in enumerate(states):
        beta = env_draws[index] if env_draws is not None else None
        z = imm_draws[index] if imm_draws is not None else None
        row = {
            'step': str(index),
            'population_log10': float_text(state.log10_value),
            'beta': float_text(beta) if beta is not None else '',
            'z_log10': float_text(z.log10_value) if z is not None else '',
            'exact': str(state.n) if state.n is not None else '',
        }
        if collapse_flags is not None:
            row['collapse'] = 'true' if collapse_flags[index] else 'false'
        rows.append(row)
    return rows


def write_trajectory_csv(
    path: Path, states, env_draws, imm_draws, collapse_flags: tuple[bool, ...] | None = None
) -> None:
    """
    Writes one row per step: step,population_log10,beta,z_log10,exact (plus collapse when given).
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    header = TRAJECTORY_HEADER + (['collapse'] if collapse_flags is not None else [])
    with path.open('w', encoding='utf-8', newline='') as handle:
        writer = csv.DictWriter(handle, fieldnames=header, lineterminator='\n')
        writer.writeheader()
        writer.writerows(_trajectory_rows(states, env_draws, imm_draws, collapse_flags))
    log.debug(f'wrote trajectory csv, ``{path}``')
    return


def write_trajectory_jsonl(
    path: Path, states, env_draws, imm_draws, collapse_flags: tuple[bool, ...] | None = None
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as handle:
        for row in _trajectory_rows(states, env_draws, imm_draws, collapse_flags):
            handle.write(json_line(row) + '\n')
    log.debug(f'wrote trajectory jsonl, ``{path}``')
    return
