"""
Neuts' catastrophe model and its embedded chain.

Each step an independent coin with probability p decides between a collapse (binomial thinning
with a fresh beta) and an immigration step (add a fresh Z). Gaps between collapses are geometric
on {1,2,...}; there are G' = G - 1 immigration steps before each collapse, with P(G'=g) = p (1-p)^g.

Watching Y just before the n-th collapse gives X'_n, a catastrophe chain whose immigration law is
the compound-geometric sum of G' Z draws.
"""

import logging
from dataclasses import dataclass
from typing import TypedDict

import numpy as np

from lib.lib_chain import ChainConfig, binomial_thin, sample_direct_batch
from lib.lib_distributions import (
    CompoundGeometric,
    EnvDistribution,
    ImmigrationDistribution,
    env_sample_n,
    imm_sample,
    imm_sample_counts,
    imm_sample_n,
)
from lib.lib_popcount import ZERO, PopCount, add
from lib.lib_stats import TestResult, chi_square_two_sample, chi_square_vs_exact, histogram

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NeutsConfig:
    p: float
    env: EnvDistribution
    imm: ImmigrationDistribution
    horizon: int
    seed: int = 0
    y0: PopCount | None = None  # None draws Y_0 from the immigration law

    def __post_init__(self) -> None:
        if not (0.0 < self.p < 1.0):
            raise ValueError(f'Error: catastrophe probability p must lie in (0,1), got ``{self.p}``')
        if self.horizon < 0:
            raise ValueError(f'Error: horizon must be >= 0, got ``{self.horizon}``')
        if not (0 <= self.seed < 2**64):
            raise ValueError(f'Error: seed must be a 64-bit unsigned integer, got ``{self.seed}``')


class CouplingReport(TypedDict):
    """
    Summary of one Neuts run: the coupling test, the gap-law test and the pathwise recursion check.
    """

    p: float
    n: int
    reps: int
    coupling: TestResult
    gap_law: TestResult
    collapses: int
    embedded_recursion_holds: bool


@dataclass(frozen=True)
class NeutsTrajectory:
    """
    states[k] is Y_k; at a collapse step env_draws[k] is the beta used and imm_draws[k] is None,
    otherwise env_draws[k] is None and imm_draws[k] is the Z added. Index 0 holds None in both.
    """

    states: tuple[PopCount, ...]
    collapse_flags: tuple[bool, ...]
    env_draws: tuple[float | None, ...]
    imm_draws: tuple[PopCount | None, ...]
    seed: int


def simulate_neuts(cfg: NeutsConfig) -> NeutsTrajectory:
    streams = [np.random.default_rng(child) for child in np.random.SeedSequence(cfg.seed).spawn(4)]
    coin_rng, env_rng, imm_rng, thin_rng = streams
    y0 = cfg.y0 if cfg.y0 is not None else imm_sample(cfg.imm, imm_rng)
    coins = (coin_rng.random(cfg.horizon) < cfg.p).tolist()
    betas = env_sample_n(cfg.env, cfg.horizon, env_rng).tolist()
    immigrants = imm_sample_n(cfg.imm, cfg.horizon, imm_rng)
    states: list[PopCount] = [y0]
    env_draws: list[float | None] = [None]
    imm_draws: list[PopCount | None] = [None]
    state = y0
    for collapse, beta, z in zip(coins, betas, immigrants):
        if collapse:
            state = binomial_thin(state, beta, thin_rng)
            env_draws.append(beta)
            imm_draws.append(None)
        else:
            state = add(state, z)
            env_draws.append(None)
            imm_draws.append(z)
        states.append(state)
    log.debug(f'neuts run, ``{sum(coins)}`` collapses in ``{cfg.horizon}`` steps')
    return NeutsTrajectory(
        states=tuple(states),
        collapse_flags=(False, *coins),
        env_draws=tuple(env_draws),
        imm_draws=tuple(imm_draws),
        seed=cfg.seed,
    )


def collapse_times(traj: NeutsTrajectory) -> list[int]:
    return [index for index, flag in enumerate(traj.collapse_flags) if flag]


def collapse_gaps(times: list[int]) -> list[int]:
    """
    G_k = T_k - T_(k-1) with T_0 = 0.
    """
    return [later - earlier for earlier, later in zip([0, *times], times)]


def embedded_chain(traj: NeutsTrajectory) -> list[PopCount]:
    """
    X'_n = Y at the step just before the n-th collapse.
    """
    times = collapse_times(traj)
    if not times:
        log.error('no collapse within the horizon')
        raise ValueError('Error: the trajectory has no collapse within its horizon')
    return [traj.states[time - 1] for time in times]


def aggregated_from_trajectory(traj: NeutsTrajectory) -> list[PopCount]:
    """
    Z'_n: the immigration added strictly between collapse n-1 and collapse n (0 when none).
    """
    aggregated: list[PopCount] = []
    total = ZERO
    for flag, z in zip(traj.collapse_flags[1:], traj.imm_draws[1:]):
        if flag:
            aggregated.append(total)
            total = ZERO
        else:
            total = add(total, z)  # type: ignore[arg-type]
    return aggregated


def embedded_recursion_holds(traj: NeutsTrajectory) -> bool:
    """
    Replays X'_n = (survivors of collapse n-1) + Z'_n on the trajectory, with exact equality.
    Survivors never exceed the population they came from.
    """
    times = collapse_times(traj)
    embedded = embedded_chain(traj) if times else []
    previous_time = 0
    for index, time in enumerate(times):
        survivors = traj.states[previous_time]
        if index > 0 and survivors > embedded[index - 1]:
            return False
        replay = survivors
        for z in traj.imm_draws[previous_time + 1 : time]:
            replay = add(replay, z)  # type: ignore[arg-type]
        if replay != embedded[index]:
            return False
        previous_time = time
    return True


def aggregated_immigration_sample(imm: ImmigrationDistribution, p: float, rng: np.random.Generator) -> PopCount:
    """
    Sum of G' i.i.d. Z draws, P(G'=g) = p (1-p)^g.
    """
    return imm_sample(CompoundGeometric(base=imm, p=p), rng)


def gap_law_test(gaps: list[int], p: float) -> TestResult:
    """
    Chi-square goodness-of-fit of collapse gaps against the geometric law on {1,2,...}.
    """
    if not gaps:
        raise ValueError('Error: gap-law test needs at least one gap')
    largest = max(gaps)
    support = np.arange(largest + 1)
    pmf = np.where(support >= 1, p * (1.0 - p) ** np.maximum(support - 1, 0), 0.0)
    pmf[largest] = (1.0 - p) ** (largest - 1)  # the last bin carries the whole tail
    return chi_square_vs_exact(histogram(gaps), pmf)


def sample_embedded_batch(cfg: NeutsConfig, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    X'_n from `size` independent Neuts runs started at Y_0 = 0, vectorized (finite-support laws only).
    Each run is advanced until its n-th collapse.
    """
    population = np.zeros(size, dtype=np.int64)
    collapses = np.zeros(size, dtype=np.int64)
    result = np.zeros(size, dtype=np.int64)
    active = np.arange(size)
    while active.size:
        collapse = rng.random(active.size) < cfg.p
        hit = active[collapse]
        finishing = hit[collapses[hit] == n - 1]
        result[finishing] = population[finishing]
        thinning = hit[collapses[hit] < n - 1]
        population[thinning] = rng.binomial(population[thinning], env_sample_n(cfg.env, thinning.size, rng))
        collapses[hit] += 1
        growing = active[~collapse]
        population[growing] += imm_sample_counts(cfg.imm, growing.size, rng)
        active = active[collapses[active] < n]
    return result


def coupling_check(cfg: NeutsConfig, n: int, reps: int) -> TestResult:
    """
    Two-sample chi-square between X'_n from Neuts runs and X_n from the catastrophe chain whose
    immigration is the compound-geometric law.
    """
    if reps < 1:
        log.error(f'coupling check needs reps >= 1, got ``{reps}``')
        raise ValueError(f'Error: coupling check needs reps >= 1, got ``{reps}``')
    if n < 1:
        raise ValueError(f'Error: coupling check needs n >= 1, got ``{n}``')
    log.info(f'::: coupling check, p ``{cfg.p}``, n ``{n}``, reps ``{reps}`` ----------')
    neuts_rng, chain_rng = [np.random.default_rng(child) for child in np.random.SeedSequence(cfg.seed).spawn(2)]
    embedded = sample_embedded_batch(cfg, n, reps, neuts_rng)
    chain_cfg = ChainConfig(env=cfg.env, imm=CompoundGeometric(base=cfg.imm, p=cfg.p), horizon=n, seed=cfg.seed)
    direct = sample_direct_batch(chain_cfg, n, reps, chain_rng)
    result = chi_square_two_sample(histogram(embedded), histogram(direct))
    log.info(f'ok / coupling check p-value ``{result["p_value"]}``')
    return result
