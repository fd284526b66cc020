"""
Monte Carlo plumbing: reproducible RNG streams, the replication driver, chi-square tests,
and return-time diagnostics for trajectories.
"""

import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, TypedDict, TypeVar

import numpy as np
from scipy import special

from lib.lib_common import CatastropheSimError, json_line
from lib.lib_popcount import PopCount, le_int

log = logging.getLogger(__name__)

RNG_ALGORITHM: str = 'SeedSequence+PCG64'
MIN_EXPECTED: float = 5.0

T = TypeVar('T')


class ReplicationError(CatastropheSimError):
    """
    A replication job failed; carries the stream index of the failing job.
    """

    def __init__(self, stream_index: int, cause: Exception) -> None:
        super().__init__(f'Error: replication ``{stream_index}`` failed: {cause!r}')
        self.stream_index = stream_index
        self.cause = cause


@dataclass(frozen=True)
class RngSpec:
    master_seed: int
    algorithm: str = RNG_ALGORITHM

    def __post_init__(self) -> None:
        if not (0 <= self.master_seed < 2**64):
            raise ValueError(f'Error: master seed must be a 64-bit unsigned integer, got ``{self.master_seed}``')
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f'Error: unsupported rng algorithm ``{self.algorithm}``')


class TestResult(TypedDict):
    """
    Outcome of a chi-square test.

    - statistic: the chi-square statistic
    - p_value: upper-tail probability, in [0,1]
    - dof: degrees of freedom (pooled bins minus one)
    - pooled_bins: number of bins after pooling to expected >= 5
    """

    statistic: float
    p_value: float
    dof: int
    pooled_bins: int


class ReturnStats(TypedDict):
    target_set_max: int
    visit_count: int
    mean_return_time: float
    occupation_frequency: float


class HasStates(Protocol):
    states: Sequence[PopCount]


## streams ----------------------------------------------------------


def derive_stream_seed(spec: RngSpec, stream_index: int) -> int:
    """
    Mixes (master_seed, stream_index) through numpy's SeedSequence hash into a 64-bit seed.
    """
    if stream_index < 0:
        raise ValueError(f'Error: stream index must be >= 0, got ``{stream_index}``')
    sequence = np.random.SeedSequence(entropy=spec.master_seed, spawn_key=(stream_index,))
    return int(sequence.generate_state(1, np.uint64)[0])


def stream_rng(spec: RngSpec, stream_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_stream_seed(spec, stream_index)))


def replicate(
    job: Callable[[int, np.random.Generator], T], count: int, spec: RngSpec, threads: int = 1
) -> list[T]:
    """
    Runs `count` independent jobs, each with its own derived stream.
    Results come back ordered by stream index whatever the thread count.
    """
    if count < 0:
        raise ValueError(f'Error: replication count must be >= 0, got ``{count}``')
    if threads < 1:
        raise ValueError(f'Error: thread count must be >= 1, got ``{threads}``')
    log.info(f'::: replicating ``{count}`` jobs on ``{threads}`` threads ----------')

    def run_one(stream_index: int) -> T:
        try:
            return job(stream_index, stream_rng(spec, stream_index))
        except Exception as err:
            log.exception(f'replication failed, stream_index ``{stream_index}``')
            raise ReplicationError(stream_index, err) from err

    with ThreadPoolExecutor(max_workers=threads) as pool:
        results = list(pool.map(run_one, range(count)))
    log.info(f'ok / ``{count}`` replications complete')
    return results


## histograms and tests ---------------------------------------------


def histogram(values: Iterable[int]) -> np.ndarray:
    """
    Counts of each nonnegative integer value, index = value.
    """
    array = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.int64)
    if array.size and array.min() < 0:
        raise ValueError('Error: histogram values must be nonnegative')
    return np.bincount(array) if array.size else np.zeros(0, dtype=np.int64)


def _pad(left: np.ndarray, right: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    size = max(len(left), len(right))
    return (
        np.pad(np.asarray(left, dtype=np.float64), (0, size - len(left))),
        np.pad(np.asarray(right, dtype=np.float64), (0, size - len(right))),
    )


def _pool_groups(weights: np.ndarray) -> list[tuple[int, int]]:
    """
    Left-to-right pooling of adjacent bins until each group's weight reaches MIN_EXPECTED.
    A short final group merges into its predecessor. Returns [start, stop) ranges.
    """
    groups: list[tuple[int, int]] = []
    start, running = 0, 0.0
    for index, weight in enumerate(weights):
        running += weight
        if running >= MIN_EXPECTED:
            groups.append((start, index + 1))
            start, running = index + 1, 0.0
    if start < len(weights):
        if groups:
            groups[-1] = (groups[-1][0], len(weights))
        else:
            groups.append((start, len(weights)))
    return groups


def _chi_square_result(statistic: float, groups: int) -> TestResult:
    dof = groups - 1
    p_value = float(special.gammaincc(dof / 2.0, statistic / 2.0))
    return TestResult(statistic=statistic, p_value=min(max(p_value, 0.0), 1.0), dof=dof, pooled_bins=groups)


def chi_square_vs_exact(sample: np.ndarray, pmf: np.ndarray) -> TestResult:
    """
    Goodness-of-fit of a histogram against a pmf (renormalized over its own support).
    """
    observed, probabilities = _pad(sample, pmf)
    total = observed.sum()
    if total <= 0:
        raise ValueError('Error: chi-square needs a nonempty histogram')
    if probabilities.sum() <= 0:
        raise ValueError('Error: chi-square needs a pmf with positive mass')
    expected = total * probabilities / probabilities.sum()
    groups = _pool_groups(expected)
    if len(groups) < 2:
        log.error('all mass pooled into one bin')
        raise ValueError('Error: all mass pooled into one bin; chi-square is undefined')
    statistic = 0.0
    for start, stop in groups:
        observed_group, expected_group = observed[start:stop].sum(), expected[start:stop].sum()
        statistic += (observed_group - expected_group) ** 2 / expected_group
    return _chi_square_result(float(statistic), len(groups))


def chi_square_two_sample(a: np.ndarray, b: np.ndarray) -> TestResult:
    """
    Two-sample chi-square homogeneity test between histograms `a` and `b`.
    """
    left, right = _pad(a, b)
    n_left, n_right = left.sum(), right.sum()
    if n_left <= 0 or n_right <= 0:
        raise ValueError('Error: chi-square needs nonempty histograms')
    combined = left + right
    grand_total = n_left + n_right
    groups = _pool_groups(min(n_left, n_right) * combined / grand_total)
    if len(groups) < 2:
        log.error('all mass pooled into one bin')
        raise ValueError('Error: all mass pooled into one bin; chi-square is undefined')
    statistic = 0.0
    for start, stop in groups:
        group_total = combined[start:stop].sum()
        expected_left = n_left * group_total / grand_total
        expected_right = n_right * group_total / grand_total
        statistic += (left[start:stop].sum() - expected_left) ** 2 / expected_left
        statistic += (right[start:stop].sum() - expected_right) ** 2 / expected_right
    return _chi_square_result(float(statistic), len(groups))


def tv_distance(empirical: np.ndarray, pmf: np.ndarray) -> float:
    """
    Total-variation distance; both arguments are normalized to unit mass first.
    """
    left, right = _pad(empirical, pmf)
    if left.sum() <= 0 or right.sum() <= 0:
        raise ValueError('Error: tv distance needs nonempty inputs')
    return float(0.5 * np.abs(left / left.sum() - right / right.sum()).sum())


## return diagnostics -----------------------------------------------


def _visit_indices(states: Sequence[PopCount], m: int) -> list[int]:
    return [index for index in range(1, len(states)) if le_int(states[index], m)]


def return_time_stats(traj: HasStates, m: int) -> ReturnStats:
    """
    Visits to {x <= m} over steps 1..horizon, with the mean gap between successive visits.
    """
    horizon = len(traj.states) - 1
    visits = _visit_indices(traj.states, m)
    gaps = np.diff(visits)
    mean_return_time = float(gaps.mean()) if len(gaps) else math.inf
    occupation = len(visits) / horizon if horizon > 0 else 0.0
    log.debug(f'visits, ``{len(visits)}``; occupation, ``{occupation}``')
    return ReturnStats(
        target_set_max=m,
        visit_count=len(visits),
        mean_return_time=mean_return_time,
        occupation_frequency=occupation,
    )


def occupation_halves(traj: HasStates, m: int) -> tuple[float, float]:
    """
    Occupation frequency of {x <= m} over the first and the last half of the steps.
    """
    horizon = len(traj.states) - 1
    if horizon < 2:
        raise ValueError('Error: occupation halves need a horizon of at least 2')
    middle = horizon // 2
    inside = np.array([le_int(state, m) for state in traj.states[1:]], dtype=bool)
    return (float(inside[:middle].mean()), float(inside[middle:].mean()))


def green_plateau_statistic(partial_sums: np.ndarray) -> float:
    """
    Increase of the partial sums over their last half; near zero on a plateau.
    """
    sums = np.asarray(partial_sums, dtype=np.float64)
    if sums.size < 2:
        raise ValueError('Error: plateau statistic needs at least two partial sums')
    return float(sums[-1] - sums[sums.size // 2 - 1])


## output -----------------------------------------------------------


def write_jsonl(summaries: Iterable[dict], path: Path) -> None:
    """
    One JSON object per line, keys sorted.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', encoding='utf-8') as handle:
        for summary in summaries:
            handle.write(json_line(summary) + '\n')
    log.debug(f'wrote jsonl, ``{path}``')
    return
