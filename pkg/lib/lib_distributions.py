"""
Environment and immigration laws.

Contains the survival-probability laws (point mass, uniform on (0,1), finite table),
the immigration laws (deterministic, finite table, log-tail family, inverse-square,
compound-geometric), and their sampling, moments, tails and Laplace transforms.

Notes...
- The log-tail family is P(Z=k) = C / (k (ln k)^(a+1)) for k >= kmin.
  Its normalizer C is computed from partial sums to 10^7 plus a two-sided
  integral bracket on the remainder.
- Tail counts `P(Z >= k)` for the unbounded laws come from a cached table up to
  2^20 and an Euler-Maclaurin tail formula beyond it.
- Inverse-CDF draws that land beyond 2^48 are returned in log form via the
  asymptotic inverse of the tail (relative error on ln Z well below 1e-3 there).
"""

import functools
import logging
import math
from dataclasses import dataclass
from typing import TypedDict

import numpy as np
from scipy import integrate, optimize, special

from lib.lib_common import ConfigError
from lib.lib_popcount import LOG_SWITCH_UP, SWITCH_UP, PopCount, add

log = logging.getLogger(__name__)

NORMALIZER_TERMS: int = 10**7
TABLE_MAX: int = 2**20
SUM_CHUNK: int = 10**6
LAPLACE_TOLERANCE: float = 1e-13
LAPLACE_MAX_TERMS: int = 5 * 10**6
PANJER_MAX: int = 20_000
LEMMA3_DIRECT_LIMIT: float = 2.5e5
INVERSE_SQUARE_C: float = 6.0 / math.pi**2
K1: float = math.exp(-1.0) / (1.0 - math.exp(-1.0))
EXACT_LOG_LIMIT: float = 53.0 * math.log(2.0)
LOG_EXP_MAX: float = 700.0


## ------------------------------------------------------------------
## environment laws -------------------------------------------------
## ------------------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    b: float

    def __post_init__(self) -> None:
        if not (0.0 < self.b < 1.0):
            raise ValueError(f'Error: point-mass beta must lie in (0,1), got ``{self.b}``')


@dataclass(frozen=True)
class Uniform01:
    pass


@dataclass(frozen=True)
class EnvTable:
    """
    Finite table of (value, weight) atoms; values in (0,1), weights positive and summing to 1.
    """

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.atoms:
            raise ValueError('Error: env finite table needs at least one atom')
        for value, weight in self.atoms:
            if not (0.0 < value < 1.0):
                raise ValueError(f'Error: env atom value must lie in (0,1), got ``{value}``')
            if not weight > 0.0:
                raise ValueError(f'Error: env atom weight must be positive, got ``{weight}``')
        total = math.fsum(weight for _, weight in self.atoms)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f'Error: env atom weights must sum to 1 within 1e-12, got ``{total}``')

    @property
    def values(self) -> np.ndarray:
        return np.array([value for value, _ in self.atoms], dtype=np.float64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([weight for _, weight in self.atoms], dtype=np.float64)


EnvDistribution = PointMass | Uniform01 | EnvTable


def env_sample_n(d: EnvDistribution, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws `size` i.i.d. survival probabilities, all strictly inside (0,1).
    """
    match d:
        case PointMass(b=b):
            return np.full(size, b, dtype=np.float64)
        case Uniform01():
            draws = rng.random(size)
            zero_mask = draws == 0.0
            while zero_mask.any():  # random() is on [0,1); 0 is excluded from the law
                draws[zero_mask] = rng.random(int(zero_mask.sum()))
                zero_mask = draws == 0.0
            return draws
        case EnvTable():
            cumulative = np.cumsum(d.weights)
            index = np.searchsorted(cumulative, rng.random(size), side='right')
            return d.values[np.minimum(index, len(d.atoms) - 1)]
    raise TypeError(f'Error: unknown env distribution ``{d!r}``')


def env_sample(d: EnvDistribution, rng: np.random.Generator) -> float:
    return float(env_sample_n(d, 1, rng)[0])


def env_log_moment(d: EnvDistribution) -> float:
    """
    Returns mu = E(-ln beta).
    Exact for point mass and tables; for the uniform law the (0, eps) piece uses the
    antiderivative of -ln x and the rest is adaptive quadrature.
    """
    match d:
        case PointMass(b=b):
            if not (0.0 < b < 1.0):
                raise ValueError(f'Error: point-mass beta must lie in (0,1), got ``{b}``')
            return -math.log(b)
        case EnvTable():
            return math.fsum(-weight * math.log(value) for value, weight in d.atoms)
        case Uniform01():
            eps = 1e-8
            head = eps * (1.0 - math.log(eps))
            body, body_err = integrate.quad(lambda x: -math.log(x), eps, 1.0, epsabs=1e-12, epsrel=1e-12)
            log.debug(f'uniform log-moment quadrature error, ``{body_err}``')
            return head + body
    raise TypeError(f'Error: unknown env distribution ``{d!r}``')


def env_neg_moment(d: EnvDistribution, theta: float) -> float:
    """
    Returns E(beta^-theta); math.inf flags a divergent integral.
    """
    if not theta > 0.0:
        raise ValueError(f'Error: theta must be positive, got ``{theta}``')
    match d:
        case PointMass(b=b):
            return b**-theta
        case EnvTable():
            return math.fsum(weight * value**-theta for value, weight in d.atoms)
        case Uniform01():
            if theta >= 1.0:
                return math.inf
            eps = 1e-8
            head = eps ** (1.0 - theta) / (1.0 - theta)
            body, _ = integrate.quad(lambda x: x**-theta, eps, 1.0, epsabs=1e-12, epsrel=1e-12)
            return head + body
    raise TypeError(f'Error: unknown env distribution ``{d!r}``')


def env_mean(d: EnvDistribution) -> float:
    match d:
        case PointMass(b=b):
            return b
        case EnvTable():
            return math.fsum(weight * value for value, weight in d.atoms)
        case Uniform01():
            return 0.5
    raise TypeError(f'Error: unknown env distribution ``{d!r}``')


## ------------------------------------------------------------------
## immigration laws -------------------------------------------------
## ------------------------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    k: int

    def __post_init__(self) -> None:
        if self.k < 0 or self.k > SWITCH_UP:
            raise ValueError(f'Error: deterministic immigration count out of range, ``{self.k}``')


@dataclass(frozen=True)
class ImmTable:
    """
    Finite table of (count, probability) pairs. Probabilities are renormalized after the 1e-8 sum check.
    """

    pmf: tuple[tuple[int, float], ...]

    def __post_init__(self) -> None:
        if not self.pmf:
            raise ValueError('Error: immigration table needs at least one entry')
        counts = [count for count, _ in self.pmf]
        if len(set(counts)) != len(counts):
            raise ValueError(f'Error: immigration table counts must be distinct, got ``{counts}``')
        for count, prob in self.pmf:
            if count < 0 or count > SWITCH_UP:
                raise ValueError(f'Error: immigration count out of range, ``{count}``')
            if prob < 0.0:
                raise ValueError(f'Error: immigration probability must be nonnegative, ``{prob}``')
        total = math.fsum(prob for _, prob in self.pmf)
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f'Error: immigration probabilities must sum to 1 within 1e-8, got ``{total}``')
        normalized = tuple(sorted((int(count), prob / total) for count, prob in self.pmf))
        object.__setattr__(self, 'pmf', normalized)

    @property
    def counts(self) -> np.ndarray:
        return np.array([count for count, _ in self.pmf], dtype=np.int64)

    @property
    def probs(self) -> np.ndarray:
        return np.array([prob for _, prob in self.pmf], dtype=np.float64)


@dataclass(frozen=True)
class LogTail:
    """
    P(W=k) = C / (k (ln k)^(a+1)) for k >= kmin, and Z = W + shift (shift 0 or -1).
    """

    a: float
    kmin: int = 2
    shift: int = 0

    def __post_init__(self) -> None:
        if not self.a > 0.0:
            raise ValueError(f'Error: log-tail parameter a must be positive, got ``{self.a}``')
        if self.kmin < 2:
            raise ValueError(f'Error: log-tail kmin must be >= 2, got ``{self.kmin}``')
        if self.shift not in (0, -1):
            raise ValueError(f'Error: log-tail shift must be 0 or -1, got ``{self.shift}``')


@dataclass(frozen=True)
class InverseSquare:
    """
    P(Z=k) = (6/pi^2) / k^2 for k >= 1.
    """

    pass


@dataclass(frozen=True)
class CompoundGeometric:
    """
    Law of the sum of G' i.i.d. `base` draws, with P(G'=g) = p (1-p)^g on {0,1,2,...}.
    """

    base: 'ImmigrationDistribution'
    p: float

    def __post_init__(self) -> None:
        if not (0.0 < self.p < 1.0):
            raise ValueError(f'Error: compound-geometric p must lie in (0,1), got ``{self.p}``')


ImmigrationDistribution = Deterministic | ImmTable | LogTail | InverseSquare | CompoundGeometric


class TailReport(TypedDict):
    """
    The tail functional at one t.

    - t: evaluation point
    - tail: P(ln Z > t)
    - tail_low, tail_high: certified bracket on the tail (upper end 1 where no bound is available)
    - functional: t * tail
    """

    t: float
    tail: float
    tail_low: float
    tail_high: float
    functional: float


## normalizer -------------------------------------------------------


def _log_tail_terms(a: float, start: int, stop: int, power: float) -> np.ndarray:
    """
    Returns 1 / (k (ln k)^power) for k in [start, stop).
    """
    k = np.arange(start, stop, dtype=np.float64)
    return 1.0 / (k * np.log(k) ** power)


def _chunked_sum(start: int, stop: int, term_fn) -> float:
    partial_sums: list[float] = []
    for chunk_start in range(start, stop, SUM_CHUNK):
        chunk_stop = min(chunk_start + SUM_CHUNK, stop)
        partial_sums.append(float(np.sum(term_fn(chunk_start, chunk_stop))))
    return math.fsum(partial_sums)


@functools.lru_cache(maxsize=None)
def _log_tail_series(a: float, kmin: int) -> tuple[float, float, float]:
    """
    Returns (partial, remainder_low, remainder_high) for S = sum_{k>=kmin} 1/(k (ln k)^(a+1)).
    The remainder past K = 10^7 is bracketed by int_{K+1}^inf and int_K^inf of the summand.
    """
    log.info(f'::: summing log-tail normalizer series, a ``{a}``, kmin ``{kmin}`` ----------')
    K = NORMALIZER_TERMS
    partial = _chunked_sum(kmin, K + 1, lambda lo, hi: _log_tail_terms(a, lo, hi, a + 1.0))
    remainder_low = 1.0 / (a * math.log(K + 1) ** a)
    remainder_high = 1.0 / (a * math.log(K) ** a)
    log.debug(f'partial, ``{partial}``; remainder bracket, ``{(remainder_low, remainder_high)}``')
    return (partial, remainder_low, remainder_high)


def imm_normalizer_bracket(a: float, kmin: int = 2) -> tuple[float, float]:
    """
    Certified bracket (C_low, C_high) on the log-tail normalizer.
    """
    if not a > 0.0:
        raise ValueError(f'Error: log-tail parameter a must be positive, got ``{a}``')
    if kmin < 2:
        raise ValueError(f'Error: log-tail kmin must be >= 2, got ``{kmin}``')
    partial, remainder_low, remainder_high = _log_tail_series(float(a), int(kmin))
    return (1.0 / (partial + remainder_high), 1.0 / (partial + remainder_low))


def imm_normalizer(a: float, kmin: int = 2) -> float:
    """
    Returns C = 1 / sum_{k>=kmin} 1/(k (ln k)^(a+1)), taking the midpoint of the remainder bracket.
    """
    if not a > 0.0:
        raise ValueError(f'Error: log-tail parameter a must be positive, got ``{a}``')
    if kmin < 2:
        raise ValueError(f'Error: log-tail kmin must be >= 2, got ``{kmin}``')
    partial, remainder_low, remainder_high = _log_tail_series(float(a), int(kmin))
    return 1.0 / (partial + 0.5 * (remainder_low + remainder_high))


def imm_pmf_total_bracket(d: 'ImmigrationDistribution') -> tuple[float, float]:
    """
    Brackets the total pmf mass. Exact (width 0) for finite laws; for the log-tail law
    C times the truncated series plus each end of the remainder bracket.
    """
    match d:
        case LogTail(a=a, kmin=kmin):
            partial, remainder_low, remainder_high = _log_tail_series(float(a), int(kmin))
            c = imm_normalizer(a, kmin)
            return (c * (partial + remainder_low), c * (partial + remainder_high))
        case Deterministic():
            return (1.0, 1.0)
        case ImmTable():
            total = math.fsum(prob for _, prob in d.pmf)
            return (total, total)
        case InverseSquare():
            K = NORMALIZER_TERMS
            partial = _chunked_sum(1, K + 1, lambda lo, hi: 1.0 / np.arange(lo, hi, dtype=np.float64) ** 2)
            return (INVERSE_SQUARE_C * (partial + 1.0 / (K + 1)), INVERSE_SQUARE_C * (partial + 1.0 / K))
        case CompoundGeometric():
            pmf = _compound_pmf_vector(d, PANJER_MAX)
            total = math.fsum(pmf.tolist())
            return (total, 1.0)
    raise TypeError(f'Error: unknown immigration distribution ``{d!r}``')


## tail machinery ---------------------------------------------------


def _log_tail_em_log(a: float, L: np.ndarray | float) -> np.ndarray | float:
    """
    Euler-Maclaurin estimate of sum_{j>=x} 1/(j (ln j)^(a+1)), given L = ln x (no overflow for huge x).
    """
    leading = 1.0 / (a * L**a)
    return leading + np.exp(-L) / (2.0 * L ** (a + 1.0)) + (L + a + 1.0) * np.exp(-2.0 * L) / (12.0 * L ** (a + 2.0))


def _log_tail_em(a: float, x: np.ndarray | float) -> np.ndarray | float:
    return _log_tail_em_log(a, np.log(x))


@functools.lru_cache(maxsize=None)
def _log_tail_table(a: float, kmin: int) -> np.ndarray:
    """
    Returns T with T[j] = P(W >= j) for j in 0..TABLE_MAX+1 (W the unshifted log-tail count).
    Built as a reverse cumulative sum seeded with the Euler-Maclaurin tail, so the table and
    the formula used beyond it agree at the seam.
    """
    log.info(f'::: building log-tail tail table, a ``{a}``, kmin ``{kmin}`` ----------')
    c = imm_normalizer(a, kmin)
    terms = _log_tail_terms(a, kmin, TABLE_MAX + 1, a + 1.0)  # j = kmin..TABLE_MAX
    seed = float(_log_tail_em(a, float(TABLE_MAX + 1)))
    tail_sums = np.cumsum(terms[::-1])[::-1] + seed  # index 0 <-> j = kmin
    table = np.ones(TABLE_MAX + 2, dtype=np.float64)
    table[kmin : TABLE_MAX + 1] = np.minimum(c * tail_sums, 1.0)
    table[kmin] = 1.0
    table[TABLE_MAX + 1] = c * seed
    return table


@functools.lru_cache(maxsize=None)
def _inverse_square_table() -> np.ndarray:
    log.info('::: building inverse-square tail table ----------')
    k = np.arange(TABLE_MAX + 2, dtype=np.float64)
    table = np.ones(TABLE_MAX + 2, dtype=np.float64)
    table[2:] = INVERSE_SQUARE_C * special.polygamma(1, k[2:])
    return table


def _continuous_tail(d: 'ImmigrationDistribution', x: float) -> float:
    """
    Tail count P(W >= x) extended to real x beyond the table (W the unshifted count).
    """
    match d:
        case LogTail(a=a, kmin=kmin):
            return imm_normalizer(a, kmin) * float(_log_tail_em(a, x))
        case InverseSquare():
            return INVERSE_SQUARE_C * float(special.polygamma(1, x))
    raise TypeError(f'Error: no continuous tail for ``{d!r}``')


def _asymptotic_log_inverse(d: 'ImmigrationDistribution', v: float) -> float:
    """
    ln of the count whose tail probability is v, from the leading tail asymptotic.
    """
    match d:
        case LogTail(a=a, kmin=kmin):
            return (imm_normalizer(a, kmin) / (a * v)) ** (1.0 / a)
        case InverseSquare():
            return math.log(INVERSE_SQUARE_C / v)
    raise TypeError(f'Error: no asymptotic inverse for ``{d!r}``')


def _shift_of(d: 'ImmigrationDistribution') -> int:
    return d.shift if isinstance(d, LogTail) else 0


def _unbounded_table(d: 'ImmigrationDistribution') -> np.ndarray:
    if isinstance(d, LogTail):
        return _log_tail_table(float(d.a), int(d.kmin))
    return _inverse_square_table()


def _tail_values(d: 'ImmigrationDistribution', ks: np.ndarray) -> np.ndarray:
    """
    Vectorized P(Z >= k).
    """
    ks = np.asarray(ks, dtype=np.int64)
    match d:
        case Deterministic(k=k):
            return (ks <= k).astype(np.float64)
        case ImmTable():
            counts, probs = d.counts, d.probs
            reverse_cumulative = np.concatenate([np.cumsum(probs[::-1])[::-1], [0.0]])
            index = np.searchsorted(counts, ks, side='left')
            return np.where(ks <= 0, 1.0, reverse_cumulative[index])
        case LogTail() | InverseSquare():
            table = _unbounded_table(d)
            js = ks - _shift_of(d)
            out = np.empty(js.shape, dtype=np.float64)
            in_table = js <= TABLE_MAX + 1
            out[in_table] = table[np.maximum(js[in_table], 0)]
            beyond = ~in_table
            if beyond.any():
                out[beyond] = [_continuous_tail(d, float(j)) for j in js[beyond]]
            return np.where(ks <= 0, 1.0, out)
        case CompoundGeometric():
            kmax = min(int(ks.max(initial=0)), PANJER_MAX)
            pmf = _compound_pmf_vector(d, kmax)
            head_mass = np.concatenate([[0.0], np.cumsum(pmf)])  # head_mass[k] = P(Z < k)
            out = np.clip(1.0 - head_mass[np.clip(ks, 0, kmax + 1)], 0.0, 1.0)
            beyond = ks > kmax + 1
            if beyond.any():
                out[beyond] = _compound_tail_beyond(d, ks[beyond])
            return np.where(ks <= 0, 1.0, out)
    raise TypeError(f'Error: unknown immigration distribution ``{d!r}``')


def _pmf_values(d: 'ImmigrationDistribution', ks: np.ndarray) -> np.ndarray:
    """
    Vectorized P(Z = k).
    """
    ks = np.asarray(ks, dtype=np.int64)
    match d:
        case Deterministic(k=k):
            return (ks == k).astype(np.float64)
        case ImmTable():
            lookup = dict(d.pmf)
            return np.array([lookup.get(int(k), 0.0) for k in ks.ravel()], dtype=np.float64).reshape(ks.shape)
        case LogTail(a=a, kmin=kmin, shift=shift):
            c = imm_normalizer(a, kmin)
            js = (ks - shift).astype(np.float64)
            valid = js >= kmin
            safe = np.where(valid, js, float(kmin))
            return np.where(valid, c / (safe * np.log(safe) ** (a + 1.0)), 0.0)
        case InverseSquare():
            safe = np.maximum(ks, 1).astype(np.float64)
            return np.where(ks >= 1, INVERSE_SQUARE_C / safe**2, 0.0)
        case CompoundGeometric():
            kmax = min(int(ks.max(initial=0)), PANJER_MAX)
            pmf = _compound_pmf_vector(d, kmax)
            out = np.where((ks >= 0) & (ks <= kmax), pmf[np.clip(ks, 0, kmax)], 0.0)
            beyond = ks > kmax
            if beyond.any():
                ## past the recursion table the pmf is the difference of the extrapolated tail
                out[beyond] = np.maximum(_tail_values(d, ks[beyond]) - _tail_values(d, ks[beyond] + 1), 0.0)
            return out
    raise TypeError(f'Error: unknown immigration distribution ``{d!r}``')


@functools.lru_cache(maxsize=64)
def _compound_pmf_cached(d: 'CompoundGeometric', kmax: int) -> np.ndarray:
    """
    Panjer recursion for a geometric number of summands:
    f_S(0) = p / (1 - q f_Z(0)),  f_S(k) = q / (1 - q f_Z(0)) * sum_{j=1..k} f_Z(j) f_S(k-j).
    """
    q = 1.0 - d.p
    base_pmf = _pmf_values(d.base, np.arange(kmax + 1))
    scale = 1.0 / (1.0 - q * base_pmf[0])
    pmf = np.zeros(kmax + 1, dtype=np.float64)
    pmf[0] = d.p * scale
    for k in range(1, kmax + 1):
        pmf[k] = q * scale * float(np.dot(base_pmf[1 : k + 1], pmf[k - 1 :: -1][:k]))
    return pmf


def _compound_pmf_vector(d: 'CompoundGeometric', kmax: int) -> np.ndarray:
    if kmax > PANJER_MAX:
        raise ValueError(f'Error: compound-geometric pmf requested beyond ``{PANJER_MAX}``, got ``{kmax}``')
    return _compound_pmf_cached(d, max(int(kmax), 0))


def _bounded_support(d: 'ImmigrationDistribution') -> tuple[np.ndarray, np.ndarray]:
    """
    (counts, probabilities) with positive probability, for the bounded laws.
    """
    match d:
        case Deterministic(k=k):
            return (np.array([k], dtype=np.float64), np.array([1.0]))
        case ImmTable():
            keep = d.probs > 0.0
            return (d.counts[keep].astype(np.float64), d.probs[keep])
    raise TypeError(f'Error: no bounded support for ``{d!r}``')


@functools.lru_cache(maxsize=64)
def _compound_decay_rate(d: 'CompoundGeometric') -> float:
    """
    Adjustment coefficient gamma of a compound-geometric law with bounded base: the root of
    (1-p) E(e^(gamma Z)) = 1. Lundberg's inequality gives P(S > u) <= e^(-gamma u), and the tail
    decays at rate e^(-gamma) per count. Returns inf when the base is 0 almost surely.
    """
    counts, probs = _bounded_support(d.base)
    if counts.max() <= 0.0:
        return math.inf
    log_q = math.log1p(-d.p)
    log_probs = np.log(probs)

    def excess(gamma: float) -> float:
        return log_q + float(special.logsumexp(gamma * counts + log_probs))

    top = int(np.argmax(counts))
    upper = (-log_q - log_probs[top]) / counts[top] + 1.0
    return optimize.brentq(excess, 0.0, upper, xtol=1e-18)


def _compound_tail_beyond(d: 'CompoundGeometric', ks: np.ndarray) -> np.ndarray:
    """
    P(Z >= k) for counts past the recursion table.
    Bounded base: the last table tail extended at the geometric rate e^(-gamma), capped by Lundberg's bound.
    Unbounded base: the subexponential rule E(G') P(base >= k), kept within [(1-p) P(base >= k), 1].
    """
    ks = np.asarray(ks, dtype=np.int64)
    edge = PANJER_MAX + 1
    if imm_support_max(d.base) is not None:
        gamma = _compound_decay_rate(d)
        if math.isinf(gamma):
            return np.zeros(ks.shape, dtype=np.float64)
        edge_tail = float(_tail_values(d, np.array([edge]))[0])
        extrapolated = edge_tail * np.exp(-gamma * (ks - edge).astype(np.float64))
        return np.minimum(extrapolated, np.exp(-gamma * (ks.astype(np.float64) - 1.0)))
    base_tail = _tail_values(d.base, ks)
    return np.clip((1.0 - d.p) / d.p * base_tail, (1.0 - d.p) * base_tail, 1.0)


def imm_support_max(d: 'ImmigrationDistribution') -> int | None:
    """
    Largest count in the support, or None for unbounded laws.
    """
    match d:
        case Deterministic(k=k):
            return k
        case ImmTable():
            return max(count for count, prob in d.pmf if prob > 0.0)
    return None


## pmf / cdf / tail -------------------------------------------------


def imm_pmf(d: 'ImmigrationDistribution', k: int) -> float:
    return float(_pmf_values(d, np.array([k]))[0])


def imm_tail_count(d: 'ImmigrationDistribution', k: int) -> float:
    """
    Returns P(Z >= k).
    """
    return float(_tail_values(d, np.array([k]))[0])


def imm_cdf(d: 'ImmigrationDistribution', k: int) -> float:
    """
    Returns P(Z <= k), defined as 1 - P(Z >= k+1) so the two always add to 1.
    """
    if k < 0:
        return 0.0
    return 1.0 - imm_tail_count(d, k + 1)


def imm_irreducible(d: 'ImmigrationDistribution') -> bool:
    """
    True when P(Z >= 2) > 0.
    """
    return imm_tail_count(d, 2) > 0.0


## sampling ---------------------------------------------------------


def _invert_beyond_table(d: 'ImmigrationDistribution', v: float) -> PopCount:
    """
    Smallest count j with P(W >= j+1) <= v, for v below the table's last tail value.
    """
    log_guess = _asymptotic_log_inverse(d, v)
    if log_guess > LOG_SWITCH_UP:
        return PopCount.log_scale(log_guess)
    lower, upper = math.log(TABLE_MAX + 1), LOG_SWITCH_UP + 1.0

    def excess(log_x: float) -> float:
        return _continuous_tail(d, math.exp(log_x)) - v

    if excess(upper) > 0.0:
        return PopCount.log_scale(log_guess)
    root = optimize.brentq(excess, lower, upper, xtol=1e-14, rtol=1e-15)
    j = max(math.ceil(math.exp(root)) - 1, TABLE_MAX)
    while _continuous_tail(d, float(j + 1)) > v:
        j += 1
    while j > TABLE_MAX + 1 and _continuous_tail(d, float(j)) <= v:
        j -= 1
    return PopCount.from_int(j + _shift_of(d))


def _sample_unbounded(d: 'ImmigrationDistribution', size: int, rng: np.random.Generator) -> list[PopCount]:
    table = _unbounded_table(d)
    ascending = table[::-1]
    shift = _shift_of(d)
    floor_j = d.kmin if isinstance(d, LogTail) else 1
    tail_uniforms = 1.0 - rng.random(size)  # v in (0,1]
    above = len(table) - np.searchsorted(ascending, tail_uniforms, side='right')  # entries with T > v
    draws: list[PopCount] = []
    for v, count_above in zip(tail_uniforms.tolist(), above.tolist()):
        if count_above < len(table):
            draws.append(PopCount.exact(max(count_above - 1, floor_j) + shift))
        else:
            draws.append(_invert_beyond_table(d, v))
    return draws


def imm_sample_counts(d: 'ImmigrationDistribution', size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Vectorized draws as an int64 array; only for laws whose draws are always exact and modest
    (deterministic, tables, compound-geometric of those).
    """
    match d:
        case Deterministic(k=k):
            return np.full(size, k, dtype=np.int64)
        case ImmTable():
            cumulative = np.cumsum(d.probs)
            index = np.searchsorted(cumulative, rng.random(size), side='right')
            return d.counts[np.minimum(index, len(d.pmf) - 1)]
        case CompoundGeometric(base=base, p=p):
            summands = rng.geometric(p, size) - 1
            base_draws = imm_sample_counts(base, int(summands.sum()), rng)
            totals = np.zeros(size, dtype=np.int64)
            np.add.at(totals, np.repeat(np.arange(size), summands), base_draws)
            return totals
    raise ValueError(f'Error: integer-array sampling needs a bounded immigration law, got ``{d!r}``')


def imm_sample_n(d: 'ImmigrationDistribution', size: int, rng: np.random.Generator) -> list[PopCount]:
    """
    Draws `size` i.i.d. immigration counts by inverse-CDF sampling.
    """
    match d:
        case Deterministic() | ImmTable():
            return [PopCount.exact(count) for count in imm_sample_counts(d, size, rng).tolist()]
        case LogTail() | InverseSquare():
            return _sample_unbounded(d, size, rng)
        case CompoundGeometric(base=base, p=p):
            if imm_support_max(base) is not None:
                return [PopCount.from_int(count) for count in imm_sample_counts(d, size, rng).tolist()]
            summands = (rng.geometric(p, size) - 1).tolist()
            base_draws = imm_sample_n(base, int(sum(summands)), rng)
            draws: list[PopCount] = []
            position = 0
            for count in summands:
                total = PopCount.exact(0)
                for draw in base_draws[position : position + count]:
                    total = add(total, draw)
                draws.append(total)
                position += count
            return draws
    raise TypeError(f'Error: unknown immigration distribution ``{d!r}``')


def imm_sample(d: 'ImmigrationDistribution', rng: np.random.Generator) -> PopCount:
    return imm_sample_n(d, 1, rng)[0]


## moments and tails ------------------------------------------------


@functools.lru_cache(maxsize=None)
def _log_tail_log_moment(a: float, kmin: int, shift: int) -> float:
    K = NORMALIZER_TERMS

    def terms(lo: int, hi: int) -> np.ndarray:
        j = np.arange(lo, hi, dtype=np.float64)
        return np.log(np.maximum(j + shift, 1.0)) / (j * np.log(j) ** (a + 1.0))

    partial = _chunked_sum(kmin, K + 1, terms)
    remainder_low = 1.0 / ((a - 1.0) * math.log(K + 1) ** (a - 1.0))
    remainder_high = 1.0 / ((a - 1.0) * math.log(K) ** (a - 1.0))
    return imm_normalizer(a, kmin) * (partial + 0.5 * (remainder_low + remainder_high))


@functools.lru_cache(maxsize=None)
def _inverse_square_log_moment() -> float:
    K = 10**6

    def chunk(lo: int, hi: int) -> np.ndarray:
        k = np.arange(lo, hi, dtype=np.float64)
        return np.log(k) / k**2

    partial = _chunked_sum(2, K + 1, chunk)
    ## int_x^inf ln t / t^2 dt = (ln x + 1) / x
    remainder_low = (math.log(K + 1) + 1.0) / (K + 1)
    remainder_high = (math.log(K) + 1.0) / K
    return INVERSE_SQUARE_C * (partial + 0.5 * (remainder_low + remainder_high))


def imm_log_moment(d: 'ImmigrationDistribution') -> float:
    """
    Returns E(ln+ Z) = E(ln max(Z,1)); math.inf flags divergence.
    Divergence is decided by variant (log-tail with a <= 1), never numerically.
    """
    match d:
        case Deterministic(k=k):
            return math.log(k) if k >= 1 else 0.0
        case ImmTable():
            return math.fsum(prob * math.log(count) for count, prob in d.pmf if count >= 1)
        case LogTail(a=a, kmin=kmin, shift=shift):
            if a <= 1.0:
                return math.inf
            return _log_tail_log_moment(float(a), int(kmin), int(shift))
        case InverseSquare():
            return _inverse_square_log_moment()
        case CompoundGeometric(base=base):
            if math.isinf(imm_log_moment(base)):
                return math.inf
            pmf = _compound_pmf_vector(d, PANJER_MAX)
            ks = np.arange(1, len(pmf), dtype=np.float64)
            return float(np.sum(np.log(ks) * pmf[1:]))
    raise TypeError(f'Error: unknown immigration distribution ``{d!r}``')


def log_tail(d: 'ImmigrationDistribution', t: float) -> TailReport:
    """
    Returns the tail functional t P(ln Z > t) with a bracket on the tail.
    Exact tail counts while e^t is in exact integer range; beyond that the tail of the unshifted
    count is bracketed in the log domain by its integral bounds, and the point value is the
    Euler-Maclaurin estimate kept inside the bracket.
    """
    if not t > 0.0:
        raise ValueError(f'Error: t must be positive, got ``{t}``')
    if t <= EXACT_LOG_LIMIT:
        k = math.floor(math.exp(t)) + 1
        tail = imm_tail_count(d, k)
        low, high = _tail_count_bracket(d, k, tail)
    else:
        ## Z > e^t means W >= j with ln j in (t, t + ln(1 + (1 - shift) e^-t)]
        low, high = _log_domain_bracket(d, t, t + math.log1p((1 - _shift_of(d)) * math.exp(-t)))
        tail = min(max(_asymptotic_log_tail(d, t), low), high)
    return TailReport(t=t, tail=tail, tail_low=low, tail_high=high, functional=t * tail)


def _log_domain_bracket(d: 'ImmigrationDistribution', log_low: float, log_high: float) -> tuple[float, float]:
    """
    Bracket on P(W >= j) for an unshifted count j with ln j in [log_low, log_high], from
    int_j^inf f <= sum_{i>=j} f(i) <= f(j) + int_j^inf f and the normalizer bracket.
    """
    match d:
        case Deterministic() | ImmTable():
            return (0.0, 0.0)
        case LogTail(a=a, kmin=kmin):
            c_low, c_high = imm_normalizer_bracket(a, kmin)
            low = c_low / (a * log_high**a)
            high = c_high * (1.0 / (a * log_low**a) + math.exp(-log_low) / log_low ** (a + 1.0))
            return (low, min(high, 1.0))
        case InverseSquare():
            low = INVERSE_SQUARE_C * math.exp(-log_high)
            high = INVERSE_SQUARE_C * (math.exp(-log_low) + math.exp(-2.0 * log_low))
            return (low, min(high, 1.0))
        case CompoundGeometric(base=base, p=p):
            if imm_support_max(base) is not None:
                gamma = _compound_decay_rate(d)
                if math.isinf(gamma):
                    return (0.0, 0.0)
                return (0.0, math.exp(-gamma * math.expm1(min(log_low, LOG_EXP_MAX))))
            base_low, _ = _log_domain_bracket(base, log_low, log_high)
            return ((1.0 - p) * base_low, 1.0)
    raise TypeError(f'Error: unknown immigration distribution ``{d!r}``')


def _tail_count_bracket(d: 'ImmigrationDistribution', k: int, tail: float) -> tuple[float, float]:
    """
    Bracket on P(Z >= k). Table and recursion values are taken as exact; counts past them get
    the integral bracket (unbounded laws) or the compound-geometric bounds.
    """
    match d:
        case LogTail() | InverseSquare() if k - _shift_of(d) > TABLE_MAX + 1:
            log_j = math.log(k - _shift_of(d))
            return _log_domain_bracket(d, log_j, log_j)
        case CompoundGeometric(base=base, p=p) if k > PANJER_MAX + 1:
            if imm_support_max(base) is not None:
                gamma = _compound_decay_rate(d)
                return (0.0, 0.0) if math.isinf(gamma) else (0.0, math.exp(-gamma * (k - 1)))
            base_low, _ = _tail_count_bracket(base, k, imm_tail_count(base, k))
            return ((1.0 - p) * base_low, 1.0)
    return (tail, tail)


def _asymptotic_log_tail(d: 'ImmigrationDistribution', t: float) -> float:
    match d:
        case Deterministic() | ImmTable():
            return 0.0
        case LogTail(a=a, kmin=kmin):
            return imm_normalizer(a, kmin) * float(_log_tail_em_log(a, t))
        case InverseSquare():
            return INVERSE_SQUARE_C * math.exp(-t)
        case CompoundGeometric(base=base, p=p):
            ## subexponential sums: tail of the sum ~ E(G') times the base tail
            return (1.0 - p) / p * _asymptotic_log_tail(base, t)
    raise TypeError(f'Error: unknown immigration distribution ``{d!r}``')


## Laplace transform ------------------------------------------------


def _laplace_cutoff(d: 'ImmigrationDistribution', lam: float) -> int:
    support_max = imm_support_max(d)
    if support_max is not None:
        return support_max
    cutoff = math.ceil(-math.log(LAPLACE_TOLERANCE) / lam)
    if cutoff > LAPLACE_MAX_TERMS:
        raise ValueError(f'Error: lambda ``{lam}`` needs more than ``{LAPLACE_MAX_TERMS}`` terms')
    return cutoff


def laplace_direct(d: 'ImmigrationDistribution', lam: float) -> float:
    """
    E(e^-lam Z) summed from the pmf; truncation error below 1e-13.
    """
    if not lam > 0.0:
        raise ValueError(f'Error: lambda must be positive, got ``{lam}``')
    cutoff = _laplace_cutoff(d, lam)
    ks = np.arange(cutoff + 1)
    return float(np.sum(np.exp(-lam * ks) * _pmf_values(d, ks)))


def laplace_tail_form(d: 'ImmigrationDistribution', lam: float) -> float:
    """
    E(e^-lam Z) through the tail-count identity 1 - (e^lam - 1) sum_{k>=1} e^-lam k P(Z >= k).
    """
    if not lam > 0.0:
        raise ValueError(f'Error: lambda must be positive, got ``{lam}``')
    cutoff = _laplace_cutoff(d, lam)
    ks = np.arange(1, cutoff + 1)
    weighted = float(np.sum(np.exp(-lam * ks) * _tail_values(d, ks)))
    return 1.0 - math.expm1(lam) * weighted


def series_bound(c: float, i: int) -> tuple[float, float]:
    """
    Returns (lhs, rhs) for  c^i sum_{k >= d^i} e^(-c^i k) / ln k  <=  k1 / (i ln d),  d = 1/c.

    The lhs is summed directly while d^i <= 2.5e5; past that the index range is too wide and
    the lhs is the upper end of the integral bracket  int_m^inf f <= sum_{k>=m} f(k) <= f(m) + int_m^inf f.
    """
    if not (0.0 < c < 1.0):
        raise ValueError(f'Error: c must lie in (0,1), got ``{c}``')
    if i < 1:
        raise ValueError(f'Error: i must be >= 1, got ``{i}``')
    ln_d = -math.log(c)
    rhs = K1 / (i * ln_d)
    lam = c**i
    log_start = i * ln_d
    if log_start <= math.log(LEMMA3_DIRECT_LIMIT):
        start = max(math.ceil(c**-i), 2)
        stop = start + math.ceil(32.0 / lam) + 1

        def terms(lo: int, hi: int) -> np.ndarray:
            k = np.arange(lo, hi, dtype=np.float64)
            return np.exp(-lam * k) / np.log(k)

        lhs = lam * _chunked_sum(start, stop, terms)
    else:
        log.debug(f'series-bound lhs via integral bracket, c ``{c}``, i ``{i}``')
        y_start = lam * math.ceil(c**-i) if log_start < 700.0 else 1.0
        integral, _ = integrate.quad(lambda y: math.exp(-y) / (math.log(y) - math.log(lam)), y_start, math.inf)
        first_term = lam * math.exp(-y_start) / (math.log(y_start) - math.log(lam))
        lhs = integral + first_term
    return (lhs, rhs)


## JSON grammar -----------------------------------------------------


def _require_keys(spec: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f'Error: unknown keys in ``{where}``: ``{sorted(unknown)}``')
    missing = required - set(spec)
    if missing:
        raise ConfigError(f'Error: missing keys in ``{where}``: ``{sorted(missing)}``')


def env_from_spec(spec: dict) -> EnvDistribution:
    """
    Builds an env law from its JSON description, e.g. {"type": "point_mass", "beta": 0.4}.
    """
    if not isinstance(spec, dict) or 'type' not in spec:
        raise ConfigError(f'Error: env spec must be an object with a ``type``, got ``{spec!r}``')
    kind = spec['type']
    try:
        if kind == 'point_mass':
            _require_keys(spec, {'type', 'beta'}, {'beta'}, 'env')
            return PointMass(b=float(spec['beta']))
        if kind == 'uniform01':
            _require_keys(spec, {'type'}, set(), 'env')
            return Uniform01()
        if kind == 'finite_table':
            _require_keys(spec, {'type', 'atoms'}, {'atoms'}, 'env')
            return EnvTable(atoms=tuple((float(value), float(weight)) for value, weight in spec['atoms']))
    except (TypeError, ValueError) as err:
        raise ConfigError(f'Error: invalid env spec ``{spec!r}``: {err}')
    raise ConfigError(f'Error: unknown env type ``{kind}``')


def imm_from_spec(spec: dict) -> ImmigrationDistribution:
    """
    Builds an immigration law from its JSON description, e.g. {"type": "log_tail", "a": 1.0}.
    """
    if not isinstance(spec, dict) or 'type' not in spec:
        raise ConfigError(f'Error: imm spec must be an object with a ``type``, got ``{spec!r}``')
    kind = spec['type']
    try:
        if kind == 'deterministic':
            _require_keys(spec, {'type', 'k'}, {'k'}, 'imm')
            return Deterministic(k=int(spec['k']))
        if kind == 'finite_table':
            _require_keys(spec, {'type', 'pmf'}, {'pmf'}, 'imm')
            return ImmTable(pmf=tuple((int(count), float(prob)) for count, prob in spec['pmf']))
        if kind == 'log_tail':
            _require_keys(spec, {'type', 'a', 'kmin', 'shift'}, {'a'}, 'imm')
            return LogTail(a=float(spec['a']), kmin=int(spec.get('kmin', 2)), shift=int(spec.get('shift', 0)))
        if kind == 'inverse_square':
            _require_keys(spec, {'type'}, set(), 'imm')
            return InverseSquare()
        if kind == 'compound_geometric':
            _require_keys(spec, {'type', 'p', 'base'}, {'p', 'base'}, 'imm')
            return CompoundGeometric(base=imm_from_spec(spec['base']), p=float(spec['p']))
    except (TypeError, ValueError) as err:
        raise ConfigError(f'Error: invalid imm spec ``{spec!r}``: {err}')
    raise ConfigError(f'Error: unknown imm type ``{kind}``')


def env_to_spec(d: EnvDistribution) -> dict:
    match d:
        case PointMass(b=b):
            return {'type': 'point_mass', 'beta': b}
        case Uniform01():
            return {'type': 'uniform01'}
        case EnvTable():
            return {'type': 'finite_table', 'atoms': [list(atom) for atom in d.atoms]}
    raise TypeError(f'Error: unknown env distribution ``{d!r}``')


def imm_to_spec(d: ImmigrationDistribution) -> dict:
    match d:
        case Deterministic(k=k):
            return {'type': 'deterministic', 'k': k}
        case ImmTable():
            return {'type': 'finite_table', 'pmf': [list(entry) for entry in d.pmf]}
        case LogTail(a=a, kmin=kmin, shift=shift):
            return {'type': 'log_tail', 'a': a, 'kmin': kmin, 'shift': shift}
        case InverseSquare():
            return {'type': 'inverse_square'}
        case CompoundGeometric(base=base, p=p):
            return {'type': 'compound_geometric', 'p': p, 'base': imm_to_spec(base)}
    raise TypeError(f'Error: unknown immigration distribution ``{d!r}``')
