"""
Regime classification of the catastrophe chain.

Verdict rules, in order:
- E(ln Z) finite                                  -> positive recurrent
- independence holds and limsup t P(ln Z>t) < mu  -> null recurrent (recurrent, and not positive recurrent)
- E(beta^-theta) finite for some theta > 0
  and liminf t P(ln Z>t) > mu                     -> transient
- otherwise                                       -> indeterminate, with reasons

For the log-tail family with a = 1 the split point is beta_c = exp(-C). Below beta_c the chain is
null recurrent, above it transient: mu = -ln beta exceeds C exactly when beta < beta_c.
"""

import logging
import math
from dataclasses import dataclass
from enum import StrEnum
from typing import TypedDict

import numpy as np

from lib.lib_distributions import (
    CompoundGeometric,
    Deterministic,
    EnvDistribution,
    ImmigrationDistribution,
    ImmTable,
    InverseSquare,
    LogTail,
    PointMass,
    env_log_moment,
    env_neg_moment,
    imm_log_moment,
    imm_normalizer,
    imm_normalizer_bracket,
    imm_sample_n,
)

log = logging.getLogger(__name__)

CRITICAL_TOLERANCE: float = 1e-9
HYP2_PROBES: tuple[float, ...] = (1.0, 0.5, 0.1, 0.01)

## citation tags carried in Regime.citations
LOG_MOMENT_CRITERION = 'log-moment-criterion'
LOG_MOMENT_CONVERSE = 'log-moment-converse'
TAIL_RECURRENCE_CRITERION = 'tail-recurrence-criterion'
TAIL_TRANSIENCE_CRITERION = 'tail-transience-criterion'
CRITICAL_ORIENTATION = 'critical-value-orientation'


class Verdict(StrEnum):
    POSITIVE_RECURRENT = 'positive_recurrent'
    NULL_RECURRENT = 'null_recurrent'
    TRANSIENT = 'transient'
    INDETERMINATE = 'indeterminate'


class Regime(TypedDict):
    """
    - verdict: one of the Verdict values
    - citations: criterion tags justifying the verdict
    - reasons: why no verdict could be reached (nonempty exactly when indeterminate)
    """

    verdict: str
    citations: list[str]
    reasons: list[str]


@dataclass(frozen=True)
class ClassificationInput:
    mu: float
    tail_limsup: float
    tail_liminf: float
    log_z_finite: bool
    hyp1: bool
    hyp2: bool

    def __post_init__(self) -> None:
        if self.tail_liminf < 0.0:
            raise ValueError(f'Error: tail liminf must be nonnegative, got ``{self.tail_liminf}``')
        if self.tail_liminf > self.tail_limsup:
            raise ValueError(
                f'Error: tail liminf ``{self.tail_liminf}`` exceeds tail limsup ``{self.tail_limsup}``'
            )


def classify_general(inp: ClassificationInput) -> Regime:
    if not inp.mu > 0.0:
        log.error(f'mu must be positive, got ``{inp.mu}``')
        raise ValueError(f'Error: mu must be positive, got ``{inp.mu}``')
    if inp.log_z_finite:
        return Regime(verdict=Verdict.POSITIVE_RECURRENT.value, citations=[LOG_MOMENT_CRITERION], reasons=[])
    if inp.hyp1 and inp.tail_limsup < inp.mu:
        return Regime(
            verdict=Verdict.NULL_RECURRENT.value,
            citations=[TAIL_RECURRENCE_CRITERION, LOG_MOMENT_CONVERSE],
            reasons=[],
        )
    if inp.hyp2 and inp.tail_liminf > inp.mu:
        return Regime(verdict=Verdict.TRANSIENT.value, citations=[TAIL_TRANSIENCE_CRITERION], reasons=[])
    reasons: list[str] = []
    if inp.tail_limsup < inp.mu:
        reasons.append('tail limsup is below mu but beta and Z are not known to be independent')
    if inp.tail_liminf > inp.mu:
        reasons.append('tail liminf exceeds mu but no negative moment of beta is known to be finite')
    if inp.tail_liminf <= inp.mu <= inp.tail_limsup:
        reasons.append(f'mu ``{inp.mu}`` lies between the tail limits ``{inp.tail_liminf}`` and ``{inp.tail_limsup}``')
    return Regime(verdict=Verdict.INDETERMINATE.value, citations=[], reasons=reasons)


def beta_critical(a: float = 1.0) -> float:
    """
    beta_c = exp(-C) for the a = 1 log-tail law.
    """
    if a != 1.0:
        raise ValueError(f'Error: beta_c is only defined for a = 1, got ``{a}``')
    return math.exp(-imm_normalizer(1.0))


def beta_critical_bracket() -> tuple[float, float]:
    c_low, c_high = imm_normalizer_bracket(1.0)
    return (math.exp(-c_high), math.exp(-c_low))


def tail_limits(imm: ImmigrationDistribution) -> tuple[float, float]:
    """
    Analytic (liminf, limsup) of t P(ln Z > t) as t -> inf.
    """
    match imm:
        case Deterministic() | ImmTable() | InverseSquare():
            return (0.0, 0.0)
        case LogTail(a=a, kmin=kmin):
            if a > 1.0:
                return (0.0, 0.0)
            if a < 1.0:
                return (math.inf, math.inf)
            c = imm_normalizer(a, kmin)
            return (c, c)
        case CompoundGeometric(base=base, p=p):
            scale = (1.0 - p) / p
            low, high = tail_limits(base)
            return (low * scale, high * scale)
    raise TypeError(f'Error: unknown immigration distribution ``{imm!r}``')


def classify_example(a: float, beta: float) -> Regime:
    """
    Verdict for point-mass beta and the log-tail law with parameter a.
    """
    if not a > 0.0:
        raise ValueError(f'Error: a must be positive, got ``{a}``')
    if not (0.0 < beta < 1.0):
        raise ValueError(f'Error: beta must lie in (0,1), got ``{beta}``')
    if a == 1.0:
        beta_c = beta_critical()
        if abs(beta - beta_c) <= CRITICAL_TOLERANCE:
            return Regime(
                verdict=Verdict.INDETERMINATE.value,
                citations=[CRITICAL_ORIENTATION],
                reasons=[f'beta is within ``{CRITICAL_TOLERANCE}`` of beta_c ``{beta_c}``'],
            )
    regime = classify_distributions(PointMass(b=beta), LogTail(a=a))
    if a == 1.0:
        regime['citations'].append(CRITICAL_ORIENTATION)
    return regime


def classification_input_for(env: EnvDistribution, imm: ImmigrationDistribution) -> ClassificationInput:
    """
    Builds the classifier input from full laws; beta and Z are sampled independently, so
    independence always holds.
    """
    liminf, limsup = tail_limits(imm)
    hyp2 = any(math.isfinite(env_neg_moment(env, theta)) for theta in HYP2_PROBES)
    return ClassificationInput(
        mu=env_log_moment(env),
        tail_limsup=limsup,
        tail_liminf=liminf,
        log_z_finite=math.isfinite(imm_log_moment(imm)),
        hyp1=True,
        hyp2=hyp2,
    )


def classify_distributions(env: EnvDistribution, imm: ImmigrationDistribution) -> Regime:
    return classify_general(classification_input_for(env, imm))


## log-moment series diagnostic -------------------------------------


def geometric_weighted_terms(
    imm: ImmigrationDistribution, b: float, n: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Terms Z_i b^i for i.i.d. Z draws, computed in log space; a term too large for a float is inf.
    """
    if not (0.0 < b < 1.0):
        raise ValueError(f'Error: b must lie in (0,1), got ``{b}``')
    if n < 1:
        raise ValueError(f'Error: n must be >= 1, got ``{n}``')
    draws = imm_sample_n(imm, n, rng)
    log_terms = np.array([draw.log_value for draw in draws], dtype=np.float64) + np.arange(1, n + 1) * math.log(b)
    with np.errstate(over='ignore'):
        return np.exp(log_terms)


def geometric_weighted_series(
    imm: ImmigrationDistribution, b: float, n: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Partial sums sum_{i<=n} Z_i b^i of the terms above.
    """
    return np.cumsum(geometric_weighted_terms(imm, b, n, rng))


def last_half_max_increment(terms: np.ndarray) -> float:
    """
    Largest single increment of the partial sums over the last half of the indices.
    Takes the terms rather than the sums, so an overflowed term reads as inf and never as inf - inf.
    """
    values = np.asarray(terms, dtype=np.float64)
    if values.size < 2:
        raise ValueError('Error: need at least two terms')
    return float(values[values.size // 2 :].max())
