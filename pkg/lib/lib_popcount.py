"""
Hybrid population count.

A PopCount is either an exact nonnegative integer or, for populations too large
for exact machine arithmetic, the natural log of the population.

Encoding rules:
- values above 2^48 are held in log form (switch up);
- log-form values below 2^47 are rounded back to exact integers (switch down);
- between 2^47 and 2^48 a value keeps whichever form it arrived in.
"""

import functools
import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

SWITCH_UP: int = 2**48
SWITCH_DOWN: int = 2**47
EXACT_MAX: int = 2**53
LOG_SWITCH_UP: float = math.log(SWITCH_UP)
LOG_SWITCH_DOWN: float = math.log(SWITCH_DOWN)


@functools.total_ordering
@dataclass(frozen=True)
class PopCount:
    """
    Exactly one of `n` / `logval` is set.
    """

    n: int | None = None
    logval: float | None = None

    def __post_init__(self) -> None:
        if (self.n is None) == (self.logval is None):
            raise ValueError('Error: PopCount needs exactly one of n / logval')
        if self.n is not None:
            if self.n < 0 or self.n > EXACT_MAX:
                raise ValueError(f'Error: exact PopCount out of range, ``{self.n}``')
        elif not (self.logval > LOG_SWITCH_DOWN):  # type: ignore[operator]
            raise ValueError(f'Error: log-scale PopCount below the switch-down level, ``{self.logval}``')

    ## constructors -------------------------------------------------

    @classmethod
    def exact(cls, n: int) -> 'PopCount':
        return cls(n=int(n))

    @classmethod
    def log_scale(cls, logval: float) -> 'PopCount':
        return cls(logval=float(logval))

    @classmethod
    def from_log(cls, logval: float, was_log: bool = True) -> 'PopCount':
        """
        Encodes a population given by its log, applying the hysteresis band.
        `was_log` says which form the value came from, which matters only inside the band.
        """
        if logval > LOG_SWITCH_UP or (was_log and logval > LOG_SWITCH_DOWN):
            return cls(logval=float(logval))
        if logval == -math.inf:
            return cls(n=0)
        return cls(n=int(round(math.exp(logval))))

    @classmethod
    def from_int(cls, n: int) -> 'PopCount':
        """
        Encodes an exact count, switching up to log form above 2^48.
        """
        if n > SWITCH_UP:
            return cls(logval=math.log(n))
        return cls(n=int(n))

    ## views --------------------------------------------------------

    @property
    def is_exact(self) -> bool:
        return self.n is not None

    @property
    def log_value(self) -> float:
        """
        Natural log of the population (-inf for an empty population).
        """
        if self.n is not None:
            return math.log(self.n) if self.n > 0 else -math.inf
        return self.logval  # type: ignore[return-value]

    @property
    def log10_value(self) -> float:
        return self.log_value / math.log(10)

    def as_float(self) -> float:
        """
        Population as a float; inf when it overflows.
        """
        if self.n is not None:
            return float(self.n)
        if self.logval > 709.0:  # type: ignore[operator]
            return math.inf
        return math.exp(self.logval)  # type: ignore[arg-type]

    ## ordering -----------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PopCount):
            return NotImplemented
        if self.n is not None and other.n is not None:
            return self.n == other.n
        return self.log_value == other.log_value

    def __lt__(self, other: 'PopCount') -> bool:
        if self.n is not None and other.n is not None:
            return self.n < other.n
        return self.log_value < other.log_value

    def __hash__(self) -> int:
        ## equality crosses forms through log_value, so the hash must too
        return hash(self.log_value)

    def __str__(self) -> str:
        if self.n is not None:
            return str(self.n)
        return f'exp({self.logval!r})'


ZERO = PopCount(n=0)


def add(left: PopCount, right: PopCount) -> PopCount:
    """
    Adds two counts; exact when both are exact and the sum stays at or below 2^48, log-sum-exp otherwise.
    """
    if left.n is not None and right.n is not None:
        return PopCount.from_int(left.n + right.n)
    total_log = float(np.logaddexp(left.log_value, right.log_value))
    return PopCount.from_log(total_log, was_log=True)


def le_int(count: PopCount, m: int) -> bool:
    """
    True when the count is at most the integer m.
    """
    if count.n is not None:
        return count.n <= m
    return False
