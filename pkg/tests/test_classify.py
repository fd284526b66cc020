import logging
import math
import unittest

import numpy as np

from lib import lib_classify as classify
from lib.lib_classify import ClassificationInput, Verdict
from lib.lib_distributions import (
    CompoundGeometric,
    Deterministic,
    ImmTable,
    InverseSquare,
    LogTail,
    PointMass,
    Uniform01,
    imm_normalizer,
)

## set up logging ---------------------------------------------------
logging.basicConfig(
    level=logging.DEBUG,
    format='[%(asctime)s] %(levelname)s [%(module)s-%(funcName)s()::%(lineno)d] %(message)s',
    datefmt='%d/%b/%Y %H:%M:%S',
)
log = logging.getLogger(__name__)

TWO_POINT = ImmTable(pmf=((1, 0.5), (2, 0.5)))


def make_input(**changes) -> ClassificationInput:
    values = {'mu': 1.0, 'tail_limsup': 0.0, 'tail_liminf': 0.0, 'log_z_finite': False, 'hyp1': True, 'hyp2': True}
    values.update(changes)
    return ClassificationInput(**values)


class TestClassifyGeneral(unittest.TestCase):
    def test_finite_log_moment_is_positive_recurrent(self) -> None:
        regime = classify.classify_general(make_input(log_z_finite=True, tail_liminf=5.0, tail_limsup=5.0))
        self.assertEqual(regime['verdict'], Verdict.POSITIVE_RECURRENT)
        self.assertEqual(regime['citations'], [classify.LOG_MOMENT_CRITERION])
        self.assertEqual(regime['reasons'], [])

    def test_small_tail_is_null_recurrent(self) -> None:
        regime = classify.classify_general(make_input(tail_liminf=0.5, tail_limsup=0.5))
        self.assertEqual(regime['verdict'], Verdict.NULL_RECURRENT)
        self.assertIn(classify.TAIL_RECURRENCE_CRITERION, regime['citations'])

    def test_large_tail_is_transient(self) -> None:
        regime = classify.classify_general(make_input(tail_liminf=2.0, tail_limsup=math.inf))
        self.assertEqual(regime['verdict'], Verdict.TRANSIENT)

    def test_indeterminate_cases_give_reasons(self) -> None:
        """
        Checks every indeterminate verdict carries at least one reason and no citation.
        """
        cases = [
            make_input(tail_liminf=0.5, tail_limsup=2.0),
            make_input(tail_liminf=2.0, tail_limsup=2.0, hyp2=False),
            make_input(tail_liminf=0.5, tail_limsup=0.5, hyp1=False),
        ]
        for inp in cases:
            regime = classify.classify_general(inp)
            self.assertEqual(regime['verdict'], Verdict.INDETERMINATE)
            self.assertTrue(regime['reasons'])
            self.assertEqual(regime['citations'], [])

    def test_rejects_bad_input(self) -> None:
        with self.assertRaises(ValueError):
            classify.classify_general(make_input(mu=0.0))
        with self.assertRaises(ValueError):
            make_input(tail_liminf=2.0, tail_limsup=1.0)


class TestCriticalValue(unittest.TestCase):
    def test_beta_critical(self) -> None:
        beta_c = classify.beta_critical()
        self.assertAlmostEqual(beta_c, math.exp(-imm_normalizer(1.0)), places=15)
        low, high = classify.beta_critical_bracket()
        self.assertLessEqual(low, beta_c)
        self.assertLessEqual(beta_c, high)
        self.assertGreater(beta_c, 0.6)
        self.assertLess(beta_c, 0.64)

    def test_only_defined_for_a_one(self) -> None:
        with self.assertRaises(ValueError):
            classify.beta_critical(2.0)


class TestClassifyExample(unittest.TestCase):
    def test_a_two_is_positive_recurrent(self) -> None:
        for beta in (0.1, 0.5, 0.9):
            self.assertEqual(classify.classify_example(2.0, beta)['verdict'], Verdict.POSITIVE_RECURRENT)

    def test_a_half_is_transient(self) -> None:
        for beta in (0.1, 0.5, 0.9):
            self.assertEqual(classify.classify_example(0.5, beta)['verdict'], Verdict.TRANSIENT)

    def test_a_one_splits_at_beta_c(self) -> None:
        """
        Checks null recurrence below beta_c, transience above, and indeterminate at beta_c.
        """
        beta_c = classify.beta_critical()
        below = classify.classify_example(1.0, 0.5 * beta_c)
        above = classify.classify_example(1.0, 0.5 * (1.0 + beta_c))
        self.assertEqual(below['verdict'], Verdict.NULL_RECURRENT)
        self.assertEqual(above['verdict'], Verdict.TRANSIENT)
        self.assertIn(classify.CRITICAL_ORIENTATION, below['citations'])
        at = classify.classify_example(1.0, beta_c)
        self.assertEqual(at['verdict'], Verdict.INDETERMINATE)
        self.assertTrue(at['reasons'])

    def test_rejects_bad_parameters(self) -> None:
        with self.assertRaises(ValueError):
            classify.classify_example(0.0, 0.5)
        with self.assertRaises(ValueError):
            classify.classify_example(1.0, 1.0)


class TestClassifyDistributions(unittest.TestCase):
    def test_uniform_environment(self) -> None:
        self.assertEqual(classify.classify_distributions(Uniform01(), LogTail(a=1.0))['verdict'], Verdict.NULL_RECURRENT)
        self.assertEqual(classify.classify_distributions(Uniform01(), LogTail(a=0.5))['verdict'], Verdict.TRANSIENT)
        verdict = classify.classify_distributions(Uniform01(), InverseSquare())['verdict']
        self.assertEqual(verdict, Verdict.POSITIVE_RECURRENT)

    def test_tail_limits(self) -> None:
        c1 = imm_normalizer(1.0)
        self.assertEqual(classify.tail_limits(LogTail(a=1.0)), (c1, c1))
        self.assertEqual(classify.tail_limits(LogTail(a=3.0)), (0.0, 0.0))
        self.assertEqual(classify.tail_limits(LogTail(a=0.7)), (math.inf, math.inf))
        compound = classify.tail_limits(CompoundGeometric(base=LogTail(a=1.0), p=0.5))
        self.assertAlmostEqual(compound[0], c1, places=15)


class TestSeriesDiagnostic(unittest.TestCase):
    def test_geometric_weighted_series_of_ones(self) -> None:
        sums = classify.geometric_weighted_series(Deterministic(k=1), 0.5, 10, np.random.default_rng(0))
        self.assertAlmostEqual(sums[-1], 1.0 - 2.0**-10, places=14)
        self.assertTrue(np.all(np.diff(sums) > 0.0))

    def test_heavy_draws_stay_finite_or_infinite_never_nan(self) -> None:
        sums = classify.geometric_weighted_series(LogTail(a=0.5), 0.9, 300, np.random.default_rng(1))
        self.assertFalse(np.isnan(sums).any())

    def test_series_is_cumulative_sum_of_terms(self) -> None:
        terms = classify.geometric_weighted_terms(TWO_POINT, 0.5, 30, np.random.default_rng(2))
        sums = classify.geometric_weighted_series(TWO_POINT, 0.5, 30, np.random.default_rng(2))
        self.assertTrue(np.array_equal(np.cumsum(terms), sums))

    def test_last_half_max_increment(self) -> None:
        self.assertEqual(classify.last_half_max_increment(np.array([1.0, 1.0, 1.0, 0.5])), 1.0)
        self.assertEqual(classify.last_half_max_increment(np.array([1.0, 2.0, 0.0, 0.0])), 0.0)
        with self.assertRaises(ValueError):
            classify.last_half_max_increment(np.array([1.0]))

    def test_overflowed_term_counts_as_infinite_increment(self) -> None:
        """
        Checks a term too large for a float reads as an infinite increment, not nan.
        """
        terms = np.array([1.0, np.inf, 0.5, 0.25, np.inf, 0.1])
        self.assertEqual(classify.last_half_max_increment(terms), math.inf)
        self.assertEqual(classify.last_half_max_increment(np.array([np.inf, np.inf, 0.5, 0.25])), 0.5)

    def test_bounded_law_increments_vanish(self) -> None:
        terms = classify.geometric_weighted_terms(TWO_POINT, 0.5, 100, np.random.default_rng(3))
        self.assertLess(classify.last_half_max_increment(terms), 1e-6)

    def test_divergent_law_shows_large_increments(self) -> None:
        """
        Checks LogTail(a=1) with b = 0.9 gives a last-half increment above 1 in some of 100 seeded runs, and never nan.
        """
        increments = []
        for seed in range(100):
            terms = classify.geometric_weighted_terms(LogTail(a=1.0), 0.9, 500, np.random.default_rng(seed))
            increments.append(classify.last_half_max_increment(terms))
        self.assertFalse(any(math.isnan(value) for value in increments))
        self.assertGreaterEqual(sum(value > 1.0 for value in increments), 1)


if __name == '__main__':
    unittest.main()
