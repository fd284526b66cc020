import logging
import math
import unittest

import numpy as np

from lib import lib_distributions as dist
from lib.lib_common import ConfigError
from lib.lib_popcount import LOG_SWITCH_UP

## set up logging ---------------------------------------------------
logging.basicConfig(
    level=logging.DEBUG,
    format='[%(asctime)s] %(levelname)s [%(module)s-%(funcName)s()::%(lineno)d] %(message)s',
    datefmt='%d/%b/%Y %H:%M:%S',
)
log = logging.getLogger(__name__)

TWO_POINT = dist.ImmTable(pmf=((1, 0.5), (2, 0.5)))
TABLE_ENV = dist.EnvTable(atoms=((0.2, 0.5), (0.8, 0.5)))


class TestEnvironment(unittest.TestCase):
    def test_point_mass_sample_is_constant(self) -> None:
        rng = np.random.default_rng(1)
        self.assertTrue(all(dist.env_sample(dist.PointMass(b=0.5), rng) == 0.5 for _ in range(20)))

    def test_point_mass_rejects_out_of_range(self) -> None:
        for bad in (0.0, 1.0, 1.5, -0.2):
            with self.assertRaises(ValueError):
                dist.PointMass(b=bad)

    def test_uniform_mean(self) -> None:
        """
        Checks the uniform draws stay inside (0,1) and average to 1/2.
        """
        draws = dist.env_sample_n(dist.Uniform01(), 10**6, np.random.default_rng(2))
        self.assertTrue(((draws > 0.0) & (draws < 1.0)).all())
        self.assertLess(abs(draws.mean() - 0.5), 0.002)

    def test_table_frequency(self) -> None:
        draws = dist.env_sample_n(TABLE_ENV, 10**6, np.random.default_rng(3))
        self.assertLess(abs((draws == 0.2).mean() - 0.5), 0.005)

    def test_table_weights_must_sum_to_one(self) -> None:
        with self.assertRaises(ValueError):
            dist.EnvTable(atoms=((0.2, 0.5), (0.8, 0.4)))

    def test_log_moments(self) -> None:
        self.assertAlmostEqual(dist.env_log_moment(dist.PointMass(b=0.5)), math.log(2.0), places=15)
        self.assertAlmostEqual(dist.env_log_moment(dist.Uniform01()), 1.0, delta=1e-10)
        self.assertAlmostEqual(dist.env_log_moment(dist.EnvTable(atoms=((math.exp(-1.0), 1.0),))), 1.0, places=15)

    def test_negative_moments(self) -> None:
        self.assertAlmostEqual(dist.env_neg_moment(dist.PointMass(b=0.5), 1.0), 2.0, places=15)
        self.assertAlmostEqual(dist.env_neg_moment(dist.Uniform01(), 0.5), 2.0, delta=1e-8)
        self.assertEqual(dist.env_neg_moment(dist.Uniform01(), 1.0), math.inf)
        with self.assertRaises(ValueError):
            dist.env_neg_moment(dist.Uniform01(), 0.0)

    def test_env_mean(self) -> None:
        self.assertAlmostEqual(dist.env_mean(TABLE_ENV), 0.5, places=15)
        self.assertEqual(dist.env_mean(dist.Uniform01()), 0.5)


class TestNormalizer(unittest.TestCase):
    def test_bracket_is_tight(self) -> None:
        """
        Checks the certified bracket on C is narrower than 1e-10 and contains the point value.
        """
        for a in (1.0, 2.0):
            low, high = dist.imm_normalizer_bracket(a)
            c = dist.imm_normalizer(a)
            log.debug(f'a, ``{a}``; bracket, ``{(low, high)}``')
            self.assertLessEqual(low, c)
            self.assertLessEqual(c, high)
            self.assertLess(high - low, 1e-10)

    def test_c1_range(self) -> None:
        c1 = dist.imm_normalizer(1.0)
        self.assertGreater(c1, 0.45)
        self.assertLess(c1, 0.50)

    def test_pmf_total_brackets_one(self) -> None:
        for law in (dist.LogTail(a=1.0), dist.LogTail(a=2.0), dist.InverseSquare()):
            low, high = dist.imm_pmf_total_bracket(law)
            self.assertGreaterEqual(low, 1.0 - 1e-8)
            self.assertLessEqual(high, 1.0 + 1e-8)

    def test_rejects_bad_parameters(self) -> None:
        with self.assertRaises(ValueError):
            dist.imm_normalizer(0.0)
        with self.assertRaises(ValueError):
            dist.imm_normalizer(1.0, kmin=1)


class TestImmigrationPmf(unittest.TestCase):
    def test_deterministic(self) -> None:
        law = dist.Deterministic(k=3)
        self.assertEqual(dist.imm_pmf(law, 3), 1.0)
        self.assertEqual(dist.imm_cdf(law, 2), 0.0)
        self.assertEqual(dist.imm_tail_count(law, 3), 1.0)
        self.assertEqual(dist.imm_tail_count(law, 4), 0.0)

    def test_table(self) -> None:
        self.assertEqual(dist.imm_tail_count(TWO_POINT, 2), 0.5)
        self.assertEqual(dist.imm_pmf(TWO_POINT, 7), 0.0)

    def test_log_tail_pmf_formula(self) -> None:
        c1 = dist.imm_normalizer(1.0)
        self.assertAlmostEqual(dist.imm_pmf(dist.LogTail(a=1.0), 2), c1 / (2 * math.log(2.0) ** 2), places=15)
        self.assertEqual(dist.imm_pmf(dist.LogTail(a=1.0), 1), 0.0)

    def test_cdf_tail_consistency(self) -> None:
        """
        Checks cdf(k) + P(Z >= k+1) = 1 for every law, including counts beyond the tail table.
        """
        laws = [dist.Deterministic(k=3), TWO_POINT, dist.LogTail(a=1.0), dist.LogTail(a=2.0), dist.InverseSquare()]
        ks = list(range(0, 40)) + [2**20 - 1, 2**20, 2**20 + 5, 10**9]
        for law in laws:
            for k in ks:
                self.assertAlmostEqual(dist.imm_cdf(law, k) + dist.imm_tail_count(law, k + 1), 1.0, delta=1e-12)

    def test_tail_differences_match_pmf(self) -> None:
        law = dist.LogTail(a=1.0)
        for k in list(range(3, 60)) + [2**20 - 1, 2**20, 2**20 + 1, 2**21, 10**8]:
            difference = dist.imm_tail_count(law, k) - dist.imm_tail_count(law, k + 1)
            self.assertAlmostEqual(difference, dist.imm_pmf(law, k), delta=1e-12)

    def test_shifted_log_tail_has_mass_at_one(self) -> None:
        shifted = dist.LogTail(a=1.0, shift=-1)
        self.assertAlmostEqual(dist.imm_pmf(shifted, 1), dist.imm_pmf(dist.LogTail(a=1.0), 2), places=15)
        self.assertEqual(dist.imm_tail_count(shifted, 1), 1.0)

    def test_irreducibility(self) -> None:
        self.assertFalse(dist.imm_irreducible(dist.Deterministic(k=1)))
        self.assertTrue(dist.imm_irreducible(TWO_POINT))

    def test_compound_geometric_of_unit_is_geometric(self) -> None:
        """
        Checks the Panjer recursion: a geometric number of ones has pmf p (1-p)^k.
        """
        law = dist.CompoundGeometric(base=dist.Deterministic(k=1), p=0.3)
        for k in range(10):
            self.assertAlmostEqual(dist.imm_pmf(law, k), 0.3 * 0.7**k, places=14)


class TestCompoundGeometricTail(unittest.TestCase):
    SLOW = dist.CompoundGeometric(base=dist.Deterministic(k=1), p=0.0005)

    def test_tail_past_recursion_table_is_geometric(self) -> None:
        """
        Checks counts past the recursion table extend the exact geometric tail (1-p)^k.
        """
        q = 1.0 - self.SLOW.p
        for k in (dist.PANJER_MAX + 1, dist.PANJER_MAX + 2, 30_000):
            self.assertAlmostEqual(dist.imm_tail_count(self.SLOW, k) / q**k, 1.0, delta=1e-5)
        self.assertAlmostEqual(dist.imm_pmf(self.SLOW, 30_000) / (self.SLOW.p * q**30_000), 1.0, delta=1e-5)
        self.assertAlmostEqual(dist.imm_cdf(self.SLOW, 30_000) + dist.imm_tail_count(self.SLOW, 30_001), 1.0, places=15)

    def test_log_tail_at_twelve(self) -> None:
        fast = dist.log_tail(dist.CompoundGeometric(base=dist.Deterministic(k=1), p=0.5), 12.0)
        self.assertEqual(fast['tail'], 0.0)
        slow = dist.log_tail(self.SLOW, 12.0)
        k = math.floor(math.exp(12.0)) + 1
        self.assertAlmostEqual(slow['tail'] / (1.0 - self.SLOW.p) ** k, 1.0, delta=1e-5)
        self.assertLessEqual(slow['tail_low'], slow['tail'])
        self.assertLessEqual(slow['tail'], slow['tail_high'])

    def test_unbounded_base_uses_subexponential_rule(self) -> None:
        law = dist.CompoundGeometric(base=dist.LogTail(a=1.0), p=0.5)
        report = dist.log_tail(law, 12.0)
        self.assertEqual(report['tail'], dist.log_tail(dist.LogTail(a=1.0), 12.0)['tail'])
        self.assertLessEqual(report['tail_low'], report['tail'])
        self.assertEqual(report['tail_high'], 1.0)

    def test_laplace_with_small_lambda(self) -> None:
        """
        Checks both Laplace routes match p / (1 - (1-p) e^-lam) when the cutoff passes the recursion table.
        """
        lam = 0.001
        expected = self.SLOW.p / (1.0 - (1.0 - self.SLOW.p) * math.exp(-lam))
        self.assertAlmostEqual(dist.laplace_direct(self.SLOW, lam), expected, delta=1e-9)
        self.assertAlmostEqual(dist.laplace_tail_form(self.SLOW, lam), expected, delta=1e-9)

    def test_base_at_zero_has_no_tail(self) -> None:
        law = dist.CompoundGeometric(base=dist.Deterministic(k=0), p=0.5)
        self.assertEqual(dist.imm_tail_count(law, 30_000), 0.0)


class TestImmigrationSampling(unittest.TestCase):
    def test_deterministic(self) -> None:
        draws = dist.imm_sample_n(dist.Deterministic(k=5), 50, np.random.default_rng(4))
        self.assertTrue(all(draw.n == 5 for draw in draws))

    def test_table_frequency(self) -> None:
        counts = dist.imm_sample_counts(TWO_POINT, 10**6, np.random.default_rng(5))
        self.assertLess(abs((counts == 1).mean() - 0.5), 0.005)

    def test_log_tail_frequency_of_two(self) -> None:
        """
        Checks P(Z=2) by sampling against the pmf (4 sigma).
        """
        law = dist.LogTail(a=1.0)
        size = 200_000
        draws = dist.imm_sample_n(law, size, np.random.default_rng(6))
        frequency = sum(1 for draw in draws if draw.n == 2) / size
        expected = dist.imm_pmf(law, 2)
        sigma = math.sqrt(expected * (1 - expected) / size)
        self.assertLess(abs(frequency - expected), 4 * sigma)
        self.assertTrue(all(draw.n is None or draw.n >= 2 for draw in draws))

    def test_heavy_draws_switch_to_log_scale(self) -> None:
        draws = dist.imm_sample_n(dist.LogTail(a=0.5), 2000, np.random.default_rng(7))
        huge = [draw for draw in draws if not draw.is_exact]
        self.assertTrue(huge)
        self.assertTrue(all(draw.log_value > LOG_SWITCH_UP for draw in huge))

    def test_inverse_square_frequency_of_one(self) -> None:
        draws = dist.imm_sample_n(dist.InverseSquare(), 100_000, np.random.default_rng(8))
        frequency = sum(1 for draw in draws if draw.n == 1) / len(draws)
        self.assertLess(abs(frequency - 6 / math.pi**2), 0.006)

    def test_shifted_draws_reach_one(self) -> None:
        draws = dist.imm_sample_n(dist.LogTail(a=1.0, shift=-1), 2000, np.random.default_rng(9))
        values = [draw.n for draw in draws if draw.is_exact]
        self.assertIn(1, values)
        self.assertGreaterEqual(min(values), 1)


class TestMomentsAndTails(unittest.TestCase):
    def test_log_moments(self) -> None:
        self.assertEqual(dist.imm_log_moment(dist.Deterministic(k=1)), 0.0)
        self.assertEqual(dist.imm_log_moment(dist.LogTail(a=1.0)), math.inf)
        self.assertEqual(dist.imm_log_moment(dist.LogTail(a=0.5)), math.inf)
        self.assertTrue(math.isfinite(dist.imm_log_moment(dist.InverseSquare())))

    def test_log_tail_a2_log_moment_is_ratio_of_normalizers(self) -> None:
        """
        Checks E(ln Z) = C_2 / C_1 for a = 2, since E(ln Z) = C_2 * sum 1/(k (ln k)^2).
        """
        expected = dist.imm_normalizer(2.0) / dist.imm_normalizer(1.0)
        self.assertAlmostEqual(dist.imm_log_moment(dist.LogTail(a=2.0)), expected, delta=1e-8)

    def test_log_tail_examples(self) -> None:
        self.assertEqual(dist.log_tail(dist.Deterministic(k=5), 2.0)['tail'], 0.0)
        c1 = dist.imm_normalizer(1.0)
        for t in (30.0, 40.0):
            report = dist.log_tail(dist.LogTail(a=1.0), t)
            self.assertEqual(report['functional'], t * report['tail'])
            self.assertLessEqual(report['tail_low'], report['tail'])
            self.assertLessEqual(report['tail'], report['tail_high'])
            for value in (t * report['tail_low'], t * report['tail_high']):
                self.assertLess(abs(value - c1), 0.1 * c1)

    def test_log_domain_bracket_is_certified(self) -> None:
        """
        Checks the bracket past exact integer range uses the normalizer bracket and has a nonzero width.
        """
        c_low, c_high = dist.imm_normalizer_bracket(1.0)
        t = 40.0
        report = dist.log_tail(dist.LogTail(a=1.0), t)
        self.assertLess(report['tail_low'], report['tail_high'])
        self.assertLessEqual(report['tail_low'], c_low / t)
        self.assertGreaterEqual(report['tail_high'], c_high / t)
        shifted = dist.log_tail(dist.LogTail(a=1.0, shift=-1), t)
        self.assertLessEqual(shifted['tail_low'], shifted['tail'])
        self.assertLessEqual(shifted['tail'], shifted['tail_high'])

    def test_bracket_beyond_table_below_exact_limit(self) -> None:
        for law in (dist.LogTail(a=1.0), dist.LogTail(a=2.0), dist.InverseSquare()):
            report = dist.log_tail(law, 25.0)
            self.assertLessEqual(report['tail_low'], report['tail'])
            self.assertLessEqual(report['tail'], report['tail_high'])
            self.assertLess(report['tail_high'] - report['tail_low'], 1e-6 * report['tail'])

    def test_bracket_is_a_point_inside_the_table(self) -> None:
        report = dist.log_tail(dist.LogTail(a=1.0), 5.0)
        self.assertEqual(report['tail_low'], report['tail'])
        self.assertEqual(report['tail_high'], report['tail'])

    def test_log_tail_a2_functional_decreases(self) -> None:
        values = [dist.log_tail(dist.LogTail(a=2.0), t)['functional'] for t in (10.0, 20.0, 40.0)]
        self.assertGreater(values[0], values[1])
        self.assertGreater(values[1], values[2])

    def test_tail_nonincreasing(self) -> None:
        for law in (dist.LogTail(a=1.0), dist.InverseSquare(), TWO_POINT):
            tails = [dist.log_tail(law, t)['tail'] for t in np.linspace(0.1, 45.0, 60)]
            self.assertTrue(all(later <= earlier for earlier, later in zip(tails, tails[1:])))

    def test_log_tail_rejects_nonpositive_t(self) -> None:
        with self.assertRaises(ValueError):
            dist.log_tail(TWO_POINT, 0.0)


class TestLaplace(unittest.TestCase):
    def test_deterministic(self) -> None:
        law = dist.Deterministic(k=1)
        self.assertAlmostEqual(dist.laplace_direct(law, 0.7), math.exp(-0.7), places=15)
        self.assertAlmostEqual(dist.laplace_tail_form(law, 0.7), math.exp(-0.7), places=14)

    def test_two_point_by_hand(self) -> None:
        lam = math.log(2.0)
        self.assertAlmostEqual(dist.laplace_direct(TWO_POINT, lam), 0.375, places=14)
        self.assertAlmostEqual(dist.laplace_tail_form(TWO_POINT, lam), 0.375, places=14)

    def test_routes_agree_on_grid(self) -> None:
        """
        Checks both Laplace routes agree within 1e-10 for every law and lambda on the grid.
        """
        laws = [dist.Deterministic(k=1), TWO_POINT, dist.LogTail(a=1.0), dist.LogTail(a=2.0), dist.InverseSquare()]
        for law in laws:
            for lam in (0.01, 0.1, 1.0, 5.0):
                direct, tail_form = dist.laplace_direct(law, lam), dist.laplace_tail_form(law, lam)
                log.debug(f'law, ``{law}``; lambda, ``{lam}``; difference, ``{abs(direct - tail_form)}``')
                self.assertLessEqual(abs(direct - tail_form), 1e-10)
                self.assertGreater(direct, 0.0)
                self.assertLessEqual(direct, 1.0)

    def test_rejects_nonpositive_lambda(self) -> None:
        with self.assertRaises(ValueError):
            dist.laplace_direct(TWO_POINT, 0.0)


class TestSeriesBound(unittest.TestCase):
    def test_rhs_value(self) -> None:
        lhs, rhs = dist.series_bound(0.5, 1)
        self.assertAlmostEqual(rhs, (math.exp(-1) / (1 - math.exp(-1))) / math.log(2.0), places=14)
        self.assertAlmostEqual(rhs, 0.8396, places=3)
        self.assertLessEqual(lhs, rhs)

    def test_holds_on_grid(self) -> None:
        for c in (0.3, 0.5, 0.7, 0.9):
            for i in range(1, 21):
                lhs, rhs = dist.series_bound(c, i)
                self.assertGreaterEqual(lhs, 0.0)
                self.assertLessEqual(lhs, rhs, msg=f'c={c}, i={i}')

    def test_rejects_bad_input(self) -> None:
        with self.assertRaises(ValueError):
            dist.series_bound(1.0, 1)
        with self.assertRaises(ValueError):
            dist.series_bound(0.5, 0)


class TestJsonGrammar(unittest.TestCase):
    def test_round_trip_examples(self) -> None:
        self.assertEqual(dist.env_from_spec({'type': 'point_mass', 'beta': 0.4}), dist.PointMass(b=0.4))
        self.assertEqual(dist.env_from_spec({'type': 'uniform01'}), dist.Uniform01())
        self.assertEqual(dist.imm_from_spec({'type': 'log_tail', 'a': 1.0}), dist.LogTail(a=1.0))
        self.assertEqual(dist.imm_from_spec({'type': 'finite_table', 'pmf': [[1, 0.5], [2, 0.5]]}), TWO_POINT)
        self.assertEqual(dist.imm_from_spec({'type': 'inverse_square'}), dist.InverseSquare())
        nested = {'type': 'compound_geometric', 'p': 0.5, 'base': {'type': 'deterministic', 'k': 1}}
        self.assertEqual(dist.imm_to_spec(dist.imm_from_spec(nested)), nested)

    def test_unknown_type_and_keys(self) -> None:
        with self.assertRaises(ConfigError):
            dist.env_from_spec({'type': 'beta_law'})
        with self.assertRaises(ConfigError):
            dist.imm_from_spec({'type': 'log_tail', 'a': 1.0, 'colour': 'red'})
        with self.assertRaises(ConfigError):
            dist.env_from_spec({'type': 'point_mass', 'beta': 1.5})


if __name__ == '__main__':
    unittest.main()
