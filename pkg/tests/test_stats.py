import json
import logging
import math
import tempfile
import unittest
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from lib import lib_chain as chain
from lib import lib_stats as stats
from lib.lib_classify import beta_critical
from lib.lib_distributions import ImmTable, InverseSquare, LogTail, PointMass, Uniform01
from lib.lib_popcount import PopCount

## set up logging ---------------------------------------------------
logging.basicConfig(
    level=logging.DEBUG,
    format='[%(asctime)s] %(levelname)s [%(module)s-%(funcName)s()::%(lineno)d] %(message)s',
    datefmt='%d/%b/%Y %H:%M:%S',
)
log = logging.getLogger(__name__)

SMALL_CHAIN = chain.ChainConfig(env=PointMass(b=0.5), imm=ImmTable(pmf=((1, 0.5), (2, 0.5))), horizon=5)


def fake_trajectory(values: list[int]) -> SimpleNamespace:
    return SimpleNamespace(states=[PopCount.exact(value) for value in values])


class TestStreams(unittest.TestCase):
    def test_seed_derivation_is_deterministic_and_distinct(self) -> None:
        spec = stats.RngSpec(master_seed=42)
        seeds = [stats.derive_stream_seed(spec, index) for index in range(50)]
        self.assertEqual(seeds, [stats.derive_stream_seed(spec, index) for index in range(50)])
        self.assertEqual(len(set(seeds)), 50)
        self.assertNotEqual(seeds[0], stats.derive_stream_seed(stats.RngSpec(master_seed=43), 0))

    def test_rng_spec_rejects_bad_seed(self) -> None:
        for bad in (-1, 2**64):
            with self.assertRaises(ValueError):
                stats.RngSpec(master_seed=bad)
        with self.assertRaises(ValueError):
            stats.derive_stream_seed(stats.RngSpec(master_seed=1), -1)

    def test_streams_reproduce(self) -> None:
        spec = stats.RngSpec(master_seed=7)
        first = stats.stream_rng(spec, 3).random(5)
        second = stats.stream_rng(spec, 3).random(5)
        self.assertTrue(np.array_equal(first, second))


class TestReplicate(unittest.TestCase):
    def test_results_ordered_and_thread_independent(self) -> None:
        """
        Checks the replication results are identical for 1 and 4 threads.
        """
        spec = stats.RngSpec(master_seed=11)

        def job(index: int, rng: np.random.Generator) -> tuple[int, float]:
            return (index, float(rng.random()))

        single = stats.replicate(job, 20, spec, threads=1)
        several = stats.replicate(job, 20, spec, threads=4)
        self.assertEqual(single, several)
        self.assertEqual([index for index, _ in single], list(range(20)))

    def test_failure_names_stream(self) -> None:
        def job(index: int, rng: np.random.Generator) -> int:
            if index == 3:
                raise RuntimeError('boom')
            return index

        with self.assertRaises(stats.ReplicationError) as context:
            stats.replicate(job, 5, stats.RngSpec(master_seed=0), threads=2)
        self.assertEqual(context.exception.stream_index, 3)
        self.assertIsInstance(context.exception.cause, RuntimeError)

    def test_zero_jobs(self) -> None:
        self.assertEqual(stats.replicate(lambda index, rng: index, 0, stats.RngSpec(master_seed=0)), [])


class TestChiSquare(unittest.TestCase):
    def test_histogram(self) -> None:
        self.assertEqual(stats.histogram([0, 2, 2, 3]).tolist(), [1, 0, 2, 1])
        with self.assertRaises(ValueError):
            stats.histogram([-1, 2])

    def test_pooling(self) -> None:
        """
        Checks left-to-right pooling; a short last group joins its predecessor.
        """
        self.assertEqual(stats._pool_groups(np.array([3.0, 3.0, 6.0, 1.0])), [(0, 2), (2, 4)])
        self.assertEqual(stats._pool_groups(np.array([10.0, 10.0])), [(0, 1), (1, 2)])

    def test_perfect_fit(self) -> None:
        result = stats.chi_square_vs_exact(np.array([250, 500, 250]), np.array([0.25, 0.5, 0.25]))
        self.assertEqual(result['statistic'], 0.0)
        self.assertAlmostEqual(result['p_value'], 1.0, places=12)
        self.assertEqual(result['dof'], 2)

    def test_sampled_fit_and_misfit(self) -> None:
        rng = np.random.default_rng(12)
        pmf = np.array([0.1, 0.2, 0.3, 0.4])
        sample = stats.histogram(rng.choice(4, size=20_000, p=pmf))
        self.assertGreater(stats.chi_square_vs_exact(sample, pmf)['p_value'], 1e-6)
        wrong = np.array([0.4, 0.3, 0.2, 0.1])
        self.assertLess(stats.chi_square_vs_exact(sample, wrong)['p_value'], 1e-6)

    def test_single_bin_is_an_error(self) -> None:
        with self.assertRaises(ValueError):
            stats.chi_square_vs_exact(np.array([3, 1]), np.array([0.5, 0.5]))

    def test_two_sample(self) -> None:
        same = stats.chi_square_two_sample(np.array([100, 200, 300]), np.array([100, 200, 300]))
        self.assertEqual(same['statistic'], 0.0)
        differ = stats.chi_square_two_sample(np.array([900, 100]), np.array([100, 900]))
        self.assertLess(differ['p_value'], 1e-10)

    def test_tv_distance(self) -> None:
        self.assertEqual(stats.tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])), 1.0)
        self.assertEqual(stats.tv_distance(np.array([2, 2]), np.array([0.5, 0.5])), 0.0)
        self.assertAlmostEqual(stats.tv_distance(np.array([3, 1]), np.array([0.5, 0.5, 0.0])), 0.25, places=15)


class TestCalibration(unittest.TestCase):
    def test_same_law_p_values_are_calibrated(self) -> None:
        """
        Checks 200 same-law tests of each chi-square variant reject at 0.01 at most 7 times
        and put roughly half of the p-values below 0.5.
        """
        rng = np.random.default_rng(400)
        exact_pmf = chain.exact_distribution(SMALL_CHAIN, 5)['pmf']
        two_sample, vs_exact = [], []
        for _ in range(200):
            first = chain.sample_direct_batch(SMALL_CHAIN, 5, 2000, rng)
            second = chain.sample_direct_batch(SMALL_CHAIN, 5, 2000, rng)
            two_sample.append(stats.chi_square_two_sample(stats.histogram(first), stats.histogram(second))['p_value'])
            vs_exact.append(stats.chi_square_vs_exact(stats.histogram(first), exact_pmf)['p_value'])
        for p_values in (two_sample, vs_exact):
            p_values = np.array(p_values)
            self.assertLessEqual(int((p_values < 0.01).sum()), 7)
            self.assertTrue(70 <= int((p_values < 0.5).sum()) <= 130)

    def test_tv_triangle_inequality(self) -> None:
        rng = np.random.default_rng(401)
        for _ in range(200):
            a, b, c = (rng.dirichlet(np.ones(rng.integers(2, 12))) for _ in range(3))
            self.assertLessEqual(stats.tv_distance(a, c), stats.tv_distance(a, b) + stats.tv_distance(b, c) + 1e-12)


class TestRegimeSignatures(unittest.TestCase):
    def test_uniform_inverse_square_trajectories(self) -> None:
        """
        Checks uniform beta with P(Z=k) ~ 1/k^2 keeps visiting {X <= 2} while showing rare huge excursions.
        """
        hits = 0
        for seed in range(10):
            traj = chain.simulate(chain.ChainConfig(env=Uniform01(), imm=InverseSquare(), horizon=20_000, seed=seed))
            values = np.array([state.as_float() for state in traj.states[1:]])
            occupation = stats.return_time_stats(traj, 2)['occupation_frequency']
            log.debug(f'seed, ``{seed}``; occupation, ``{occupation}``; max/mean, ``{values.max() / values.mean()}``')
            hits += occupation > 0.05 and values.max() / values.mean() > 50.0
        self.assertGreaterEqual(hits, 8)

    def test_plateau_separates_recurrent_from_transient(self) -> None:
        """
        Checks the green partial sums keep growing below beta_c and flatten above it (a = 1).
        """
        beta_c = beta_critical()
        imm = LogTail(a=1.0, shift=-1)
        recurrent = chain.ChainConfig(env=PointMass(b=0.7 * beta_c), imm=imm, horizon=200)
        transient = chain.ChainConfig(env=PointMass(b=1.3 * beta_c), imm=imm, horizon=200)
        separated = 0
        for seed in range(10):
            rng = np.random.default_rng(500 + seed)
            growing = stats.green_plateau_statistic(chain.green_partial_sum(recurrent, 200, 300, rng))
            flat = stats.green_plateau_statistic(chain.green_partial_sum(transient, 200, 300, rng))
            separated += growing > flat
        self.assertGreaterEqual(separated, 8)

    def test_occupation_trend_separates_recurrent_from_transient(self) -> None:
        """
        Checks the transient chain stops visiting {X <= 10} in the last half, while the recurrent one often still does.
        """
        beta_c = beta_critical()
        imm = LogTail(a=1.0, shift=-1)
        escaping, recurrent_visits, transient_visits = 0, 0, 0
        for seed in range(50):
            transient = chain.simulate(chain.ChainConfig(env=PointMass(b=1.3 * beta_c), imm=imm, horizon=5000, seed=seed))
            first, last = stats.occupation_halves(transient, 10)
            escaping += last < 0.5 * first
            transient_visits += last > 0.0
            recurrent = chain.simulate(chain.ChainConfig(env=PointMass(b=0.7 * beta_c), imm=imm, horizon=5000, seed=seed))
            recurrent_visits += stats.occupation_halves(recurrent, 10)[1] > 0.0
        self.assertGreaterEqual(escaping, 40)
        self.assertGreaterEqual(recurrent_visits, transient_visits + 10)


class TestReturnDiagnostics(unittest.TestCase):
    def test_return_time_stats(self) -> None:
        """
        Checks visits count steps 1..horizon only and the mean gap between them.
        """
        result = stats.return_time_stats(fake_trajectory([0, 1, 5, 1, 1, 7, 1]), 1)
        self.assertEqual(result['visit_count'], 4)
        self.assertAlmostEqual(result['mean_return_time'], 5 / 3, places=15)
        self.assertAlmostEqual(result['occupation_frequency'], 4 / 6, places=15)

    def test_no_returns(self) -> None:
        result = stats.return_time_stats(fake_trajectory([0, 9, 9, 9]), 1)
        self.assertEqual(result['visit_count'], 0)
        self.assertEqual(result['mean_return_time'], math.inf)

    def test_log_scale_states_never_count(self) -> None:
        traj = SimpleNamespace(states=[PopCount.exact(0), PopCount.log_scale(40.0), PopCount.exact(1)])
        self.assertEqual(stats.return_time_stats(traj, 10**6)['visit_count'], 1)

    def test_occupation_halves(self) -> None:
        self.assertEqual(stats.occupation_halves(fake_trajectory([0, 1, 1, 9, 9]), 1), (1.0, 0.0))
        with self.assertRaises(ValueError):
            stats.occupation_halves(fake_trajectory([0, 1]), 1)

    def test_green_plateau_statistic(self) -> None:
        self.assertEqual(stats.green_plateau_statistic(np.array([1.0, 2.0, 3.0, 3.0, 3.0, 3.0])), 0.0)
        self.assertEqual(stats.green_plateau_statistic(np.array([1.0, 2.0, 3.0, 4.0])), 2.0)


class TestWriteJsonl(unittest.TestCase):
    def test_numpy_and_infinite_values(self) -> None:
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'nested' / 'out.jsonl'
            stats.write_jsonl([{'b': np.float64(1.5), 'a': math.inf}, {'n': np.int64(3)}], path)
            lines = path.read_text(encoding='utf-8').splitlines()
        self.assertEqual(len(lines), 2)
        self.assertEqual(lines[0], '{"a": "inf", "b": 1.5}')
        self.assertEqual(json.loads(lines[1]), {'n': 3})


if __name__ == '__main__':
    unittest.main()
