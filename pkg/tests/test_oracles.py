import json
import math

import numpy as np
import pytest
from scipy import stats

from mixglauber.core_dist import DenseDistribution, MixtureModel, conditional_slice, encode_indices
from mixglauber.errors import BudgetExhausted, OracleTimeout, PairNotAllowed, UnsupportedSlice
from mixglauber.oracles import Budget, GlauberOracleHandle, OracleHandle, RestrictedPairSet

B = DenseDistribution.bernoulli_product


def skewed(n=3, seed=0):
    rng = np.random.default_rng(seed)
    return MixtureModel(np.array([0.4, 0.6]), (DenseDistribution.random(2, n, rng), DenseDistribution.random(2, n, rng))).mixture


def within_sigmas(counts, probs, k):
    total = counts.sum()
    se = np.sqrt(probs * (1 - probs) / total)
    return np.all(np.abs(counts / total - probs) <= k * se + 1e-12)


class TestGeneralOracle:
    def test_point_mass(self):
        h = OracleHandle(DenseDistribution.point_mass((1, 0, 1), 2), seed=0)
        assert all(h.general_sample() == (1, 0, 1) for _ in range(20))

    def test_frequencies(self):
        pi = DenseDistribution(2, 2, np.array([0.1, 0.2, 0.3, 0.4]))
        h = OracleHandle(pi, seed=1)
        xs = h.general_sample(100_000)
        counts = np.bincount(encode_indices(xs, 2), minlength=4)
        assert within_sigmas(counts, pi.probs, 4)
        assert stats.chisquare(counts, 100_000 * pi.probs).pvalue > 1e-3

    def test_counter(self):
        h = OracleHandle(B(0.5, 2), seed=2)
        h.general_sample()
        assert h.general_calls == 1
        h.general_sample(7)
        assert h.counters() == {"general_calls": 8, "coordinate_calls": 0}
        json.dumps(h.counters())


class TestCoordinateOracle:
    def test_product_gives_marginal(self):
        h = OracleHandle(B(0.8, 3), seed=3)
        for x in [(0, 0, 0), (1, 1, 0)]:
            draws = h.coordinate_sample(x, 2, size=20_000)
            assert within_sigmas(np.bincount(draws, minlength=2), np.array([0.2, 0.8]), 4)

    def test_matches_exact_slice(self):
        pi = skewed()
        h = OracleHandle(pi, seed=4)
        x, i = (1, 0, 1), 1
        draws = h.coordinate_sample(x, i, size=100_000)
        assert within_sigmas(np.bincount(draws, minlength=2), conditional_slice(pi, x, i).law, 4)
        assert h.coordinate_calls == 100_000

    def test_scalar_draw(self):
        v = OracleHandle(B(0.5, 2), seed=5).coordinate_sample((0, 1), 0)
        assert v in (0, 1)

    def test_zero_mass_slice(self):
        h = OracleHandle(DenseDistribution.point_mass((0, 0), 2), seed=6)
        with pytest.raises(UnsupportedSlice):
            h.coordinate_sample((1, 1), 0)

    def test_budget_charged_before_drawing(self):
        h = OracleHandle(B(0.5, 2), seed=7)
        budget = Budget(10)
        h.coordinate_sample((0, 0), 0, size=8, budget=budget)
        with pytest.raises(BudgetExhausted):
            h.coordinate_sample((0, 0), 0, size=3, budget=budget)
        assert budget.consumed == 8 and h.coordinate_calls == 8

    def test_restricted_pairs(self):
        h = OracleHandle(B(0.5, 2), seed=8)
        pairs = RestrictedPairSet((((0, 1), 0),))
        assert ((0, 1), 0) in pairs and ((0, 1), 1) not in pairs
        h.restrict(pairs)
        h.coordinate_sample((0, 1), 0)
        with pytest.raises(PairNotAllowed):
            h.coordinate_sample((0, 1), 1)
        h.restrict(None)
        h.coordinate_sample((0, 1), 1)


class TestSealing:
    def test_no_public_table(self):
        pi = skewed()
        h = OracleHandle(pi, seed=9)
        for name in dir(h):
            if name.startswith("_"):
                continue
            value = getattr(h, name)
            assert not isinstance(value, DenseDistribution)
            if isinstance(value, np.ndarray):
                assert not np.array_equal(value, pi.probs)


class TestGlauberBackend:
    def test_capability_flag(self):
        assert GlauberOracleHandle.reports_update_sites
        assert not OracleHandle.reports_update_sites

    def test_equivalent_to_exact(self):
        pi = skewed(seed=10)
        x, i = (0, 1, 1), 0
        a = OracleHandle(pi, seed=11).coordinate_sample(x, i, size=100_000)
        b = GlauberOracleHandle(pi, seed=12).coordinate_sample(x, i, size=100_000)
        table = np.array([np.bincount(a, minlength=2), np.bincount(b, minlength=2)])
        assert stats.chi2_contingency(table).pvalue > 1e-3

    def test_attempts_average_n(self):
        n = 3
        h = GlauberOracleHandle(B(0.5, n), seed=13)
        h.coordinate_sample((0,) * n, 1, size=20_000)
        attempts = np.array(h.attempt_log)
        p = 1 / n
        se = math.sqrt((1 - p) / p**2 / attempts.size)
        assert abs(attempts.mean() - n) <= 3 * se

    def test_single_site_accepts_first_update(self):
        h = GlauberOracleHandle(B(0.3, 1), seed=14)
        h.coordinate_sample((0,), 0, size=100)
        assert set(h.attempt_log) == {1}

    def test_timeout(self):
        h = GlauberOracleHandle(B(0.5, 4), seed=15, attempt_cap=1)
        with pytest.raises(OracleTimeout):
            h.coordinate_sample((0, 0, 0, 0), 3, size=50)


class TestDeterminism:
    @pytest.mark.parametrize("cls", [OracleHandle, GlauberOracleHandle])
    def test_same_seed_same_stream(self, cls):
        pi = skewed(seed=16)
        streams = []
        for _ in range(2):
            h = cls(pi, seed=17)
            streams.append((h.general_sample(50), h.coordinate_sample((1, 0, 0), 2, size=50)))
        np.testing.assert_array_equal(streams[0][0], streams[1][0])
        np.testing.assert_array_equal(streams[0][1], streams[1][1])
