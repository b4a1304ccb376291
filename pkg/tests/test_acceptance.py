"""Acceptance suite: one printed PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s -v``.  Each test prints its
line before asserting, so a failing criterion still reports its measurements.
"""

import math
import time

import numpy as np
import pytest
from scipy import optimize, stats

from mixglauber import experiments as ex
from mixglauber import glauber as gl
from mixglauber import testers as ts
from mixglauber import verify as vf
from mixglauber.core_dist import (
    DenseDistribution,
    MixtureModel,
    chain_rule_decompose,
    density_ratio,
    kl_divergence,
)
from mixglauber.identity import AlgorithmParams, product_set_kl_test
from mixglauber.oracles import GlauberOracleHandle, OracleHandle

B = DenseDistribution.bernoulli_product


def report(capsys, number, ok, detail, elapsed):
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s) {detail}")


def binom_sigma(p, trials):
    return math.sqrt(p * (1 - p) / trials)


class TestCriterion1:
    def test_exact_identity_battery(self, capsys):
        t0 = time.perf_counter()
        results = vf.run_battery(vf.random_instances(100, seed=0), seed=0, hk_pairs=10_000, hk_dims=(2, 5, 20))
        elapsed = time.perf_counter() - t0
        bad = [r for r in results if not r.ok]
        ok = not bad and elapsed < 60
        report(capsys, 1, ok, f"{len(results)} checks, {len(bad)} violations", elapsed)
        assert ok, bad[:5]


class TestCriterion2:
    def test_functional_inequality_battery(self, capsys):
        t0 = time.perf_counter()
        rng = np.random.default_rng(2)
        notes, ok = [], True

        # products: approximate tensorisation constant is 1
        worst_product = 0.0
        for _ in range(10):
            n, q = int(rng.integers(2, 5)), int(rng.integers(2, 4))
            mu = DenseDistribution.product([rng.dirichlet(np.ones(q)) for _ in range(n)])
            worst_product = max(worst_product, gl.estimate_ate_constant(mu, restarts=6, seed=int(rng.integers(1 << 30))).lower)
        ok &= worst_product <= 1 + 1e-6
        notes.append(f"max product ATE {worst_product:.9f}")

        # MLSI against n * ATE / 2
        worst_gap = -math.inf
        for _ in range(50):
            n, q = int(rng.integers(2, 4)), int(rng.integers(2, 4))
            mu = DenseDistribution.random(q, n, rng)
            mlsi = gl.estimate_mlsi_constant(mu, restarts=6, seed=int(rng.integers(1 << 30)))
            ate = gl.estimate_ate_constant(mu, restarts=6, seed=int(rng.integers(1 << 30)), extra_witnesses=(mlsi.witness,))
            worst_gap = max(worst_gap, mlsi.lower - mu.n * ate.lower / 2)
        ok &= worst_gap <= 1e-6
        notes.append(f"max MLSI - n*ATE/2 {worst_gap:.3e}")

        # weak Phi-Sobolev on mixtures, both Phi
        weak = []
        for j in range(10):
            k, n = int(rng.integers(2, 4)), int(rng.integers(2, 4))
            model = MixtureModel(rng.dirichlet(np.ones(k)), tuple(DenseDistribution.random(2, n, rng) for _ in range(k)))
            weak += vf.weak_sobolev_checks(vf.Instance(model, model.mixture, f"mix{j}"), 5, rng)
        weak_bad = [r for r in weak if not r.ok]
        ok &= not weak_bad
        notes.append(f"weak Sobolev {len(weak) - len(weak_bad)}/{len(weak)}")

        # entropy decay derivative
        worst_excess, worst_rel = -math.inf, 0.0
        for _ in range(50):
            n, q = int(rng.integers(1, 4)), int(rng.integers(2, 4))
            mu = DenseDistribution.random(q, n, rng)
            pi = DenseDistribution.random(q, n, rng)
            t = float(rng.choice([0.0, rng.uniform(0, 3 * n)]))
            lhs, rhs = gl.entropy_decay_derivative_check(pi, mu, t)
            worst_excess = max(worst_excess, abs(lhs - rhs) - max(1e-6, 1e-4 * abs(rhs)))
            worst_rel = max(worst_rel, abs(lhs - rhs) / max(abs(rhs), 1e-12))
        ok &= worst_excess <= 0
        notes.append(f"derivative max relative error {worst_rel:.2e}")

        elapsed = time.perf_counter() - t0
        ok &= elapsed < 300
        report(capsys, 2, ok, "; ".join(notes), elapsed)
        assert ok


class TestCriterion3:
    def test_concentration_battery(self, capsys):
        t0 = time.perf_counter()
        trials = 100_000
        streams = iter(np.random.SeedSequence(3).spawn(16))
        rows = []
        for k in (2, 3, 5):
            rho = np.full(k, 1.0 / k)
            rows.append(ex.empirical_kl_mgf(rho, 50, 25.0, trials, np.random.default_rng(next(streams))))
            rows.append(ex.empirical_kl_tail(rho, 100, 0.1, trials, np.random.default_rng(next(streams))))
        skewed = np.array([0.7, 0.2, 0.1])
        rows.append(ex.empirical_kl_mgf(skewed, 50, 25.0, trials, np.random.default_rng(next(streams))))
        model = MixtureModel(np.array([0.5, 0.5]), (B(0.3, 3), B(0.7, 3)))
        mix = ex.mixture_posterior_mgf(model, 50, 25.0, trials, np.random.default_rng(next(streams)))
        rows.append(mix)
        elapsed = time.perf_counter() - t0
        ok = all(r.passed for r in rows) and mix.extra["dominated"] and elapsed < 600
        detail = ", ".join(f"{'tail' if 'eps' in r.params else 'mgf'}{r.params.get('k', '')}:{r.estimate:.3g}<={r.bound:.3g}" for r in rows)
        report(capsys, 3, ok, f"{detail}; mixture dominated={mix.extra['dominated']}", elapsed)
        assert ok


@pytest.fixture(scope="module")
def bimodal6():
    return MixtureModel(np.array([0.5, 0.5]), (B(0.1, 6), B(0.9, 6)))


class TestCriterion4:
    CSTAR = 1.1  # 1.1 x the product ATE constant of 1

    def test_a_point_mass_plateau(self, capsys, bimodal6):
        t0 = time.perf_counter()
        n = bimodal6.n
        times, kl, inter = ex.point_mass_curve(bimodal6, (0,) * n, [0.0, 10.0 * n, 50.0 * n])
        elapsed = time.perf_counter() - t0
        ok = kl[-1] >= 0.5
        report(capsys, "4a", ok, f"KL at t=0,10n,50n: {kl[0]:.4f}, {kl[1]:.4f}, {kl[2]:.2e}; inter KL at t=0 {inter[0]:.4f}", elapsed)
        assert ok

    def test_b_c_warm_start(self, capsys, bimodal6):
        t0 = time.perf_counter()
        eps, delta, trials = 0.1, 0.2, 200
        m = ex.data_sample_size(bimodal6.k, eps, delta)
        horizon = ex.mixing_horizons(bimodal6.mixture, self.CSTAR, eps)["loglog"]
        grid = np.linspace(0.0, horizon, 41)
        rep = ex.warm_start_mixing(bimodal6, m, grid, trials, np.random.default_rng(4), cstar=self.CSTAR, eps=eps)
        elapsed = time.perf_counter() - t0
        mixed = int(rep.mixed.sum())
        need = (1 - delta) * trials - 3 * math.sqrt(trials * delta * (1 - delta))
        ok_b = mixed >= need
        ok_c = bool(rep.weak_mixing_ok.all())
        ok = ok_b and ok_c and elapsed < 600
        report(capsys, "4bc", ok, f"m={m}, horizon={horizon:.2f}, mixed {mixed}/{trials} (need {need:.1f}), "
               f"weak mixing {int(rep.weak_mixing_ok.sum())}/{trials}", elapsed)
        assert ok


def reference(d, eta):
    q = np.full(d, (1 - eta) / (d - 1))
    q[0] = eta
    return q


def at_kl(q, level):
    """Point on the segment from q toward the vertex e_0 with KL(p||q) = level."""
    r = np.zeros_like(q)
    r[0] = 1.0
    s = optimize.brentq(lambda s: kl_divergence((1 - s) * q + s * r, q) - level, 0.0, 1.0 - 1e-12, xtol=1e-15)
    return (1 - s) * q + s * r


class TestCriterion5:
    @pytest.mark.parametrize("d,eta,eps,delta", [(2, 0.3, 0.3, 0.1), (10, 0.05, 0.3, 0.1)])
    def test_kl_test_contract(self, capsys, d, eta, eps, delta):
        t0 = time.perf_counter()
        trials = 200
        q = reference(d, eta)
        p = at_kl(q, eps)
        rng = np.random.default_rng(5 + d)
        null, alt = ts.array_source(q, rng), ts.array_source(p, rng)
        verdicts = [ts.kl_test(null, q, eps, delta) for _ in range(trials)]
        acc = np.mean([v.accept for v in verdicts])
        rej = np.mean([not ts.kl_test(alt, q, eps, delta).accept for _ in range(trials)])
        floor = 1 - delta - 3 * binom_sigma(1 - delta, trials)
        expected = ts.repetitions(delta) * math.ceil(ts.C_KLTEST * math.sqrt(d) * math.log(math.e**2 / eta) / eps)
        counts_ok = all(v.samples_used == expected for v in verdicts) and ts.kl_test_sample_count(d, eta, eps, delta) == expected
        elapsed = time.perf_counter() - t0
        ok = acc >= floor and rej >= floor and counts_ok and elapsed < 900
        report(capsys, 5, ok, f"(d={d}, eta={eta}) accept|null {acc:.3f}, reject|KL={kl_divergence(p, q):.3f} {rej:.3f}, "
               f"floor {floor:.3f}, samples {expected}", elapsed)
        assert ok


@pytest.fixture(scope="module")
def bimodal5():
    return MixtureModel(np.array([0.5, 0.5]), (B(0.1, 5), B(0.9, 5)))


class TestCriterion6:
    RUNS = 200
    EPS = 0.5

    def families(self, model):
        skew = model.reweighted([0.98, 0.02]).mixture
        intra = MixtureModel(np.array([0.5, 0.5]), (B(0.3, 5), B(0.7, 5))).mixture
        return {"null": model.mixture, "skew": skew, "intra": intra}

    def rates(self, model, pi, params, seed):
        rejects = trips = 0
        for ss in np.random.SeedSequence(seed).spawn(self.RUNS):
            oracle_seed, algo_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
            p = AlgorithmParams(params.eps, params.cstar, params.eta, params.n, params.q, seed=algo_seed)
            rep = product_set_kl_test(model, OracleHandle(pi, seed=oracle_seed), p)
            assert rep.coordinate_calls <= p.T  # budget never exceeded silently
            rejects += not rep.accept
            trips += rep.step1.budget_tripped
        return rejects / self.RUNS, trips / self.RUNS

    def test_end_to_end(self, capsys, bimodal5):
        t0 = time.perf_counter()
        params = AlgorithmParams.from_model(bimodal5, self.EPS, cstar=1.1)
        fam = self.families(bimodal5)
        certified = {k: kl_divergence(v, bimodal5.mixture) for k, v in fam.items()}
        branch = {k: chain_rule_decompose(bimodal5, density_ratio(v, bimodal5.mixture)) for k, v in fam.items()}
        out = {k: self.rates(bimodal5, v, params, 60 + j) for j, (k, v) in enumerate(fam.items())}
        elapsed = time.perf_counter() - t0
        null_ceiling = 0.4 + 3 * binom_sigma(0.4, self.RUNS)
        sound_floor = 0.6 - 3 * binom_sigma(0.6, self.RUNS)
        trip_ceiling = 0.01 + 3 * binom_sigma(0.01, self.RUNS)
        ok = (
            out["null"][0] <= null_ceiling
            and out["skew"][0] >= sound_floor
            and out["intra"][0] >= sound_floor
            and certified["skew"] >= self.EPS
            and certified["intra"] >= self.EPS
            and branch["skew"].inter >= self.EPS / 2
            and branch["intra"].intra >= self.EPS / 2
            and out["null"][1] <= trip_ceiling
            and elapsed < 1800
        )
        detail = (
            f"eta={params.eta:.5f}, T1={params.T1}, T={params.T:.3e}; "
            + ", ".join(f"{k}: KL={certified[k]:.4f} reject={out[k][0]:.3f} trips={out[k][1]:.3f}" for k in fam)
            + f"; null ceiling {null_ceiling:.3f}, soundness floor {sound_floor:.3f}, trip ceiling {trip_ceiling:.3f}"
        )
        report(capsys, 6, ok, detail, elapsed)
        assert ok


class TestCriterion7:
    def test_backend_equivalence(self, capsys):
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        pi = MixtureModel(np.array([0.4, 0.6]), (DenseDistribution.random(3, 3, rng), DenseDistribution.random(3, 3, rng))).mixture
        x, i, draws = (2, 0, 1), 1, 100_000
        a = OracleHandle(pi, seed=71).coordinate_sample(x, i, size=draws)
        b = GlauberOracleHandle(pi, seed=72).coordinate_sample(x, i, size=draws)
        table = np.array([np.bincount(a, minlength=3), np.bincount(b, minlength=3)])
        pvalue = stats.chi2_contingency(table).pvalue
        elapsed = time.perf_counter() - t0
        ok = pvalue > 1e-3 and elapsed < 300
        report(capsys, 7, ok, f"two-sample chi2 p={pvalue:.3f} on {draws} draws each, n=3, q=3", elapsed)
        assert ok
