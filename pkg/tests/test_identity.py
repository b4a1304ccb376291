import json
import math

import numpy as np
import pytest

from mixglauber import identity as idt
from mixglauber.core_dist import DenseDistribution, MixtureModel, chain_rule_decompose, density_ratio, kl_divergence, rho_of
from mixglauber.errors import InvalidSetup, UnsupportedSlice
from mixglauber.oracles import OracleHandle
from mixglauber.testers import C_KLTEST

B = DenseDistribution.bernoulli_product


@pytest.fixture(scope="module")
def model():
    return MixtureModel(np.array([0.5, 0.5]), (B(0.1, 3), B(0.9, 3)))


@pytest.fixture(scope="module")
def params(model):
    return idt.AlgorithmParams.from_model(model, 0.5, cstar=1.1, seed=0)


class TestParams:
    def test_formulas(self, params):
        c, n, eps, eta = params.cstar, params.n, params.eps, params.eta
        T1 = math.ceil(math.log(25) * c * n / (0.45 * eps))
        L = 0.05 * eps / (c * n)
        T = 100 * T1 * C_KLTEST * math.sqrt(2) * math.log(1 / eta) * math.log(20 * T1) * 10 * math.log(math.log(1 / eta) / L)
        assert params.T1 == T1
        assert params.T == pytest.approx(T, rel=1e-14)
        assert (params.theta_low, params.theta_high) == (pytest.approx(L), pytest.approx(math.log(1 / eta)))

    def test_T1_is_smallest_sufficient(self, params):
        rate = 0.45 * params.eps / (params.cstar * params.n)
        # (1 - rate)^T1 <= exp(-rate T1) <= 1/25
        assert math.exp(-rate * params.T1) <= 0.04
        assert math.exp(-rate * (params.T1 - 1)) > 0.04

    def test_eta_read_off_mu(self, model, params):
        # slice (0, 0, .) of 0.5 Bern(.1)^3 + 0.5 Bern(.9)^3: smallest conditional
        a = 0.5 * 0.9**2 * 0.1 + 0.5 * 0.1**2 * 0.9
        b = 0.5 * 0.9**3 + 0.5 * 0.1**3
        assert params.eta == pytest.approx(a / (a + b), rel=1e-12)

    def test_eps_too_large(self):
        with pytest.raises(InvalidSetup):
            idt.AlgorithmParams(eps=10.0, cstar=1.0, eta=0.4, n=3, q=2)

    def test_balance_mismatch(self, model):
        bad = idt.AlgorithmParams(0.5, 1.1, 0.3, 3, 2)
        with pytest.raises(InvalidSetup):
            idt.product_set_kl_test(model, OracleHandle(model.mixture, seed=0), bad)

    def test_shape_mismatch(self, model, params):
        with pytest.raises(InvalidSetup):
            idt.product_set_kl_test(model, OracleHandle(B(0.5, 2), seed=0), params)

    def test_estimated_cstar_for_products(self, model):
        p = idt.AlgorithmParams.from_model(model, 0.5, restarts=5)
        assert p.cstar == pytest.approx(1.1, rel=1e-6)

    def test_inverse_theta_mean(self, params):
        assert idt.inverse_threshold_mean_quad(params) == pytest.approx(idt.inverse_threshold_mean(params), abs=1e-10)


class TestStepOne:
    def test_accounting_and_thresholds(self, model, params):
        oracle = OracleHandle(model.mixture, seed=1)
        ok, rec = idt.step_one_local(model, oracle, params, np.random.default_rng(2))
        assert ok and len(rec.pairs) == params.T1 and rec.rejections == 0
        assert all(params.theta_low <= p.theta <= params.theta_high for p in rec.pairs)
        assert rec.coordinate_calls == sum(p.coordinate_calls for p in rec.pairs) == oracle.coordinate_calls
        assert rec.coordinate_calls <= params.T
        assert oracle.general_calls == params.T1
        # restriction to the pre-drawn pairs is lifted afterwards
        oracle.coordinate_sample((1, 1, 1), 0)

    def test_budget_trip_rejects(self, model, params):
        class Tight(idt.AlgorithmParams):
            @property
            def T(self):
                return 100.0

        tight = Tight(params.eps, params.cstar, params.eta, params.n, params.q)
        report = idt.product_set_kl_test(model, OracleHandle(model.mixture, seed=3), tight)
        assert not report.accept
        assert report.step1.budget_tripped and report.step2 is None
        assert report.coordinate_calls <= 100

    def test_unsupported_slice_rejects(self, model, params):
        class Broken(OracleHandle):
            def _draw_coordinate(self, x, i, k):
                raise UnsupportedSlice("no mass")

        ok, rec = idt.step_one_local(model, Broken(model.mixture, seed=4), params, np.random.default_rng(5))
        assert not ok and rec.unsupported_slice

    def test_intra_divergence_rejects(self, model, params):
        pi = MixtureModel(np.array([0.5, 0.5]), (B(0.35, 3), B(0.65, 3))).mixture
        parts = chain_rule_decompose(model, density_ratio(pi, model.mixture))
        assert parts.intra >= 0.5 * params.eps
        rejects = 0
        for s in range(30):
            ok, _ = idt.step_one_local(model, OracleHandle(pi, seed=s), params, np.random.default_rng(100 + s))
            rejects += not ok
        assert rejects >= 0.9 * 30 - 3 * math.sqrt(30 * 0.09)


class TestStepTwo:
    def test_null_accepts(self, model, params):
        accepts = sum(
            idt.step_two_weights(model, OracleHandle(model.mixture, seed=s), params, np.random.default_rng(s)).accept
            for s in range(40)
        )
        assert accepts >= 0.9 * 40 - 3 * math.sqrt(40 * 0.09)

    def test_disjoint_component(self):
        a = DenseDistribution(2, 2, np.array([0.5, 0.5, 0.0, 0.0]))
        b = DenseDistribution(2, 2, np.array([0.0, 0.0, 0.5, 0.5]))
        model = MixtureModel(np.array([0.5, 0.5]), (a, b))
        np.testing.assert_allclose(rho_of(model, a), [1.0, 0.0])
        assert kl_divergence(rho_of(model, a), model.weights) == pytest.approx(math.log(2))
        params = idt.AlgorithmParams(eps=2 * math.log(2), cstar=1.0, eta=0.5, n=2, q=2)
        rec = idt.step_two_weights(model, OracleHandle(a, seed=6), params, np.random.default_rng(7))
        assert not rec.accept


class TestEndToEnd:
    def test_report_shape(self, model, params):
        report = idt.product_set_kl_test(model, OracleHandle(model.mixture, seed=8), params)
        d = json.loads(report.to_json())
        assert set(d) == {"verdict", "step1", "step2", "general_calls"}
        assert set(d["step1"]) == {"pairs", "rejections", "coordinate_calls", "budget", "budget_tripped"}
        assert d["general_calls"] == params.T1 + (d["step2"]["samples"] if d["step2"] else 0)

    def test_deterministic(self, model, params):
        runs = [idt.product_set_kl_test(model, OracleHandle(model.mixture, seed=9), params).to_dict() for _ in range(2)]
        assert runs[0] == runs[1]

    def test_weight_skew_rejects(self, model, params):
        pi = model.reweighted([0.98, 0.02]).mixture
        parts = chain_rule_decompose(model, density_ratio(pi, model.mixture))
        assert parts.inter >= 0.5 * params.eps
        rejects = sum(
            not idt.product_set_kl_test(model, OracleHandle(pi, seed=s), idt.AlgorithmParams(**{**params.__dict__, "seed": s})).accept
            for s in range(20)
        )
        assert rejects >= 0.6 * 20

    def test_amplified_null(self, model, params):
        accept, reports = idt.amplified_test(model, OracleHandle(model.mixture, seed=10), params, 0.4)
        assert accept and len(reports) == 2 * math.ceil(25 * math.log(2.5)) + 1
