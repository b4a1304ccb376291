"""Identity testing against a known mixture of well-mixing components.

``product_set_kl_test`` runs two stages against oracle access to an unknown pi:

1. Local stage.  Pre-draw ``T1`` pairs (x ~ pi, i uniform).  At each pair draw a
   random threshold theta and KL-test the coordinate-i slice of pi at x against
   the matching slice of mu, with coordinate oracle samples.  Any rejection, or
   going over the coordinate-call budget ``T``, rejects.
2. Weight stage.  Draw x ~ pi, then a component label from the posterior at x;
   KL-test the law of that label against the mixture weights.

The random threshold is what keeps the expected budget small: the sub-test cost
scales as 1/theta, and E[1/theta] is only logarithmic in the interval ratio.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .core_dist import MixtureModel, balance, conditional_slice, posterior
from .errors import BudgetExhausted, InvalidSetup, UnsupportedPoint, UnsupportedSlice
from .glauber import estimate_ate_constant
from .oracles import Budget, OracleHandle, RestrictedPairSet
from .testers import C_KLTEST, kl_test

STEP1_DELTA_TOTAL = 0.05
STEP2_DELTA = 0.1
CSTAR_INFLATION = 1.1


@dataclass(frozen=True)
class AlgorithmParams:
    eps: float
    cstar: float
    eta: float
    n: int
    q: int
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise InvalidSetup(f"eps must be positive, got {self.eps}")
        if not self.cstar >= 1:
            raise InvalidSetup(f"cstar must be at least 1, got {self.cstar}")
        if not 0 < self.eta <= 1.0 / self.q:
            raise InvalidSetup(f"eta must lie in (0, 1/q], got {self.eta}")
        if self.eps > self.n * math.log(1.0 / self.eta):
            raise InvalidSetup("eps exceeds n ln(1/eta); every pi is within that KL of mu")

    @property
    def theta_low(self) -> float:
        return 0.05 * self.eps / (self.cstar * self.n)

    @property
    def theta_high(self) -> float:
        return math.log(1.0 / self.eta)

    @property
    def T1(self) -> int:
        return math.ceil(math.log(25) * self.cstar * self.n / (0.45 * self.eps))

    @property
    def T(self) -> float:
        T1 = self.T1
        return (
            100 * T1 * C_KLTEST * math.sqrt(self.q) * math.log(1.0 / self.eta) * math.log(20 * T1)
            * 10 * math.log(self.theta_high / self.theta_low)
        )

    @classmethod
    def from_model(cls, model: MixtureModel, eps: float, cstar: float | None = None, seed: int = 0, **ate_kw):
        """Read eta off mu exactly; estimate cstar when not supplied."""
        eta = balance(model.mixture).eta
        if eta <= 0:
            raise InvalidSetup("mu is not fully supported")
        if cstar is None:
            est = max(estimate_ate_constant(c, **ate_kw).lower for c in model.components)
            cstar = CSTAR_INFLATION * est
        return cls(float(eps), float(cstar), float(eta), model.n, model.q, seed)

    def to_dict(self) -> dict:
        return {**asdict(self), "T1": self.T1, "T": self.T}


def inverse_threshold_mean(params: AlgorithmParams) -> float:
    """E[1/theta] in closed form."""
    lo, hi = params.theta_low, params.theta_high
    return math.log(hi / lo) / (hi - lo)


def inverse_threshold_mean_quad(params: AlgorithmParams) -> float:
    lo, hi = params.theta_low, params.theta_high
    val, _ = integrate.quad(lambda t: 1.0 / t, lo, hi, epsabs=0, epsrel=1e-13, limit=200)
    return val / (hi - lo)


@dataclass(frozen=True)
class PairRecord:
    x: tuple
    i: int
    theta: float
    accept: bool
    coordinate_calls: int


@dataclass
class StepOneRecord:
    pairs: list = field(default_factory=list)
    budget: float = 0.0
    coordinate_calls: int = 0
    budget_tripped: bool = False
    unsupported_slice: bool = False

    @property
    def rejections(self) -> int:
        return sum(not p.accept for p in self.pairs)


@dataclass(frozen=True)
class StepTwoRecord:
    accept: bool
    samples: int
    unsupported_point: bool = False


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    accept: bool
    params: AlgorithmParams
    step1: StepOneRecord
    step2: StepTwoRecord | None
    general_calls: int
    coordinate_calls: int

    @property
    def verdict(self) -> str:
        return "accept" if self.accept else "reject"

    def to_dict(self) -> dict:
        s1 = self.step1
        return {
            "verdict": self.verdict,
            "step1": {
                "pairs": self.params.T1,
                "rejections": s1.rejections,
                "coordinate_calls": s1.coordinate_calls,
                "budget": s1.budget,
                "budget_tripped": s1.budget_tripped,
            },
            "step2": None if self.step2 is None else {
                "verdict": "accept" if self.step2.accept else "reject",
                "samples": self.step2.samples,
            },
            "general_calls": self.general_calls,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _check_setup(model: MixtureModel, oracle: OracleHandle, params: AlgorithmParams):
    if (model.q, model.n) != (oracle.q, oracle.n) or (params.q, params.n) != (model.q, model.n):
        raise InvalidSetup("model, oracle and params disagree on (q, n)")
    if balance(model.mixture).eta < params.eta * (1 - 1e-12):
        raise InvalidSetup("mu is not eta-balanced for the supplied eta")


def step_one_local(model: MixtureModel, oracle: OracleHandle, params: AlgorithmParams, rng: np.random.Generator):
    """Returns (accept, StepOneRecord)."""
    mu = model.mixture
    T1 = params.T1
    sub_delta = STEP1_DELTA_TOTAL / T1
    record = StepOneRecord(budget=params.T)
    budget = Budget(params.T)

    xs = oracle.general_sample(T1)
    sites = rng.integers(params.n, size=T1)
    thetas = rng.uniform(params.theta_low, params.theta_high, size=T1)
    pairs = RestrictedPairSet(tuple((tuple(int(v) for v in x), int(i)) for x, i in zip(xs, sites)))
    oracle.restrict(pairs)
    try:
        for (x, i), theta in zip(pairs.pairs, thetas):
            before = budget.consumed
            try:
                ref = conditional_slice(mu, x, i).law
                verdict = kl_test(lambda m: oracle.coordinate_sample(x, i, size=m, budget=budget), ref, float(theta), sub_delta)
            except BudgetExhausted:
                record.budget_tripped = True
                record.coordinate_calls = budget.consumed
                return False, record
            except UnsupportedSlice:
                record.unsupported_slice = True
                record.coordinate_calls = budget.consumed
                return False, record
            record.pairs.append(PairRecord(x, i, float(theta), verdict.accept, budget.consumed - before))
            if not verdict.accept:
                record.coordinate_calls = budget.consumed
                return False, record
    finally:
        oracle.restrict(None)
    record.coordinate_calls = budget.consumed
    return True, record


def step_two_weights(model: MixtureModel, oracle: OracleHandle, params: AlgorithmParams, rng: np.random.Generator):
    """KL-test the posterior-label law under pi against the mixture weights."""
    drawn = 0
    bad = False

    def labels(m):
        nonlocal drawn, bad
        xs = oracle.general_sample(m)
        drawn += m
        out = np.empty(m, dtype=np.int64)
        for j, x in enumerate(xs):
            try:
                w = posterior(model, x)
            except UnsupportedPoint:
                bad = True
                raise
            out[j] = rng.choice(model.k, p=w)
        return out

    try:
        verdict = kl_test(labels, model.weights, 0.5 * params.eps, STEP2_DELTA)
    except UnsupportedPoint:
        return StepTwoRecord(False, drawn, unsupported_point=True)
    return StepTwoRecord(verdict.accept, drawn)


def product_set_kl_test(model: MixtureModel, oracle: OracleHandle, params: AlgorithmParams) -> TestReport:
    """Accept pi = mu w.p. >= 0.6; reject KL(pi || mu) >= eps w.p. >= 0.6."""
    _check_setup(model, oracle, params)
    rng = np.random.default_rng(params.seed)
    g0, c0 = oracle.general_calls, oracle.coordinate_calls
    ok, s1 = step_one_local(model, oracle, params, rng)
    s2 = step_two_weights(model, oracle, params, rng) if ok else None
    accept = ok and s2.accept
    return TestReport(accept, params, s1, s2, oracle.general_calls - g0, oracle.coordinate_calls - c0)


def amplified_test(model: MixtureModel, oracle: OracleHandle, params: AlgorithmParams, delta: float) -> tuple[bool, list]:
    """Majority over 2r+1 independent runs; error <= delta when each run errs w.p. <= 0.4.

    Hoeffding with gap 0.1 needs 2r+1 >= 50 ln(1/delta).
    """
    if not 0 < delta < 0.5:
        raise InvalidSetup(f"delta must lie in (0, 1/2), got {delta}")
    runs = 2 * math.ceil(25 * math.log(1.0 / delta)) + 1
    seeds = np.random.SeedSequence(params.seed).spawn(runs)
    reports = []
    for s in seeds:
        p = AlgorithmParams(params.eps, params.cstar, params.eta, params.n, params.q, int(s.generate_state(1)[0]))
        reports.append(product_set_kl_test(model, oracle, p))
    accepts = sum(r.accept for r in reports)
    return 2 * accepts > runs, reports
