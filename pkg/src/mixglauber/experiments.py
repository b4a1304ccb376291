"""Data-based initialisation, warm-start mixing and KL concentration checks.

All Monte Carlo estimates come with a standard error.  Bound checks are one
sided with 3 sigma of slack.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core_dist import DenseDistribution, MixtureModel, decode_indices
from .errors import InvalidParameter, InvalidTime, UnsupportedSlice
from .glauber import estimate_ate_constant, evolve_on_grid, kl_rows

C_M = 4.0
C_MIX = 20.0
SIGMAS = 3.0
MONOTONE_TOL = 1e-9
WEAK_MIXING_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    atoms: np.ndarray  # (m, n) configurations, each with weight 1/m
    q: int
    seed: object = None

    @property
    def m(self) -> int:
        return self.atoms.shape[0]

    @property
    def n(self) -> int:
        return self.atoms.shape[1]

    def to_dense(self) -> DenseDistribution:
        idx = np.ravel_multi_index(tuple(self.atoms.T), (self.q,) * self.n)
        counts = np.bincount(idx, minlength=self.q**self.n)
        return DenseDistribution(self.q, self.n, counts / self.m)


def draw_empirical(mu: DenseDistribution, m: int, rng: np.random.Generator) -> EmpiricalDistribution:
    if m < 1:
        raise InvalidParameter(f"m must be >= 1, got {m}")
    idx = mu.sample_indices(rng, size=m)
    return EmpiricalDistribution(decode_indices(idx, mu.q, mu.n), mu.q)


@dataclass(frozen=True)
class ConcentrationReport:
    params: dict
    estimate: float
    se: float
    bound: float
    trials: int
    passed: bool
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "estimate": self.estimate,
            "bound": self.bound,
            "se": self.se,
            "trials": self.trials,
            "params": self.params,
            **self.extra,
        }


def _mgf_pass(estimate: float, se: float, bound: float) -> bool:
    rse = se / estimate if estimate > 0 else 0.0
    return bool(estimate <= bound * (1 + SIGMAS * rse))


def _kl_to(p_hat: np.ndarray, rho: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p_hat > 0, p_hat * np.log(p_hat / rho), 0.0)
    return np.maximum(t.sum(axis=-1), 0.0)


def _check_rho(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=np.float64).reshape(-1)
    if np.any(rho <= 0) or abs(rho.sum() - 1) > 1e-9:
        raise InvalidParameter("rho must be a fully supported distribution")
    return rho


def mgf_bound(k: int, m: int, lam: float) -> float:
    return (1.0 / (1.0 - lam / m)) ** (k - 1)


def tail_bound(k: int, m: int, eps: float) -> float:
    if k == 1:
        return math.exp(-eps * m)
    return math.exp(-eps * m) * (math.e * eps * m / (k - 1)) ** (k - 1)


def _check_lambda(m, lam):
    if m < 1:
        raise InvalidParameter(f"m must be >= 1, got {m}")
    if not 0 <= lam < m:
        raise InvalidParameter(f"need 0 <= lambda < m, got lambda={lam}, m={m}")


def _empirical_kls(rho, m, trials, rng, chunk=20000) -> np.ndarray:
    out = []
    for start in range(0, trials, chunk):
        counts = rng.multinomial(m, rho, size=min(chunk, trials - start))
        out.append(_kl_to(counts / m, rho))
    return np.concatenate(out)


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0


def empirical_kl_mgf(rho, m: int, lam: float, trials: int, rng: np.random.Generator) -> ConcentrationReport:
    """E exp(lam KL(empirical_m || rho)) against (1 - lam/m)^-(k-1)."""
    _check_lambda(m, lam)
    rho = _check_rho(rho)
    kls = _empirical_kls(rho, m, trials, rng)
    est, se = _mean_se(np.exp(lam * kls))
    bound = mgf_bound(rho.size, m, lam)
    return ConcentrationReport({"k": rho.size, "m": m, "lambda": lam}, est, se, bound, trials, _mgf_pass(est, se, bound))


def empirical_kl_tail(rho, m: int, eps: float, trials: int, rng: np.random.Generator) -> ConcentrationReport:
    """Pr[KL(empirical_m || rho) > eps] against e^{-eps m} (e eps m/(k-1))^{k-1}."""
    rho = _check_rho(rho)
    k = rho.size
    if m < 1 or not eps > (k - 1) / m:
        raise InvalidParameter(f"need eps > (k-1)/m, got eps={eps}, k={k}, m={m}")
    kls = _empirical_kls(rho, m, trials, rng)
    est, se = _mean_se((kls > eps).astype(np.float64))
    bound = tail_bound(k, m, eps)
    return ConcentrationReport({"k": k, "m": m, "eps": eps}, est, se, bound, trials, bool(est <= bound + SIGMAS * se))


def posterior_weight_kls(model: MixtureModel, m: int, trials: int, rng: np.random.Generator, chunk=5000) -> np.ndarray:
    """KL(rho_hat || rho) with rho_hat the averaged posterior over m draws from mu."""
    post = model.posterior_table
    mu = model.mixture
    out = []
    for start in range(0, trials, chunk):
        b = min(chunk, trials - start)
        idx = mu.sample_indices(rng, size=(b, m))
        rho_hat = post[idx].mean(axis=1)
        out.append(_kl_to(rho_hat, model.weights))
    return np.concatenate(out)


def mixture_posterior_mgf(model: MixtureModel, m: int, lam: float, trials: int, rng: np.random.Generator) -> ConcentrationReport:
    """MGF of the posterior-weight KL, checked against the bound and against the
    disjoint-support case at the same (k, m, lambda)."""
    _check_lambda(m, lam)
    kls = posterior_weight_kls(model, m, trials, rng)
    est, se = _mean_se(np.exp(lam * kls))
    bound = mgf_bound(model.k, m, lam)
    disjoint = empirical_kl_mgf(model.weights, m, lam, trials, rng)
    combined = math.hypot(se, disjoint.se)
    dominated = bool(est <= disjoint.estimate + SIGMAS * combined)
    extra = {"disjoint_estimate": disjoint.estimate, "disjoint_se": disjoint.se, "dominated": dominated}
    return ConcentrationReport(
        {"k": model.k, "m": m, "lambda": lam}, est, se, bound, trials, _mgf_pass(est, se, bound) and dominated, extra
    )


# --- warm-start mixing -------------------------------------------------------


def data_sample_size(k: int, eps: float, delta: float, c_m: float = C_M) -> int:
    return math.ceil(c_m * (k / eps + math.log(1.0 / delta) / eps))


def mixing_horizons(mu: DenseDistribution, cstar: float, eps: float, c_mix: float = C_MIX) -> dict:
    """The horizon with log log(1/min mu), and the alternative with log(1/min mu)."""
    L = math.log(1.0 / float(mu.probs.min()))
    base = c_mix * cstar * mu.n
    return {"loglog": base * (math.log(L) + math.log(1.0 / eps)), "log": base * (L + math.log(1.0 / eps))}


def component_cstar(model: MixtureModel, inflation: float = 1.1, **kw) -> float:
    return inflation * max(estimate_ate_constant(c, **kw).lower for c in model.components)


@dataclass(frozen=True, eq=False)
class MixingReport:
    times: np.ndarray
    kl: np.ndarray  # (trials, G)
    inter_kl: np.ndarray  # (trials, G)
    cstar: float
    m: int
    eps: float
    weak_mixing_ok: np.ndarray  # per trial
    monotone_ok: np.ndarray  # per trial
    tail: ConcentrationReport | None = None
    meta: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return self.kl.shape[0]

    @property
    def mixed(self) -> np.ndarray:
        return self.kl[:, -1] <= self.eps

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "t", "kl_nats", "inter_kl_nats"])
        for j in range(self.trials):
            for t, a, b in zip(self.times, self.kl[j], self.inter_kl[j]):
                w.writerow([j, repr(float(t)), repr(float(a)), repr(float(b))])
        return buf.getvalue()

    def summary(self) -> dict:
        frac = float(self.mixed.mean())
        return {
            "trials": self.trials,
            "m": self.m,
            "eps": self.eps,
            "cstar": self.cstar,
            "t_final": float(self.times[-1]),
            "fraction_mixed": frac,
            "fraction_mixed_se": math.sqrt(frac * (1 - frac) / self.trials),
            "weak_mixing_all_trials": bool(self.weak_mixing_ok.all()),
            "weak_mixing_form": "sup over grid of inter KL",
            "monotone_all_trials": bool(self.monotone_ok.all()),
            "tail_check": None if self.tail is None else {**self.tail.to_dict(), "form": "grid average of inter KL"},
            **self.meta,
        }


def _check_grid(t_grid) -> np.ndarray:
    t = np.asarray(t_grid, dtype=np.float64)
    if t.size == 0 or np.any(t < 0):
        raise InvalidTime("time grid must be nonempty and nonnegative")
    if np.any(np.diff(t) <= 0):
        raise InvalidTime("time grid must be increasing")
    return t


def trajectories(model: MixtureModel, pis: np.ndarray, t_grid) -> tuple[np.ndarray, np.ndarray]:
    """Exact KL(P_t pi || mu) and KL(rho_{P_t pi} || rho) for a batch of initial laws."""
    mu = model.mixture
    snaps = evolve_on_grid(pis, mu, t_grid)
    kl = kl_rows(snaps, mu.probs)
    rho_t = snaps @ model.posterior_table
    return kl, _kl_to(rho_t, model.weights)


def weak_mixing_holds(times, kl, inter, cstar: float, n: int) -> np.ndarray:
    """Per trial: KL_t <= exp(-t/(cstar n)) KL_0 + max_{s <= t} inter_s + tol at every grid point."""
    decay = np.exp(-times / (cstar * n))
    rhs = decay * kl[:, :1] + np.maximum.accumulate(inter, axis=1) + WEAK_MIXING_TOL
    return np.all(kl <= rhs, axis=1)


def monotone_nonincreasing(kl: np.ndarray) -> np.ndarray:
    return np.all(np.diff(kl, axis=1) <= MONOTONE_TOL, axis=1)


def warm_start_mixing(
    model: MixtureModel,
    m: int,
    t_grid,
    trials: int,
    rng: np.random.Generator,
    cstar: float | None = None,
    eps: float = 0.1,
) -> MixingReport:
    """Start from the empirical law of m samples of mu, evolve exactly, record KL curves."""
    mu = model.mixture
    if not mu.is_fully_supported:
        raise UnsupportedSlice("warm-start mixing needs a fully supported mixture")
    times = _check_grid(t_grid)
    if times[0] != 0:
        times = np.concatenate([[0.0], times])
    cstar = component_cstar(model) if cstar is None else cstar
    pis = np.stack([draw_empirical(mu, m, rng).to_dense().probs for _ in range(trials)])
    kl, inter = trajectories(model, pis, times)
    ok = weak_mixing_holds(times, kl, inter, cstar, mu.n)
    tail = None
    if eps > (model.k - 1) / m:
        avg = inter.mean(axis=1)
        est = float((avg > eps).mean())
        se = math.sqrt(max(est * (1 - est), 0.0) / trials)
        bound = tail_bound(model.k, m, eps)
        tail = ConcentrationReport({"k": model.k, "m": m, "eps": eps}, est, se, bound, trials, bool(est <= bound + SIGMAS * se))
    meta = {"horizons": mixing_horizons(mu, cstar, eps), "C_m": C_M, "C_mix": C_MIX, "min_mu": float(mu.probs.min())}
    return MixingReport(times, kl, inter, cstar, m, eps, ok, monotone_nonincreasing(kl), tail, meta)


def point_mass_curve(model: MixtureModel, x0, t_grid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times, KL, inter KL) from a point mass at x0."""
    times = _check_grid(t_grid)
    pi = DenseDistribution.point_mass(x0, model.q).probs
    kl, inter = trajectories(model, pi[None], times)
    return times, kl[0], inter[0]
