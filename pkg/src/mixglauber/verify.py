"""Exact-arithmetic identity battery over mixture instances.

Each check returns the two sides it compares; a violation is a gap above the
tolerance.  Used by the ``verify-identities`` subcommand and the test suite.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_dist import (
    U_LOG_U,
    U_SQUARED,
    DenseDistribution,
    MixtureModel,
    balance,
    chain_rule_decompose,
    conditional_tensor,
    density_ratio,
    hellinger_sq,
    kl_divergence,
    local_entropy_functional,
    min_prob_lower_bound_check,
    phi_entropy,
    rho_of,
)
from .glauber import estimate_phi_sobolev_constant, weak_phi_sobolev_check

TOL = 1e-10
HK_TOL = 1e-12


@dataclass(frozen=True)
class Instance:
    model: MixtureModel
    pi: DenseDistribution
    name: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "model": self.model.to_dict(), "pi": self.pi.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> Instance:
        return cls(MixtureModel.from_dict(d["model"]), DenseDistribution.from_dict(d["pi"]), d.get("name", ""))


@dataclass(frozen=True)
class CheckResult:
    check: str
    instance: str
    lhs: float
    rhs: float
    ok: bool


def random_instance(rng: np.random.Generator, max_k=4, max_n=5, max_q=3, name="") -> Instance:
    k = int(rng.integers(1, max_k + 1))
    n = int(rng.integers(1, max_n + 1))
    q = int(rng.integers(2, max_q + 1))
    comps = tuple(DenseDistribution.random(q, n, rng) for _ in range(k))
    weights = rng.dirichlet(np.ones(k))
    model = MixtureModel(weights, comps)
    if rng.random() < 0.5:
        pi = DenseDistribution.random(q, n, rng)
    else:
        pi = MixtureModel(rng.dirichlet(np.ones(k)), tuple(DenseDistribution.random(q, n, rng) for _ in range(k))).mixture
    return Instance(model, pi, name)


def random_instances(count: int, seed: int) -> list[Instance]:
    rng = np.random.default_rng(seed)
    return [random_instance(rng, name=f"random-{j}") for j in range(count)]


def _close(a, b, tol=TOL) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def slicewise_kl_sum(pi: DenseDistribution, mu: DenseDistribution) -> float:
    """sum_i E_{x~pi}[KL(pi|x_{-i} || mu|x_{-i})], summed slice by slice."""
    tp, tm = pi.table, mu.table
    total = 0.0
    for i in range(pi.n):
        cp = conditional_tensor(tp, pi.n, i)
        cm = conditional_tensor(tm, mu.n, i)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(tp > 0, tp * np.log(cp / cm), 0.0)
        total += float(terms.sum())
    return total


def check_instance(inst: Instance, rng: np.random.Generator) -> list[CheckResult]:
    model, pi, name = inst.model, inst.pi, inst.name
    mu = model.mixture
    f = density_ratio(pi, mu)
    out = []

    for phi in (U_LOG_U, U_SQUARED):
        parts = chain_rule_decompose(model, f, phi)
        out.append(CheckResult(f"chain_rule[{phi.name}]", name, parts.inter + parts.intra, parts.total,
                               _close(parts.inter + parts.intra, parts.total)))

    lhs = local_entropy_functional(mu, f)
    rhs = slicewise_kl_sum(pi, mu)
    out.append(CheckResult("flip_lemma", name, lhs, rhs, _close(lhs, rhs)))

    lhs = phi_entropy(model.weights, model.component_matrix @ f)
    rhs = kl_divergence(rho_of(model, pi), model.weights)
    out.append(CheckResult("rho_pi_fact", name, lhs, rhs, _close(lhs, rhs)))

    c = float(rng.uniform(0.1, 10.0))
    for label, fn in (("entropy", phi_entropy), ("local_entropy", local_entropy_functional)):
        a, b = fn(mu, c * f), c * fn(mu, f)
        out.append(CheckResult(f"homogeneity[{label}]", name, a, b, _close(a, b)))

    bal = balance(mu)
    out.append(CheckResult("min_prob_vs_balance", name, float(mu.probs.min()), bal.eta**mu.n, min_prob_lower_bound_check(mu)))
    return out


def hellinger_kl_checks(d: int, pairs: int, rng: np.random.Generator) -> CheckResult:
    """Worst gap of H^2 >= KL / ln(e^2/eta) over random pairs on [d]."""
    p = rng.dirichlet(np.ones(d), size=pairs)
    # mix concentrations so some references have tiny cells
    conc = rng.choice([0.1, 1.0, 10.0], size=(pairs, 1))
    q = np.array([rng.dirichlet(np.full(d, c)) for c in conc[:, 0]])
    q = np.maximum(q, 1e-300)
    q /= q.sum(axis=1, keepdims=True)
    eta = q.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        kl = np.where(p > 0, p * np.log(p / q), 0.0).sum(axis=1)
    h2 = ((np.sqrt(p) - np.sqrt(q)) ** 2).sum(axis=1)
    gap = kl / np.log(math.e**2 / eta) - h2
    worst = int(np.argmax(gap))
    return CheckResult(f"hellinger_kl[d={d}]", f"{pairs} pairs", float(h2[worst]), float(kl[worst] / np.log(math.e**2 / eta[worst])),
                       bool(gap.max() <= HK_TOL))


def weak_sobolev_checks(inst: Instance, probes: int, rng: np.random.Generator, inflation: float = 1.1) -> list[CheckResult]:
    """Weak Phi-Sobolev inequality at random positive densities, both Phi."""
    model = inst.model
    out = []
    for phi in (U_LOG_U, U_SQUARED):
        cstar = inflation * max(estimate_phi_sobolev_constant(c, phi, restarts=6).lower for c in model.components)
        for j in range(probes):
            f = np.exp(rng.normal(scale=1.5, size=model.mixture.size))
            f /= model.mixture.probs @ f
            lhs, rhs = weak_phi_sobolev_check(model, f, cstar, phi)
            out.append(CheckResult(f"weak_sobolev[{phi.name}]", f"{inst.name}/probe{j}", lhs, rhs, bool(lhs <= rhs + TOL)))
    return out


def load_instances(path) -> list[Instance]:
    data = json.loads(Path(path).read_text())
    return [Instance.from_dict(d) for d in data]


def dump_instances(instances, path) -> None:
    Path(path).write_text(json.dumps([i.to_dict() for i in instances], indent=1))


def run_battery(instances, seed=0, hk_pairs=10_000, hk_dims=(2, 5, 20), weak_probes=0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for inst in instances:
        results.extend(check_instance(inst, rng))
        if weak_probes:
            results.extend(weak_sobolev_checks(inst, weak_probes, rng))
    for d in hk_dims:
        results.append(hellinger_kl_checks(d, hk_pairs, rng))
    return results
