"""Glauber dynamics: transitions, continuous-time evolution, Dirichlet forms and
numerical estimates of tensorization / log-Sobolev constants.

Continuous time uses the generator ``P - I``: one expected single-site resample
per unit time.  The semigroup is applied by uniformization,
``P_t pi = sum_j Pois(j; t) pi P^j``, truncated where the Poisson tail drops
below 1e-12.  ``P`` itself is never materialised for evolution; one step is
``(pi P)(y) = (1/n) sum_i mu(y | y_{\\i}) pi(slice of y along i)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg, optimize, stats

from .core_dist import (
    U_LOG_U,
    DenseDistribution,
    MixtureModel,
    PhiFunctional,
    _check_density,
    chain_rule_decompose,
    conditional_slice,
    conditional_tensor,
    decode_indices,
    encode_config,
    entropy_kernel,
    get_phi,
    kl_divergence,
    slice_means,
)
from .errors import DerivativeUndefined, InvalidTime, StateSpaceTooLarge, UnsupportedSlice

DENSE_MATRIX_CAP = 2**12
POISSON_TAIL = 1e-12


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    matrix: np.ndarray
    stationary: DenseDistribution

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _conditionals(mu: DenseDistribution) -> list[np.ndarray]:
    t = mu.table
    conds = []
    for i in range(mu.n):
        c = conditional_tensor(t, mu.n, i)
        if not np.all(np.isfinite(c)):
            raise UnsupportedSlice(f"mu has a massless slice along coordinate {i}")
        conds.append(c)
    return conds


def transition_matrix(mu: DenseDistribution) -> TransitionMatrix:
    if mu.size > DENSE_MATRIX_CAP:
        raise StateSpaceTooLarge(f"dense transition matrix refused for {mu.size} states")
    conds = [c.reshape(-1) for c in _conditionals(mu)]
    q, n = mu.q, mu.n
    P = np.zeros((mu.size, mu.size))
    states = np.arange(mu.size)
    for i in range(n):
        stride = q ** (n - 1 - i)
        digit = (states // stride) % q
        base = states - digit * stride
        for b in range(q):
            y = base + b * stride
            np.add.at(P, (states, y), conds[i][y] / n)
    return TransitionMatrix(P, mu)


class GlauberOperator:
    """Matrix-free action of the Glauber kernel of ``mu``.

    Works on arrays whose trailing axes are the ``(q,) * n`` configuration axes,
    so a batch of distributions evolves in one call.
    """

    def __init__(self, mu: DenseDistribution):
        self.mu = mu
        self.q, self.n = mu.q, mu.n
        self._conds = _conditionals(mu)

    def _as_tensor(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return v.reshape(v.shape[:-1] + (self.q,) * self.n)

    def forward(self, pi: np.ndarray) -> np.ndarray:
        """Row vector(s) times P: the law after one discrete step."""
        t = self._as_tensor(pi)
        out = np.zeros_like(t)
        for i, c in enumerate(self._conds):
            ax = t.ndim - self.n + i
            out += c * t.sum(axis=ax, keepdims=True)
        return (out / self.n).reshape(np.shape(pi))

    def evolve(self, pi: np.ndarray, t: float) -> np.ndarray:
        """Apply the continuous-time semigroup at time ``t``."""
        if t < 0:
            raise InvalidTime(f"t must be >= 0, got {t}")
        pi = np.asarray(pi, dtype=np.float64)
        if t == 0:
            return pi.copy()
        weights = poisson_weights(t)
        term = pi.copy()
        acc = weights[0] * term
        for w in weights[1:]:
            term = self.forward(term)
            acc += w * term
        return acc / acc.sum(axis=-1, keepdims=True)


def poisson_weights(t: float, tail: float = POISSON_TAIL) -> np.ndarray:
    """Poisson(t) pmf on 0..J with the mass beyond J below ``tail``."""
    J = int(stats.poisson.isf(tail, t)) + 1
    return stats.poisson.pmf(np.arange(J + 1), t)


def evolve_continuous(pi: DenseDistribution, mu: DenseDistribution, t: float) -> DenseDistribution:
    if t < 0:
        raise InvalidTime(f"t must be >= 0, got {t}")
    if t == 0:
        return pi
    p = GlauberOperator(mu).evolve(pi.probs, t)
    return DenseDistribution(mu.q, mu.n, p)


def evolve_on_grid(pis: np.ndarray, mu: DenseDistribution, t_grid: Sequence[float]) -> np.ndarray:
    """Evolve a batch ``(B, q**n)`` of initial laws; returns ``(B, len(t_grid), q**n)``.

    Successive grid points reuse the previous state through the semigroup law.
    """
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if np.any(t_grid < 0) or np.any(np.diff(t_grid) < 0):
        raise InvalidTime("time grid must be nonnegative and nondecreasing")
    op = GlauberOperator(mu)
    cur = np.atleast_2d(np.asarray(pis, dtype=np.float64))
    out = np.empty((cur.shape[0], t_grid.size, cur.shape[1]))
    prev = 0.0
    for j, t in enumerate(t_grid):
        cur = op.evolve(cur, t - prev)
        out[:, j] = cur
        prev = t
    return out


def kl_rows(p: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """KL(p_row || mu) along the last axis; mu must be fully supported."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / mu), 0.0)
    return terms.sum(axis=-1)


@dataclass(frozen=True, eq=False)
class EvolutionCurve:
    times: np.ndarray
    kl: np.ndarray
    snapshots: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "kl_nats"])
        for t, v in zip(self.times, self.kl):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()


def kl_curve(pi: DenseDistribution, mu: DenseDistribution, t_grid, keep_snapshots=False) -> EvolutionCurve:
    snaps = evolve_on_grid(pi.probs[None], mu, t_grid)[0]
    kl = np.array([kl_divergence(s, mu.probs) for s in snaps])
    return EvolutionCurve(np.asarray(t_grid, dtype=float), kl, snaps if keep_snapshots else None)


# --- discrete single-site updates -------------------------------------------

ConditionalSampler = Callable[[tuple, int, np.random.Generator], int]


def exact_conditional_sampler(mu: DenseDistribution) -> ConditionalSampler:
    def sample(state, i, rng):
        law = conditional_slice(mu, state, i).law
        return int(rng.choice(mu.q, p=law))

    return sample


def glauber_step(state: Sequence[int], sampler: ConditionalSampler, rng: np.random.Generator) -> tuple:
    """Resample one uniformly chosen coordinate from its conditional law."""
    state = tuple(int(v) for v in state)
    i = int(rng.integers(len(state)))
    b = sampler(state, i, rng)
    return state[:i] + (b,) + state[i + 1 :]


def run_chain(mu: DenseDistribution, x0: Sequence[int], steps: int, rng: np.random.Generator) -> np.ndarray:
    """Discrete-time trajectory of flat state indices, length ``steps + 1``."""
    P = transition_matrix(mu).matrix if mu.size <= DENSE_MATRIX_CAP else None
    cur = encode_config(x0, mu.q)
    out = np.empty(steps + 1, dtype=np.int64)
    out[0] = cur
    if P is not None:
        cdf = np.cumsum(P, axis=1)
        u = rng.random(steps)
        for s in range(steps):
            cur = min(int(np.searchsorted(cdf[cur], u[s], side="right")), mu.size - 1)
            out[s + 1] = cur
        return out
    sampler = exact_conditional_sampler(mu)
    x = tuple(x0)
    for s in range(steps):
        x = glauber_step(x, sampler, rng)
        out[s + 1] = encode_config(x, mu.q)
    return out


# --- Dirichlet forms -------------------------------------------------------


def dirichlet_form(P: TransitionMatrix, f, g) -> float:
    """E_{x~mu} E_{y~P(x,.)}[(f(x)-f(y)) (g(x)-g(y))] from the dense matrix."""
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    W = P.stationary.probs[:, None] * P.matrix
    df = f[:, None] - f[None, :]
    dg = g[:, None] - g[None, :]
    return float(np.sum(W * df * dg))


def glauber_dirichlet(mu: DenseDistribution, f, g) -> float:
    """Same quantity as :func:`dirichlet_form` for the Glauber chain of ``mu``, matrix-free.

    For one slice with law nu the pair sum is ``2 Cov_nu(f, g)``, so the form is
    ``(2/n) sum_i E_mu[(f - E[f | x_{\\i}]) g]``.
    """
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    t = mu.table
    ft, gt = f.reshape(t.shape), g.reshape(t.shape)
    total = 0.0
    for i in range(mu.n):
        mf = slice_means(t, ft, mu.n, i)
        mg = slice_means(t, gt, mu.n, i)
        # slices through supported points always carry mass; skip the rest
        with np.errstate(invalid="ignore"):
            total += float(np.sum(np.where(t > 0, t * (ft - mf) * (gt - mg), 0.0)))
    return 2.0 * total / mu.n


def phi_dirichlet(mu: DenseDistribution, f, phi: PhiFunctional | str = U_LOG_U) -> float:
    """E_P(f, Phi'(f)) with zero-safe handling of log at f = 0 pairs."""
    phi = get_phi(phi)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    on = mu.probs > 0
    if phi.name == "u_log_u" and np.any(f[on] == 0):
        return _mlsi_dirichlet_dense(mu, f)
    # values off the support never enter the form
    f = np.where(on, f, 1.0)
    return glauber_dirichlet(mu, f, phi.dphi(f))


def _mlsi_dirichlet_dense(mu, f) -> float:
    # pairs with a zero endpoint and a positive one contribute +inf; both zero contribute 0
    P = transition_matrix(mu)
    W = P.stationary.probs[:, None] * P.matrix
    total = 0.0
    for x, y in zip(*np.nonzero(W)):
        if f[x] == f[y]:
            continue
        if f[x] == 0 or f[y] == 0:
            return math.inf
        total += W[x, y] * (f[x] - f[y]) * (math.log(f[x]) - math.log(f[y]))
    return total


def edge_form_lower_bound(model: MixtureModel, f, phi: PhiFunctional | str = U_LOG_U) -> float:
    """(1/n) sum over unordered neighbour pairs of E_a[mu_a(x)mu_a(y)/(mu_a(x)+mu_a(y))]
    times (f(x)-f(y))(Phi'(f(x))-Phi'(f(y))).  Binary alphabets only."""
    if model.q != 2:
        raise ValueError("edge form is defined for binary alphabets")
    phi = get_phi(phi)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    d = phi.dphi(f)
    n = model.n
    states = np.arange(model.mixture.size)
    total = 0.0
    for i in range(n):
        bit = 1 << (n - 1 - i)
        x = states[(states & bit) == 0]
        y = x | bit
        a, b = model.component_matrix[:, x], model.component_matrix[:, y]
        with np.errstate(invalid="ignore", divide="ignore"):
            h = np.where(a + b > 0, a * b / (a + b), 0.0)
        coef = model.weights @ h
        total += float(np.sum(coef * (f[x] - f[y]) * (d[x] - d[y])))
    return total / n


def mixture_edge_form(mu: DenseDistribution, f, phi: PhiFunctional | str = U_LOG_U) -> float:
    """(1/n) sum_{x~y} mu(x)mu(y)/(mu(x)+mu(y)) (f(x)-f(y))(Phi'(f(x))-Phi'(f(y))), binary only."""
    return edge_form_lower_bound(MixtureModel(np.ones(1), (mu,)), f, phi)


# --- entropy decay ---------------------------------------------------------


def entropy_decay_derivative_check(pi: DenseDistribution, mu: DenseDistribution, t: float, dt: float | None = None):
    """Finite difference of t -> KL(P_t pi || mu) against -E_P(f_t, log f_t) / 2.

    The half comes from the pair sum in E_P counting each unordered pair twice.
    """
    if t < 0:
        raise InvalidTime(f"t must be >= 0, got {t}")
    if dt is None:
        dt = 1e-5 * mu.n
    kl0 = kl_divergence(pi, mu)
    if t == 0 and math.isinf(kl0):
        raise DerivativeUndefined("KL is infinite at t = 0")
    op = GlauberOperator(mu)
    if t >= dt:
        base = op.evolve(pi.probs, t - dt)
        lhs = (kl_divergence(op.evolve(base, 2 * dt), mu.probs) - kl_divergence(base, mu.probs)) / (2 * dt)
    else:
        # second-order one-sided stencil
        k0 = kl_divergence(op.evolve(pi.probs, t), mu.probs)
        b1 = op.evolve(pi.probs, t + dt)
        k1 = kl_divergence(b1, mu.probs)
        k2 = kl_divergence(op.evolve(b1, dt), mu.probs)
        lhs = (-3 * k0 + 4 * k1 - k2) / (2 * dt)
    ft = op.evolve(pi.probs, t) / mu.probs
    rhs = -0.5 * phi_dirichlet(mu, ft, U_LOG_U)
    return lhs, rhs


# --- functional-inequality constants ----------------------------------------


@dataclass(frozen=True, eq=False)
class FunctionalConstantEstimate:
    lower: float
    witness: np.ndarray
    iterations: int
    converged: bool
    point_mass: bool = False


def _normalise_witness(mu: DenseDistribution, f: np.ndarray) -> np.ndarray:
    return f / float(mu.probs @ f)


def _ent_and_grad(mu_t, f, g, n):
    """Ent_mu[f] for f = exp(g), and its gradient with respect to g."""
    p = mu_t.reshape(-1)
    m = float(p @ f)
    lm = math.log(m)
    ent = m * float(p @ entropy_kernel(g - lm))
    grad = p * f * (g - lm)
    return ent, grad


def _local_ent_and_grad(mu_t, f, g, n):
    t = mu_t
    ft, gt = f.reshape(t.shape), g.reshape(t.shape)
    total = 0.0
    grad = np.zeros_like(t)
    for i in range(n):
        m = slice_means(t, ft, n, i)
        lm = np.log(m)
        total += float(np.sum(t * m * entropy_kernel(gt - lm)))
        grad += t * ft * (gt - lm)
    return total, grad.reshape(-1)


def _mlsi_form_and_grad(mu_t, f, g, n):
    t = mu_t
    ft, gt = f.reshape(t.shape), g.reshape(t.shape)
    total = 0.0
    gf = np.zeros_like(t)
    gg = np.zeros_like(t)
    for i in range(n):
        mf = slice_means(t, ft, n, i)
        mg = slice_means(t, gt, n, i)
        total += float(np.sum(t * (ft - mf) * (gt - mg)))
        gf += t * (gt - mg)
        gg += t * (ft - mf)
    scale = 2.0 / n
    # d/dg of D(e^g, g): chain rule through f plus the direct dependence
    grad = scale * (ft * gf + gg)
    return scale * total, grad.reshape(-1)


def _starts(mu: DenseDistribution, restarts: int, rng: np.random.Generator, extra) -> list[np.ndarray]:
    configs = decode_indices(np.arange(mu.size), mu.q, mu.n)
    onehot = np.zeros((mu.size, mu.n * mu.q))
    onehot[np.arange(mu.size)[:, None], np.arange(mu.n) * mu.q + configs] = 1.0
    starts = [np.log(np.clip(np.asarray(w, dtype=float), 1e-12, None)) for w in extra]
    for r in range(restarts):
        kind = r % 3
        scale = rng.choice([0.3, 1.0, 3.0])
        if kind == 0:
            # exponential tilt along single-site statistics
            g = onehot @ rng.normal(scale=scale, size=mu.n * mu.q)
        elif kind == 1:
            g = rng.normal(scale=scale, size=mu.size)
        else:
            # tilt by the number of symbols equal to a random symbol, plus noise
            b = rng.integers(mu.q)
            g = scale * (configs == b).sum(axis=1) + 0.1 * rng.normal(size=mu.size)
        starts.append(g)
    return starts


def _maximise_ratio(mu, num_fn, den_fn, restarts, iters, tol, seed, extra=()) -> FunctionalConstantEstimate:
    rng = np.random.default_rng(seed)
    t = mu.table
    n = mu.n
    bound = 30.0

    def objective(g):
        g = g - g.max()
        f = np.exp(g)
        num, gnum = num_fn(t, f, g, n)
        den, gden = den_fn(t, f, g, n)
        if num <= 1e-300 or den <= 1e-300:
            return 0.0, np.zeros_like(g)
        val = math.log(num) - math.log(den)
        return -val, -(gnum / num - gden / den)

    best, best_g, total_iters, converged = -math.inf, None, 0, True
    for g0 in _starts(mu, restarts, rng, extra):
        g0 = np.clip(g0 - g0.mean(), -bound, bound)
        res = optimize.minimize(
            objective,
            g0,
            jac=True,
            method="L-BFGS-B",
            bounds=[(-bound, bound)] * g0.size,
            options={"maxiter": iters, "ftol": tol, "gtol": 1e-12},
        )
        total_iters += int(res.nit)
        converged &= bool(res.success)
        for g in (g0, res.x):
            g = g - g.max()
            f = np.exp(g)
            num, _ = num_fn(t, f, g, n)
            den, _ = den_fn(t, f, g, n)
            if den > 1e-300 and num > 1e-300:
                ratio = num / den
                if ratio > best:
                    best, best_g = ratio, g
    witness = _normalise_witness(mu, np.exp(best_g))
    return FunctionalConstantEstimate(float(best), witness, total_iters, converged)


def _point_mass_estimate(mu):
    return FunctionalConstantEstimate(1.0, np.ones(mu.size), 0, True, point_mass=True)


def estimate_ate_constant(
    mu: DenseDistribution,
    restarts: int = 20,
    iters: int = 500,
    tol: float = 1e-9,
    seed: int = 0,
    extra_witnesses: Sequence[np.ndarray] = (),
) -> FunctionalConstantEstimate:
    """Best found ratio Ent_mu[f] / L_mu[f] over positive f: a lower bound on c*.

    ``f = exp(g)`` is optimised over g with L-BFGS-B from tilted random restarts.
    ``extra_witnesses`` are evaluated as additional starting points.
    """
    if np.count_nonzero(mu.probs) <= 1:
        return _point_mass_estimate(mu)
    if not mu.is_fully_supported:
        raise UnsupportedSlice("constant estimation needs a fully supported distribution")
    if mu.n == 1:
        return FunctionalConstantEstimate(1.0, np.ones(mu.size), 0, True)
    return _maximise_ratio(mu, _ent_and_grad, _local_ent_and_grad, restarts, iters, tol, seed, extra_witnesses)


def estimate_mlsi_constant(
    mu: DenseDistribution,
    restarts: int = 20,
    iters: int = 500,
    tol: float = 1e-9,
    seed: int = 0,
    extra_witnesses: Sequence[np.ndarray] = (),
) -> FunctionalConstantEstimate:
    """Best found ratio Ent_mu[f] / E_P(f, log f), a lower bound on the MLSI constant."""
    if np.count_nonzero(mu.probs) <= 1:
        return _point_mass_estimate(mu)
    if not mu.is_fully_supported:
        raise UnsupportedSlice("constant estimation needs a fully supported distribution")
    return _maximise_ratio(mu, _ent_and_grad, _mlsi_form_and_grad, restarts, iters, tol, seed, extra_witnesses)


def poincare_phi_constant(mu: DenseDistribution) -> FunctionalConstantEstimate:
    """Exact sup of Var_mu[f] / E_P(f, 2f), the Phi-Sobolev constant for Phi = u^2.

    Solved as a generalised symmetric eigenproblem on the complement of constants.
    """
    if np.count_nonzero(mu.probs) <= 1:
        return _point_mass_estimate(mu)
    P = transition_matrix(mu)
    p = mu.probs
    A = np.diag(p) - np.outer(p, p)
    L = np.diag(p) - p[:, None] * P.matrix
    B = 4.0 * 0.5 * (L + L.T)
    # orthonormal basis of the complement of the constant vector
    Q = linalg.null_space(np.ones((1, mu.size)))
    vals, vecs = linalg.eigh(Q.T @ A @ Q, Q.T @ B @ Q)
    w = Q @ vecs[:, -1]
    return FunctionalConstantEstimate(float(vals[-1]), w, 0, True)


def estimate_phi_sobolev_constant(mu: DenseDistribution, phi: PhiFunctional | str = U_LOG_U, **kw) -> FunctionalConstantEstimate:
    phi = get_phi(phi)
    if phi.name == "u_squared":
        return poincare_phi_constant(mu)
    return estimate_mlsi_constant(mu, **kw)


def weak_phi_sobolev_check(model: MixtureModel, f, cstar: float, phi: PhiFunctional | str = U_LOG_U):
    """(lhs, rhs) of Ent^Phi_mu[f] <= c* E_P(f, Phi'(f)) + Ent^Phi_rho[E_{mu_a} f],
    with P the Glauber chain of the mixture."""
    phi = get_phi(phi)
    f = _check_density(f, model.mixture.size)
    parts = chain_rule_decompose(model, f, phi)
    rhs = cstar * phi_dirichlet(model.mixture, f, phi) + parts.inter
    return parts.total, rhs

