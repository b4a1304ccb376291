"""Dense distributions on product spaces, mixtures, divergences and entropy functionals.

Configurations are encoded big-endian: ``index = sum_i x_i * q**(n-1-i)``, which
matches numpy's C-order reshape of a flat table into a ``(q,) * n`` tensor.  All
divergences are in nats.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    AbsoluteContinuityViolation,
    InvalidConfig,
    InvalidDensity,
    InvalidDistribution,
    StateSpaceTooLarge,
    UnsupportedPoint,
    UnsupportedSlice,
)

# Dense operations refuse larger state spaces; rebind to change.
STATE_CAP = 2**20

SIMPLEX_ATOL = 1e-12


def check_state_space(q: int, n: int) -> int:
    if q < 2:
        raise InvalidDistribution(f"alphabet size must be >= 2, got {q}")
    if n < 1:
        raise InvalidDistribution(f"dimension must be >= 1, got {n}")
    size = q**n
    if size > STATE_CAP:
        raise StateSpaceTooLarge(f"{q}^{n} = {size} states exceeds cap {STATE_CAP}")
    return size


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise InvalidConfig(f"alphabet size must be >= 2, got {self.size}")


def validate_config(x: Sequence[int], q: int) -> tuple[int, ...]:
    x = tuple(int(v) for v in x)
    if len(x) < 1:
        raise InvalidConfig("configuration must have length >= 1")
    for v in x:
        if not 0 <= v < q:
            raise InvalidConfig(f"symbol {v} out of range for alphabet of size {q}")
    return x


def encode_config(x: Sequence[int], q: int) -> int:
    x = validate_config(x, q)
    index = 0
    for v in x:
        index = index * q + v
    return index


def decode_config(index: int, q: int, n: int) -> tuple[int, ...]:
    if not 0 <= index < q**n:
        raise InvalidConfig(f"index {index} out of range for {q}^{n} states")
    out = []
    for _ in range(n):
        index, r = divmod(index, q)
        out.append(r)
    return tuple(reversed(out))


def decode_indices(indices: np.ndarray, q: int, n: int) -> np.ndarray:
    """Vectorised decode: returns an integer array of shape ``indices.shape + (n,)``."""
    indices = np.asarray(indices, dtype=np.int64)
    powers = q ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return (indices[..., None] // powers) % q


def encode_indices(configs: np.ndarray, q: int) -> np.ndarray:
    configs = np.asarray(configs, dtype=np.int64)
    n = configs.shape[-1]
    powers = q ** np.arange(n - 1, -1, -1, dtype=np.int64)
    return configs @ powers


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DenseDistribution:
    """Explicit probability table over ``q**n`` configurations."""

    q: int
    n: int
    probs: np.ndarray

    def __post_init__(self):
        size = check_state_space(self.q, self.n)
        p = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if p.shape != (size,):
            raise InvalidDistribution(f"expected {size} probabilities, got {p.size}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidDistribution("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > SIMPLEX_ATOL:
            raise InvalidDistribution(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", _readonly(p))

    # constructors

    @classmethod
    def from_weights(cls, q: int, n: int, weights) -> DenseDistribution:
        """Normalise a nonnegative weight table."""
        w = np.asarray(weights, dtype=np.float64).reshape(-1)
        total = w.sum()
        if not total > 0:
            raise InvalidDistribution("weights have no mass")
        return cls(q, n, w / total)

    @classmethod
    def uniform(cls, q: int, n: int) -> DenseDistribution:
        size = check_state_space(q, n)
        return cls(q, n, np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, x: Sequence[int], q: int) -> DenseDistribution:
        x = validate_config(x, q)
        p = np.zeros(check_state_space(q, len(x)))
        p[encode_config(x, q)] = 1.0
        return cls(q, len(x), p)

    @classmethod
    def product(cls, marginals) -> DenseDistribution:
        """Product of per-coordinate laws; ``marginals`` has shape ``(n, q)``."""
        marginals = np.asarray(marginals, dtype=np.float64)
        n, q = marginals.shape
        check_state_space(q, n)
        t = marginals[0]
        for row in marginals[1:]:
            t = np.multiply.outer(t, row)
        return cls.from_weights(q, n, t)

    @classmethod
    def bernoulli_product(cls, p: float, n: int) -> DenseDistribution:
        """Bern(p) on every coordinate of {0,1}^n."""
        return cls.product(np.tile([1.0 - p, p], (n, 1)))

    @classmethod
    def random(cls, q: int, n: int, rng: np.random.Generator, concentration: float = 1.0):
        size = check_state_space(q, n)
        return cls.from_weights(q, n, rng.dirichlet(np.full(size, concentration)))

    # views

    @property
    def size(self) -> int:
        return self.probs.size

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.q)

    @property
    def table(self) -> np.ndarray:
        return self.probs.reshape((self.q,) * self.n)

    def prob(self, x: Sequence[int]) -> float:
        return float(self.probs[encode_config(x, self.q)])

    def sample_indices(self, rng: np.random.Generator, size=None):
        return rng.choice(self.size, size=size, p=self.probs)

    def sample(self, rng: np.random.Generator) -> tuple[int, ...]:
        return decode_config(int(self.sample_indices(rng)), self.q, self.n)

    @property
    def is_fully_supported(self) -> bool:
        return bool(np.all(self.probs > 0))

    def to_dict(self) -> dict:
        return {"q": self.q, "n": self.n, "probs": [float(v) for v in self.probs]}

    @classmethod
    def from_dict(cls, d: dict) -> DenseDistribution:
        try:
            return cls(int(d["q"]), int(d["n"]), np.asarray(d["probs"], dtype=np.float64))
        except (KeyError, TypeError) as exc:
            raise InvalidDistribution(f"malformed distribution object: {exc}") from exc


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """``mu = sum_a weights[a] * components[a]``."""

    weights: np.ndarray
    components: tuple[DenseDistribution, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        comps = tuple(self.components)
        if len(comps) == 0 or w.size != len(comps):
            raise InvalidDistribution("need one weight per component")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > SIMPLEX_ATOL:
            raise InvalidDistribution("weights must be positive and sum to 1")
        q, n = comps[0].q, comps[0].n
        if any(c.q != q or c.n != n for c in comps):
            raise InvalidDistribution("components must share alphabet and dimension")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "components", comps)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def q(self) -> int:
        return self.components[0].q

    @property
    def n(self) -> int:
        return self.components[0].n

    @property
    def rho_star(self) -> float:
        return float(self.weights.min())

    @cached_property
    def component_matrix(self) -> np.ndarray:
        """Shape ``(k, q**n)``."""
        return _readonly(np.stack([c.probs for c in self.components]))

    @cached_property
    def mixture(self) -> DenseDistribution:
        p = self.weights @ self.component_matrix
        return DenseDistribution(self.q, self.n, p / p.sum())

    @cached_property
    def posterior_table(self) -> np.ndarray:
        """Row x holds the posterior over components; rows where mu(x) = 0 are zero."""
        joint = (self.weights[:, None] * self.component_matrix).T
        mass = joint.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            post = np.where(mass > 0, joint / mass, 0.0)
        return _readonly(post)

    def reweighted(self, weights) -> MixtureModel:
        return MixtureModel(np.asarray(weights, dtype=np.float64), self.components)

    def to_dict(self) -> dict:
        return {
            "weights": [float(v) for v in self.weights],
            "components": [c.to_dict() for c in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict) -> MixtureModel:
        try:
            comps = tuple(DenseDistribution.from_dict(c) for c in d["components"])
            return cls(np.asarray(d["weights"], dtype=np.float64), comps)
        except (KeyError, TypeError) as exc:
            raise InvalidDistribution(f"malformed mixture object: {exc}") from exc


def dumps(obj: DenseDistribution | MixtureModel) -> str:
    # json writes floats with repr, the shortest round-trip decimal
    return json.dumps(obj.to_dict())


def loads(text: str) -> DenseDistribution | MixtureModel:
    d = json.loads(text)
    if "components" in d:
        return MixtureModel.from_dict(d)
    return DenseDistribution.from_dict(d)


# --- Phi functionals -------------------------------------------------------


_KERNEL_SERIES = np.array([(k - 1) / math.factorial(k) for k in range(2, 16)])


def entropy_kernel(x):
    """x e^x - (e^x - 1), i.e. u log(u/m) - u + m divided by m at x = log(u/m).

    Evaluated by its Taylor series near 0, where the direct form cancels.
    """
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < 0.1
    xs = np.where(small, x, 0.0)
    series = np.zeros_like(xs)
    for c in _KERNEL_SERIES[::-1]:
        series = (series + c) * xs
    series = series * xs
    with np.errstate(over="ignore", invalid="ignore"):
        direct = x * np.exp(x) - np.expm1(x)
    return np.where(small, series, direct)


def _xlogy_div(u, m):
    # u*log(u/m) - u + m with 0*log(0/m) = 0; zero when u == m == 0
    u = np.asarray(u, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(u > 0, m * entropy_kernel(np.log(u / m)), m)
    return np.where((u == 0) & (m == 0), 0.0, val)


@dataclass(frozen=True)
class PhiFunctional:
    """A convex Phi with Phi(1) = 0.

    ``bregman(u, m) = Phi(u) - Phi(m) - Phi'(m)(u - m)``; its mu-average at
    ``m = E_mu[f]`` is the Phi-entropy, summed term by term without cancellation.
    """

    name: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    bregman: Callable[[np.ndarray, np.ndarray], np.ndarray]


def _ulogu(u):
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(u > 0, u * np.log(u), 0.0)


def _dulogu(u):
    with np.errstate(divide="ignore"):
        return 1.0 + np.log(np.asarray(u, dtype=np.float64))


U_LOG_U = PhiFunctional("u_log_u", _ulogu, _dulogu, _xlogy_div)
U_SQUARED = PhiFunctional(
    "u_squared",
    lambda u: np.asarray(u, dtype=np.float64) ** 2 - 1.0,
    lambda u: 2.0 * np.asarray(u, dtype=np.float64),
    lambda u, m: (np.asarray(u, dtype=np.float64) - m) ** 2,
)
PHIS = {p.name: p for p in (U_LOG_U, U_SQUARED)}


def get_phi(phi: PhiFunctional | str) -> PhiFunctional:
    if isinstance(phi, PhiFunctional):
        return phi
    try:
        return PHIS[phi]
    except KeyError:
        raise ValueError(f"unknown Phi {phi!r}; choose from {sorted(PHIS)}") from None


# --- helpers ---------------------------------------------------------------


def _probs(mu) -> np.ndarray:
    if isinstance(mu, DenseDistribution):
        return mu.probs
    return np.asarray(mu, dtype=np.float64).reshape(-1)


def _check_density(f, size: int) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if f.size != size:
        raise InvalidDensity(f"density has {f.size} entries, expected {size}")
    if not np.all(np.isfinite(f)) or np.any(f < 0):
        raise InvalidDensity("density entries must be finite and nonnegative")
    return f


def _axis(t: np.ndarray, n: int, i: int) -> int:
    # config axes are the trailing n axes; leading axes are batch
    return t.ndim - n + i


def slice_means(table: np.ndarray, f_table: np.ndarray, n: int, i: int) -> np.ndarray:
    """E over mu|x_{\\i} of f, broadcast back over the slice (0 on massless slices)."""
    ax = _axis(table, n, i)
    mass = table.sum(axis=ax, keepdims=True)
    num = (table * f_table).sum(axis=ax, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(mass > 0, num / mass, 0.0)
    return np.broadcast_to(m, np.broadcast_shapes(table.shape, f_table.shape))


def conditional_tensor(table: np.ndarray, n: int, i: int) -> np.ndarray:
    """mu(y) / mu(slice of y along i); NaN on massless slices."""
    ax = _axis(table, n, i)
    mass = table.sum(axis=ax, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        return table / mass


# --- operations ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConditionalSlice:
    x: tuple[int, ...]
    i: int
    law: np.ndarray


def slice_indices(x: Sequence[int], i: int, q: int) -> np.ndarray:
    """Flat indices of x with coordinate i set to 0..q-1."""
    x = validate_config(x, q)
    if not 0 <= i < len(x):
        raise InvalidConfig(f"coordinate {i} out of range for n={len(x)}")
    base = encode_config(x, q) - x[i] * q ** (len(x) - 1 - i)
    return base + np.arange(q) * q ** (len(x) - 1 - i)


def conditional_slice(mu: DenseDistribution, x: Sequence[int], i: int) -> ConditionalSlice:
    idx = slice_indices(x, i, mu.q)
    w = mu.probs[idx]
    total = w.sum()
    if not total > 0:
        raise UnsupportedSlice(f"slice of {tuple(x)} along coordinate {i} has zero mass")
    return ConditionalSlice(tuple(int(v) for v in x), int(i), _readonly(w / total))


class Balance(NamedTuple):
    eta: float
    fully_supported: bool


def balance(mu: DenseDistribution) -> Balance:
    """Smallest single-site conditional probability over all slices."""
    t = mu.table
    eta = math.inf
    for i in range(mu.n):
        if np.any(t.sum(axis=i) == 0):
            return Balance(0.0, False)
        eta = min(eta, float(conditional_tensor(t, mu.n, i).min()))
    return Balance(eta, eta > 0)


def min_prob_lower_bound_check(mu: DenseDistribution) -> bool:
    eta = balance(mu).eta
    return bool(mu.probs.min() >= eta**mu.n - 1e-12)


def phi_entropy(mu, f, phi: PhiFunctional | str = U_LOG_U) -> float:
    """E_mu[Phi(f)] - Phi(E_mu[f])."""
    phi = get_phi(phi)
    p = _probs(mu)
    f = _check_density(f, p.size)
    m = float(p @ f)
    return float(p @ phi.bregman(f, m))


def kl_divergence(pi, mu) -> float:
    p, r = _probs(pi), _probs(mu)
    if p.shape != r.shape:
        raise InvalidDistribution("distributions live on different spaces")
    on = p > 0
    if np.any(r[on] == 0):
        return math.inf
    return float(np.sum(p[on] * np.log(p[on] / r[on])))


def chi_sq_divergence(pi, mu) -> float:
    p, r = _probs(pi), _probs(mu)
    if np.any((r == 0) & (p > 0)):
        return math.inf
    on = r > 0
    return float(np.sum((p[on] - r[on]) ** 2 / r[on]))


def hellinger_sq(pi, mu) -> float:
    """sum (sqrt(pi) - sqrt(mu))^2, in [0, 2]."""
    p, r = _probs(pi), _probs(mu)
    return float(np.sum((np.sqrt(p) - np.sqrt(r)) ** 2))


def total_variation(pi, mu) -> float:
    return 0.5 * float(np.abs(_probs(pi) - _probs(mu)).sum())


def density_ratio(pi: DenseDistribution, mu: DenseDistribution) -> np.ndarray:
    """pi / mu pointwise, 0 where both vanish."""
    p, r = _probs(pi), _probs(mu)
    if np.any((r == 0) & (p > 0)):
        raise AbsoluteContinuityViolation("pi charges a point where mu vanishes")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(r > 0, p / r, 0.0)


def local_entropy_functional(mu: DenseDistribution, f, phi: PhiFunctional | str = U_LOG_U) -> float:
    """sum_i E_{x~mu}[Ent_{mu|x_{\\i}}[f]]."""
    phi = get_phi(phi)
    f = _check_density(f, mu.size)
    t = mu.table
    ft = f.reshape(t.shape)
    total = 0.0
    for i in range(mu.n):
        m = slice_means(t, ft, mu.n, i)
        total += float(np.sum(t * phi.bregman(ft, m)))
    return total


class ChainRule(NamedTuple):
    inter: float
    intra: float
    total: float


def chain_rule_decompose(model: MixtureModel, f, phi: PhiFunctional | str = U_LOG_U) -> ChainRule:
    phi = get_phi(phi)
    f = _check_density(f, model.mixture.size)
    means = model.component_matrix @ f
    intra = float(sum(w * phi_entropy(c, f, phi) for w, c in zip(model.weights, model.components)))
    inter = phi_entropy(model.weights, means, phi)
    total = phi_entropy(model.mixture, f, phi)
    return ChainRule(inter, intra, total)


def posterior(model: MixtureModel, x: Sequence[int]) -> np.ndarray:
    idx = encode_config(x, model.q)
    if not model.mixture.probs[idx] > 0:
        raise UnsupportedPoint(f"mu({tuple(x)}) = 0")
    return model.posterior_table[idx].copy()


def rho_of(model: MixtureModel, pi) -> np.ndarray:
    """Law of a ~ posterior(x) for x ~ pi."""
    p = _probs(pi)
    mu = model.mixture.probs
    if np.any((mu == 0) & (p > 0)):
        raise AbsoluteContinuityViolation("pi charges a point where mu vanishes")
    return p @ model.posterior_table
