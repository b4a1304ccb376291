"""Sample access to a hidden distribution: General and Coordinate oracles.

A handle holds the hidden law privately and exposes only samples and call
counters.  Two coordinate backends are provided: exact slice sampling from
the table, and a Glauber-backed backend that restarts the dynamics at ``x``
and keeps the first update that lands on the requested site.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_dist import DenseDistribution, conditional_slice, decode_indices, slice_indices, validate_config
from .errors import BudgetExhausted, OracleTimeout, PairNotAllowed, UnsupportedSlice


@dataclass
class Budget:
    limit: float
    consumed: int = 0

    def charge(self, k: int) -> None:
        if self.consumed + k > self.limit:
            raise BudgetExhausted(f"{self.consumed} + {k} calls exceeds budget {self.limit}")
        self.consumed += k

    @property
    def remaining(self) -> float:
        return self.limit - self.consumed


@dataclass(frozen=True)
class RestrictedPairSet:
    """Pre-drawn (x, i) pairs; conditioning is allowed only at these."""

    pairs: tuple = field(default=())

    def __contains__(self, pair) -> bool:
        x, i = pair
        return (tuple(int(v) for v in x), int(i)) in self._keys

    @property
    def _keys(self) -> frozenset:
        return frozenset((tuple(x), int(i)) for x, i in self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


class OracleHandle:
    """Exact-table backend."""

    reports_update_sites = False

    def __init__(self, pi: DenseDistribution, seed=None):
        self.__pi = pi
        self.q, self.n = pi.q, pi.n
        self._rng = np.random.default_rng(seed)
        self._general = 0
        self._coordinate = 0
        self._slice_cache: dict = {}
        self._allowed: frozenset | None = None

    @property
    def general_calls(self) -> int:
        return self._general

    @property
    def coordinate_calls(self) -> int:
        return self._coordinate

    def counters(self) -> dict:
        return {"general_calls": self._general, "coordinate_calls": self._coordinate}

    def restrict(self, pairs: RestrictedPairSet | None) -> None:
        self._allowed = None if pairs is None else pairs._keys

    def general_sample_indices(self, size: int) -> np.ndarray:
        self._general += int(size)
        pi = self.__pi
        return self._rng.choice(pi.size, size=size, p=pi.probs)

    def general_sample(self, size: int | None = None):
        """One configuration (tuple), or an ``(size, n)`` array."""
        idx = self.general_sample_indices(1 if size is None else size)
        configs = decode_indices(idx, self.q, self.n)
        return tuple(int(v) for v in configs[0]) if size is None else configs

    def _slice_law(self, x: tuple, i: int) -> np.ndarray:
        key = (int(slice_indices(x, i, self.q)[0]), i)
        law = self._slice_cache.get(key)
        if law is None:
            law = conditional_slice(self.__pi, x, i).law
            self._slice_cache[key] = law
        return law

    def _check_pair(self, x, i):
        if self._allowed is not None and (x, i) not in self._allowed:
            raise PairNotAllowed(f"pair {(x, i)} was not pre-drawn")

    def coordinate_sample(self, x: Sequence[int], i: int, size: int | None = None, budget: Budget | None = None):
        """Symbol(s) from the hidden law at coordinate i given the rest of x.

        Raises ``UnsupportedSlice`` when that slice carries no mass.
        """
        x = validate_config(x, self.q)
        i = int(i)
        self._check_pair(x, i)
        k = 1 if size is None else int(size)
        if budget is not None:
            budget.charge(k)
        self._coordinate += k
        out = self._draw_coordinate(x, i, k)
        return int(out[0]) if size is None else out

    def _draw_coordinate(self, x, i, k) -> np.ndarray:
        return self._rng.choice(self.q, size=k, p=self._slice_law(x, i))


class GlauberOracleHandle(OracleHandle):
    """Coordinate samples simulated by restarting single-site dynamics at x.

    Each attempt picks a uniform site j and resamples it; attempts at j != i are
    discarded (the system is reinitialised to x).  Assumes the backend can tell
    which site an update touched, even when the state does not change.
    """

    reports_update_sites = True

    def __init__(self, pi: DenseDistribution, seed=None, attempt_cap: int | None = None):
        super().__init__(pi, seed)
        self.attempt_cap = 100 * self.n if attempt_cap is None else attempt_cap
        self.updates = 0
        self.attempt_log: list[int] = []

    def _draw_coordinate(self, x, i, k) -> np.ndarray:
        n, q = self.n, self.q
        laws = []
        for j in range(n):
            try:
                laws.append(np.cumsum(self._slice_law(x, j)))
            except UnsupportedSlice:
                laws.append(None)
        if laws[i] is None:
            raise UnsupportedSlice(f"slice of {x} along coordinate {i} has zero mass")
        out = np.empty(k, dtype=np.int64)
        filled, run = 0, 0
        while filled < k:
            block = max(64, 2 * n * (k - filled))
            sites = self._rng.integers(n, size=block)
            u = self._rng.random(block)
            for s, v in zip(sites, u):
                run += 1
                self.updates += 1
                law = laws[s]
                if law is None:
                    continue
                symbol = min(int(np.searchsorted(law, v, side="right")), q - 1)
                if s == i:
                    out[filled] = symbol
                    self.attempt_log.append(run)
                    filled += 1
                    run = 0
                    if filled == k:
                        break
                elif run >= self.attempt_cap:
                    raise OracleTimeout(f"no update at site {i} within {self.attempt_cap} attempts")
        return out
