"""Frozen calibration family for the H^2 tester constants.

For each reference law q the family holds alternatives on both sides of the
test boundary: laws at chi^2(p||q) = eps/2 (must accept) and at H^2(p||q) = eps
(must reject), reached by moving along several perturbation directions.  The
per-repetition error of the statistic is estimated by simulating multinomial
counts directly.

Run ``python -m mixglauber.calibration`` to re-derive the (C_H, TAU) choice.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize

from .core_dist import chi_sq_divergence, hellinger_sq
from .testers import _null_mean

CAL_EPS = (0.05, 0.2, 0.5)
CAL_DIMS = (2, 10, 100)


def reference_laws(d: int) -> dict[str, np.ndarray]:
    uniform = np.full(d, 1.0 / d)
    heavy = np.full(d, 0.01 / (d - 1))
    heavy[0] = 0.99
    x = np.arange(d)
    bumps = np.exp(-0.5 * ((x - d / 4) / max(d / 10, 0.5)) ** 2) + np.exp(-0.5 * ((x - 3 * d / 4) / max(d / 10, 0.5)) ** 2)
    bumps = bumps + 1e-3
    if d == 2:
        bumps = np.array([0.7, 0.3])
    return {"uniform": uniform, "point_heavy": heavy, "two_bump": bumps / bumps.sum()}


def _directions(q: np.ndarray) -> list[np.ndarray]:
    d = q.size
    out = []
    for j in {int(np.argmin(q)), int(np.argmax(q)), d // 2}:
        r = np.zeros(d)
        r[j] = 1.0
        out.append(r)
    signs = np.where(np.arange(d) % 2 == 0, 1.0, -1.0)
    # paired +/- perturbation, the classic hard instance
    pert = q * (1 + signs * 0.999)
    out.append(pert / pert.sum())
    out.append(np.full(d, 1.0 / d))
    return [r for r in out if not np.allclose(r, q)]


def _boundary_point(q, r, fn, target):
    line = lambda s: (1 - s) * q + s * r
    if fn(line(1.0), q) < target:
        return None
    s = optimize.brentq(lambda s: fn(line(s), q) - target, 0.0, 1.0, xtol=1e-14)
    p = line(s)
    return p / p.sum()


def family(d: int, eps: float):
    """Yield (name, q, p, must_accept) for the calibration instances."""
    for name, q in reference_laws(d).items():
        for j, r in enumerate(_directions(q)):
            pa = _boundary_point(q, r, chi_sq_divergence, eps / 2)
            if pa is not None:
                yield f"{name}/acc{j}", q, pa, True
            pr = _boundary_point(q, r, hellinger_sq, eps)
            if pr is not None:
                yield f"{name}/rej{j}", q, pr, False
        yield f"{name}/null", q, q, True


def repetition_error(q, p, eps, must_accept, c_h, tau, trials, rng) -> float:
    m = math.ceil(c_h * math.sqrt(q.size) / eps)
    counts = rng.multinomial(m, p, size=trials).astype(np.float64)
    bias = np.array([_null_mean(m, float(qi)) for qi in q])
    s = ((np.sqrt(counts) - np.sqrt(m * q)) ** 2 - bias).sum(axis=1)
    accept = s <= tau * m * eps
    return float(np.mean(~accept if must_accept else accept))


def worst_error(c_h, tau, trials=2000, seed=0, dims=CAL_DIMS, eps_grid=CAL_EPS):
    rng = np.random.default_rng(seed)
    worst, where = 0.0, None
    for d in dims:
        for eps in eps_grid:
            for name, q, p, acc in family(d, eps):
                e = repetition_error(q, p, eps, acc, c_h, tau, trials, rng)
                if e > worst:
                    worst, where = e, (d, eps, name)
    return worst, where


def main():
    for c_h in (8.0, 12.0, 16.0, 24.0):
        for tau in (0.35, 0.45, 0.5, 0.55, 0.65):
            w, where = worst_error(c_h, tau)
            print(f"C_H={c_h:5.1f} tau={tau:.2f} worst per-repetition error {w:.4f} at {where}")


if __name__ == "__main__":
    main()
