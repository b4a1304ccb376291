"""Batch runner: ``mixglauber <subcommand> --config run.json --out outdir``.

Every run writes ``run_config.json`` (config with defaults filled in, plus the
seed actually used) next to its artifacts, so a run can be replayed from it.
Seed precedence: ``--seed``, then ``EXPERIMENT_SEED``, then the config's
``seed``, then 0.  Per-run and per-trial streams are spawned from that seed
with ``numpy.random.SeedSequence``.

Exit codes: 0 accept / all checks pass, 1 reject / a check failed,
2 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import experiments as ex
from .core_dist import DenseDistribution, MixtureModel, loads
from .errors import MixGlauberError
from .glauber import estimate_ate_constant, estimate_mlsi_constant, poincare_phi_constant
from .identity import AlgorithmParams, product_set_kl_test
from .oracles import OracleHandle
from .verify import load_instances, random_instances, run_battery

log = logging.getLogger("mixglauber")

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    params: dict
    seed: int
    out: str
    jobs: int = 1
    base_dir: str = field(default=".", repr=False)

    def path(self, key: str) -> Path:
        value = self.params.get(key)
        if value is None:
            raise ConfigError(f"config is missing '{key}'")
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def dump(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


DEFAULTS = {
    "test-identity": {"eps": 0.5, "cstar": None, "runs": 1},
    "mixing": {
        "eps": 0.1,
        "delta": 0.2,
        "trials": 200,
        "m": None,
        "cstar": None,
        "grid_points": 41,
        "t_max": None,
        "plateau": None,
    },
    "concentration": {"trials": 100_000, "checks": []},
    "verify-identities": {"instances": None, "random": {"count": 100, "seed": 0}, "hk_pairs": 10_000, "weak_probes": 0},
    "estimate-constants": {"restarts": 20, "iters": 500},
}


def _load_model(path: Path) -> MixtureModel:
    obj = loads(path.read_text())
    if isinstance(obj, DenseDistribution):
        return MixtureModel(np.array([1.0]), (obj,))
    return obj


def _load_distribution(path: Path) -> DenseDistribution:
    obj = loads(path.read_text())
    return obj.mixture if isinstance(obj, MixtureModel) else obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- test-identity -------------------------------------------------------------


def _identity_run(args):
    model, pi, params_kw, seed = args
    ss = np.random.SeedSequence(seed)
    oracle_seed, algo_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    params = AlgorithmParams(**params_kw, seed=algo_seed)
    return product_set_kl_test(model, OracleHandle(pi, seed=oracle_seed), params).to_dict()


def cmd_test_identity(cfg: RunConfig) -> int:
    model = _load_model(cfg.path("mixture"))
    pi = _load_distribution(cfg.path("pi"))
    p = cfg.params
    base = AlgorithmParams.from_model(model, p["eps"], p["cstar"])
    kw = {k: v for k, v in asdict(base).items() if k != "seed"}
    runs = int(p["runs"])
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(runs)]
    jobs = [(model, pi, kw, s) for s in seeds]
    if cfg.jobs > 1 and runs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            reports = list(pool.map(_identity_run, jobs))
    else:
        reports = [_identity_run(j) for j in jobs]
    out = Path(cfg.out)
    _write_json(out / "params.json", base.to_dict())
    if runs == 1:
        _write_json(out / "report.json", reports[0])
        accept = reports[0]["verdict"] == "accept"
    else:
        accepts = sum(r["verdict"] == "accept" for r in reports)
        accept = 2 * accepts > runs
        _write_json(out / "reports.json", reports)
        _write_json(out / "summary.json", {"runs": runs, "accepts": accepts, "verdict": "accept" if accept else "reject"})
    log.info("verdict: %s", "accept" if accept else "reject")
    return EXIT_OK if accept else EXIT_FAIL


# --- mixing ----------------------------------------------------------------------


def cmd_mixing(cfg: RunConfig) -> int:
    model = _load_model(cfg.path("mixture"))
    p = cfg.params
    rng = np.random.default_rng(cfg.seed)
    cstar = p["cstar"] if p["cstar"] is not None else ex.component_cstar(model)
    m = p["m"] if p["m"] is not None else ex.data_sample_size(model.k, p["eps"], p["delta"])
    horizons = ex.mixing_horizons(model.mixture, cstar, p["eps"])
    t_max = p["t_max"] if p["t_max"] is not None else horizons["loglog"]
    grid = np.linspace(0.0, t_max, int(p["grid_points"]))
    rep = ex.warm_start_mixing(model, int(m), grid, int(p["trials"]), rng, cstar=cstar, eps=p["eps"])
    out = Path(cfg.out)
    (out / "curves.csv").write_text(rep.to_csv())
    summary = rep.summary()
    ok = summary["weak_mixing_all_trials"] and summary["monotone_all_trials"]
    if p["plateau"]:
        pl = p["plateau"]
        x0 = pl.get("x0", [0] * model.n)
        times = np.linspace(0.0, float(pl.get("t_max", 50 * model.n)), int(pl.get("grid_points", 51)))
        times, kl, inter = ex.point_mass_curve(model, x0, times)
        rows = ["t,kl_nats,inter_kl_nats"] + [f"{t!r},{a!r},{b!r}" for t, a, b in zip(times.tolist(), kl.tolist(), inter.tolist())]
        (out / "plateau.csv").write_text("\n".join(rows) + "\n")
        summary["plateau"] = {"x0": list(x0), "t_final": float(times[-1]), "kl_final": float(kl[-1]), "kl_initial": float(kl[0])}
    _write_json(out / "summary.json", {**summary, "pass": bool(ok)})
    return EXIT_OK if ok else EXIT_FAIL


# --- concentration -----------------------------------------------------------------


def _rho(check: dict) -> np.ndarray:
    if "rho" in check:
        return np.asarray(check["rho"], dtype=np.float64)
    return np.full(int(check["k"]), 1.0 / int(check["k"]))


def cmd_concentration(cfg: RunConfig) -> int:
    p = cfg.params
    checks = p["checks"]
    if not checks:
        raise ConfigError("no concentration checks configured")
    # validate every check before spending time on any of them
    for c in checks:
        kind = c.get("kind")
        if kind in ("mgf", "mixture_mgf"):
            ex._check_lambda(int(c["m"]), float(c["lambda"]))
        elif kind == "tail":
            k = len(_rho(c))
            if not float(c["eps"]) > (k - 1) / int(c["m"]):
                raise ex.InvalidParameter(f"tail check needs eps > (k-1)/m: {c}")
        else:
            raise ConfigError(f"unknown check kind {kind!r}")
    streams = np.random.SeedSequence(cfg.seed).spawn(len(checks))
    trials = int(p["trials"])
    results = []
    for c, ss in zip(checks, streams):
        rng = np.random.default_rng(ss)
        kind = c["kind"]
        if kind == "mgf":
            r = ex.empirical_kl_mgf(_rho(c), int(c["m"]), float(c["lambda"]), trials, rng)
        elif kind == "tail":
            r = ex.empirical_kl_tail(_rho(c), int(c["m"]), float(c["eps"]), trials, rng)
        else:
            model = _load_model(Path(cfg.base_dir) / c["mixture"])
            r = ex.mixture_posterior_mgf(model, int(c["m"]), float(c["lambda"]), trials, rng)
        results.append({"kind": kind, **r.to_dict()})
    ok = all(r["pass"] for r in results)
    _write_json(Path(cfg.out) / "concentration.json", {"pass": ok, "checks": results})
    return EXIT_OK if ok else EXIT_FAIL


# --- verify-identities ---------------------------------------------------------------


def cmd_verify_identities(cfg: RunConfig) -> int:
    p = cfg.params
    instances = []
    if p["instances"]:
        instances += load_instances(cfg.path("instances"))
    if p["random"]:
        instances += random_instances(int(p["random"]["count"]), int(p["random"].get("seed", 0)))
    results = run_battery(instances, seed=cfg.seed, hk_pairs=int(p["hk_pairs"]), weak_probes=int(p["weak_probes"]))
    bad = [asdict(r) for r in results if not r.ok]
    counts = {}
    for r in results:
        counts[r.check.split("[")[0]] = counts.get(r.check.split("[")[0], 0) + 1
    _write_json(Path(cfg.out) / "verify.json", {"pass": not bad, "checks": len(results), "by_kind": counts, "violations": bad})
    for v in bad:
        log.error("violation: %s on %s (%r vs %r)", v["check"], v["instance"], v["lhs"], v["rhs"])
    return EXIT_OK if not bad else EXIT_FAIL


# --- estimate-constants ------------------------------------------------------------------


def cmd_estimate_constants(cfg: RunConfig) -> int:
    model = _load_model(cfg.path("mixture"))
    kw = {"restarts": int(cfg.params["restarts"]), "iters": int(cfg.params["iters"]), "seed": cfg.seed}
    rows = []
    for a, comp in enumerate(model.components):
        ate = estimate_ate_constant(comp, **kw)
        mlsi = estimate_mlsi_constant(comp, extra_witnesses=(), **kw)
        rows.append({
            "component": a,
            "ate_lower": ate.lower,
            "mlsi_lower": mlsi.lower,
            "phi_u_squared": poincare_phi_constant(comp).lower,
            "converged": bool(ate.converged and mlsi.converged),
        })
    cstar = 1.1 * max(r["ate_lower"] for r in rows)
    _write_json(Path(cfg.out) / "constants.json", {"components": rows, "cstar": cstar, "inflation": 1.1})
    return EXIT_OK


COMMANDS = {
    "test-identity": cmd_test_identity,
    "mixing": cmd_mixing,
    "concentration": cmd_concentration,
    "verify-identities": cmd_verify_identities,
    "estimate-constants": cmd_estimate_constants,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixglauber", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes (test-identity runs)")
        sp.add_argument("--seed", type=int, default=None, help="global seed (overrides EXPERIMENT_SEED)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def make_config(args) -> RunConfig:
    try:
        raw = json.loads(args.config.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    seed = args.seed
    if seed is None and os.environ.get("EXPERIMENT_SEED"):
        seed = int(os.environ["EXPERIMENT_SEED"])
    if seed is None:
        seed = int(raw.pop("seed", 0))
    raw.pop("seed", None)
    params = {**DEFAULTS[args.command], **raw}
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    return RunConfig(args.command, params, seed, str(args.out), args.jobs, str(args.config.resolve().parent))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = make_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "run_config.json", cfg.dump())
        return COMMANDS[args.command](cfg)
    except (ConfigError, MixGlauberError, OSError, KeyError, ValueError, TypeError) as e:
        print(f"mixglauber {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
