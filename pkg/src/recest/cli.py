"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
failure, 5 too many failed replications.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import diagnostics as diag
from .core import ACCUMULATE, REEVALUATE, linear_statistic, run
from .errors import EstimationError, ReplicationFailure
from .models import (
    ar_fisher_normalizer,
    ar_simulate,
    galton_watson_poisson,
    gaussian_ar_model,
    logistic_location_model,
    normal_location_model,
)
from .normalizers import bprime_normalizer, fisher_normalizer, score_covariance_normalizer, tuned
from .quadrature import QuadratureRule
from .robust import PsiFunction, gm_recursion
from .simulator import (
    FIG1_SEED,
    AOConfig,
    fig1_study,
    make_rng,
    normality_study,
    parallel_map,
    prefix_fit,
    replication_seed,
    simulate_ao,
)

log = logging.getLogger("recest")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_REPLICATION = 0, 2, 3, 4, 5


class ConfigError(Exception):
    pass


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def load_schema(name: str = "config.schema.json") -> dict:
    return json.loads(resources.files("recest").joinpath("schemas").joinpath(name).read_text())


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError:
        raise
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from exc


def _vector(value, dim=None):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    if dim is not None and v.shape != (dim,):
        raise ConfigError(f"expected a vector of length {dim}, got {value!r}")
    return v


def _rule(cfg: dict) -> QuadratureRule | None:
    q = cfg.get("quadrature")
    if not q:
        return None
    kind = "adaptive_simpson" if "simpson_tol" in q or "truncation" in q else "gauss_hermite"
    return QuadratureRule(kind, nodes=q.get("gh_nodes", 40), tol=q.get("simpson_tol", 1e-9),
                          truncation=q.get("truncation", 10.0))


def build_model(cfg: dict):
    block = cfg.get("model")
    if block is None:
        raise ConfigError("config has no 'model' block")
    mid = block["id"]
    rule = _rule(cfg)
    if mid == "normal_location":
        return normal_location_model(block.get("sigma", 1.0), **({"rule": rule} if rule else {}))
    if mid == "logistic_location":
        return logistic_location_model(block.get("scale", 1.0), rule)
    if mid == "gw_poisson":
        return galton_watson_poisson()
    if mid in ("ar", "ao"):
        theta = _vector(block.get("theta", 0.6))
        if mid == "ao" and theta.shape != (1,):
            raise ConfigError("the ao model is AR(1)")
        return gaussian_ar_model(theta, block.get("sigma", 1.0))
    raise ConfigError(f"unknown model id {mid!r}")


def _model_presample(cfg, model) -> int:
    return getattr(model, "presample", 0)


def build_estimator(cfg: dict, est: dict, model):
    """Return ``series -> Trajectory`` for one estimator block."""
    mid = cfg["model"]["id"]
    psi_id = est["psi"]
    theta0 = est.get("theta0")

    if psi_id in ("ls", "huber", "hampel"):
        if mid not in ("ar", "ao") or model.order != 1:
            raise ConfigError(f"estimator {est['id']}: psi '{psi_id}' needs an AR(1) model")
        prefix = est.get("prefix", 30)
        if psi_id == "huber":
            phi = PsiFunction("huber", c=est.get("c", 1.8))
        elif psi_id == "hampel":
            phi = PsiFunction("hampel", alpha=est.get("alpha", 1.8), beta=est.get("beta", 4.0))
        else:
            phi = None

        def fit(series):
            if len(series) <= prefix:
                raise ConfigError(f"estimator {est['id']}: series shorter than prefix {prefix}")
            head, tail = series[:prefix], series[prefix - 1:]
            start, scales = prefix_fit(head)
            th0 = start if theta0 is None else float(_vector(theta0, 1)[0])
            if phi is None:
                I0 = np.array([[float(head[:-1] @ head[:-1])]])
                return run(model.score, ar_fisher_normalizer(model, I0), [th0], tail, presample=1)
            C_g = phi.c_g(scales.s_r)
            f, sx = phi.scalar(), scales.s_x
            gamma0 = C_g * sum(sx * f(x / sx) * x for x in head[:-1].tolist())
            return gm_recursion(tail, phi, scales, C_g, th0, gamma0)

        return fit

    psi = model.score
    norm_id = est.get("normalizer", "fisher")
    if norm_id == "fisher":
        if mid in ("ar", "ao"):
            ridge = est.get("ridge", 1e-6)
            normalizer = ar_fisher_normalizer(model, ridge * np.eye(model.order))
        else:
            normalizer = fisher_normalizer(model)
    elif norm_id == "score_covariance":
        normalizer = score_covariance_normalizer(psi, model, theta_free=model.fisher_theta_free)
    else:
        normalizer = bprime_normalizer(psi, model, est.get("fd_step"), theta_free=model.fisher_theta_free)
    if "C" in est or "c_zero_until" in est:
        C = est.get("C", 0.0)
        C = np.eye(model.dim) * C if np.isscalar(C) else np.asarray(C, dtype=float)
        horizon = est.get("c_zero_until", 0)
        normalizer = tuned(normalizer, C, (lambda t: 0.0) if horizon else None, horizon)
    mode = est.get("mode", REEVALUATE)
    th0 = np.zeros(model.dim) if theta0 is None else _vector(theta0, model.dim)
    presample = _model_presample(cfg, model)

    def fit(series):
        return run(psi, normalizer, th0, series, presample=presample, mode=mode)

    fit.psi, fit.normalizer, fit.presample = psi, normalizer, presample
    return fit


# --------------------------------------------------------------------------
# I/O


def write_series(path: Path, series, t0: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x"])
        for i, x in enumerate(series):
            w.writerow([t0 + i, _fmt(x)])


def read_series(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return np.empty(0)
        try:
            if header != ["t", "x"]:
                raise ConfigError(f"{path}: expected header 't,x', got {header}")
            return np.array([float(row[1]) for row in reader if row], dtype=float)
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"{path}: malformed data row ({exc})") from exc


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, float) else v for v in row])


def write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands


def _seed(args, cfg, default=FIG1_SEED) -> int:
    if args.seed is not None:
        return args.seed
    if "seed" in cfg:
        return cfg["seed"]
    return cfg.get("plan", {}).get("base_seed", default)


def simulate_series(cfg: dict, seed: int):
    """Draw one series for the configured model; returns ``(series, first t index)``."""
    block = cfg["model"]
    mid = block["id"]
    rng = make_rng(seed)
    if mid == "ao":
        conf = AOConfig(theta=float(_vector(block.get("theta", 0.6))[0]), eps=block.get("eps", 0.05),
                        sigma2=block.get("sigma2", 9.0), n=block.get("n", 230),
                        burn_in=block.get("burn_in", 100), seed=seed)
        return simulate_ao(conf, rng)[conf.burn_in:], 1
    model = build_model(cfg)
    n = block.get("n", cfg.get("plan", {}).get("n", 200))
    if mid == "ar":
        return ar_simulate(model, n, block.get("burn_in", 100), rng), 1
    theta = block.get("theta", cfg.get("theta_true"))
    if theta is None:
        raise ConfigError("model.theta or theta_true is required to simulate")
    if mid == "gw_poisson":
        return model.simulate(float(_vector(theta)[0]), block.get("x0", 10), n, rng), 0
    return model.sample(_vector(theta, model.dim), rng, n), 1


def cmd_simulate(args, cfg) -> int:
    seed = _seed(args, cfg)
    series, t0 = simulate_series(cfg, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_series(out / "series.csv", series, t0)
    write_json(out / "series.json", {"config": cfg, "seed": seed, "rows": int(len(series))})
    return EXIT_OK


def _estimators(cfg):
    ests = cfg.get("estimators")
    if not ests:
        raise ConfigError("config has no 'estimators'")
    return ests


def _require_data(args) -> np.ndarray:
    if args.data is None:
        raise ConfigError("--data is required")
    series = read_series(args.data)
    if len(series) == 0:
        raise ConfigError(f"{args.data}: no observations")
    return series


def cmd_estimate(args, cfg) -> int:
    model = build_model(cfg)
    ests = _estimators(cfg)
    fits = [(e["id"], build_estimator(cfg, e, model)) for e in ests]
    series = _require_data(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    final = {}
    for name, fit in fits:
        try:
            traj = fit(series)
        except EstimationError as exc:
            write_json(out / "final_state.json", {name: {"failed_step": exc.step, "error": str(exc)}})
            print(f"estimator {name} failed at step {exc.step}: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        write_rows(out / f"trajectory_{name}.csv", ["t", "component", "theta_hat"], traj.rows())
        final[name] = {
            "theta_hat": traj.final.tolist(),
            "gamma": traj.gamma[-1].tolist(),
            "steps": len(traj),
            "step_failures": [],
        }
    write_json(out / "final_state.json", final)
    return EXIT_OK


def _scaling(cfg, model):
    tag = cfg.get("diagnostics", {}).get("scaling", "sqrt_t_identity")
    if tag == "H_sqrt":
        if cfg["model"]["id"] != "gw_poisson":
            raise ConfigError("scaling 'H_sqrt' needs the gw_poisson model")
        return diag.h_sqrt(model)
    return diag.sqrt_t_identity(model.dim)


def _diag_normality(cfg, est, theta_true, workers):
    """Root-scaled errors over simulated replications of an i.i.d. model."""
    if cfg["model"]["id"] not in ("normal_location", "logistic_location"):
        raise ConfigError("normality diagnostics need an i.i.d. model")
    plan = cfg.get("plan", {})
    R, n = plan.get("R", 2000), plan.get("n", 500)
    base = plan.get("base_seed", FIG1_SEED)
    job = _NormalityJob(cfg, est, n)
    samples = np.array(parallel_map(job, [replication_seed(base, r) for r in range(R)], workers))
    model = build_model(cfg)
    fit = build_estimator(cfg, est, model)
    gam = fit.normalizer.delta(1, theta_true, np.empty(0))
    j = diag.j_psi(model, fit.psi, theta_true)
    ginv = np.linalg.inv(gam)
    target = ginv @ j @ ginv.T
    report = diag.normality_check(samples, target).to_dict()
    report.update(horizon=n, replications=R, base_seed=base)
    return report


class _NormalityJob:
    def __init__(self, cfg, est, n):
        self.cfg, self.est, self.n = cfg, est, n

    def __call__(self, seed):
        model = build_model(self.cfg)
        theta = _vector(self.cfg["theta_true"], model.dim)
        x = model.sample(theta, make_rng(seed), self.n)
        traj = build_estimator(self.cfg, self.est, model)(x)
        return (math.sqrt(self.n) * (traj.final - theta)).tolist()


def cmd_diagnose(args, cfg) -> int:
    if "theta_true" not in cfg:
        raise ConfigError("diagnose needs 'theta_true' in the config")
    dcfg = cfg.get("diagnostics")
    if dcfg is None:
        raise ConfigError("diagnose needs a 'diagnostics' block")
    model = build_model(cfg)
    theta_true = _vector(cfg["theta_true"], model.dim)
    est = next((e for e in _estimators(cfg) if e["psi"] == "score"), None)
    if est is None:
        raise ConfigError("diagnose needs an estimator with psi 'score'")
    fit = build_estimator(cfg, est, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    want_series = dcfg.get("residual") or dcfg.get("condition_e")
    if want_series:
        series = _require_data(args)
        A = _scaling(cfg, model)
        if dcfg.get("residual"):
            traj = fit(series)
            lin = linear_statistic(theta_true, fit.psi, fit.normalizer, series, fit.presample)
            r = diag.linearity_residual(traj, lin, A, series, fit.presample)
            write_rows(out / "residual.csv", ["t", "component", "value"],
                       ((int(t), j, float(v)) for t, row in zip(traj.t, r) for j, v in enumerate(row)))
        if dcfg.get("condition_e"):
            rep = diag.condition_E_probe(fit.normalizer, A, theta_true, series, fit.presample)
            m = model.dim
            write_rows(out / "condition_e.csv", ["t", "i", "j", "value"],
                       ((int(t), i, j, float(M[i, j])) for t, M in zip(rep.t, rep.matrices)
                        for i in range(m) for j in range(m)))
            write_json(out / "condition_e.json", {"tail_deviation": rep.tail_deviation, "eta": rep.eta.tolist()})
    if dcfg.get("normality"):
        write_json(out / "normality.json", _diag_normality(cfg, est, theta_true, args.workers))
    return EXIT_OK


def cmd_experiment_fig1(args, cfg) -> int:
    plan = cfg.get("plan", {})
    seed = args.seed if args.seed is not None else plan.get("base_seed", FIG1_SEED)
    result = fig1_study(R=plan.get("R", 300), base_seed=seed, workers=args.workers,
                        n=plan.get("n", 200), prefix=plan.get("prefix", 30))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "fig1_mse.csv", ["estimator_id", "t", "mse"], result.rows())
    first = int(result.t[0])
    write_rows(out / "fig1_trace.csv", ["estimator_id", "t", "theta_hat"],
               ((e, t + 1, float(v)) for e, tr in result.trace.items()
                for t, v in enumerate(tr) if t + 1 >= first))
    horizon = int(result.t[-1])
    at_end = {e: result.at(e, horizon) for e in result.estimators}
    write_json(out / "fig1_summary.json", {
        "base_seed": seed,
        "replications": result.n_total,
        "n_failed": result.n_failed,
        "horizon": horizon,
        "mse_at_horizon": at_end,
        "robust_beats_ls": bool(at_end["huber_gm"] < at_end["ls"] and at_end["hampel_gm"] < at_end["ls"]),
    })
    return EXIT_OK


def cmd_experiment_normality(args, cfg) -> int:
    plan = cfg.get("plan", {})
    seed = args.seed if args.seed is not None else plan.get("base_seed", FIG1_SEED)
    R, T = plan.get("R", 2000), plan.get("n", 500)
    samples = normality_study(R=R, horizon=T, base_seed=seed, workers=args.workers)
    report = diag.normality_check(samples, [[1.0]]).to_dict()
    report.update(horizon=T, replications=R, base_seed=seed, n_failed=0,
                  sample_variance=float(np.var(samples, ddof=1)))
    jsonschema.validate(report, load_schema("normality_report.schema.json"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "normality.json", report)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "diagnose": cmd_diagnose,
    "experiment-fig1": cmd_experiment_fig1,
    "experiment-normality": cmd_experiment_normality,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recest", description="Recursive estimation toolkit.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--data", help="series CSV with columns t,x")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker processes for replications")
    p.add_argument("--seed", type=int, help="override the configured seed (unsigned 64-bit)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("--seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("--workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.command in ("simulate", "estimate", "diagnose") and not cfg:
            raise ConfigError(f"{args.command} needs --config")
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReplicationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REPLICATION
    except EstimationError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
