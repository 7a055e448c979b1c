"""Data generators and the seeded replication harness.

Random numbers come from numpy's PCG64.  Replication ``r`` of a plan with
base seed ``b`` is seeded with ``splitmix64(b + (r + 1) * 0x9E3779B97F4A7C15 mod 2**64)``,
i.e. the ``r``-th output of a SplitMix64 stream started at ``b``.  The map
is a bijection of the counter, so seeds within a plan never repeat, and a
replication's stream does not depend on which worker runs it.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, ReplicationFailure
from .models import ar_filter, ar_fisher_normalizer, gaussian_ar_model
from .core import run
from .robust import PsiFunction, ScaleEstimates, gm_recursion, mad_scale_or_floor

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
FIG1_SEED = 20060817


def splitmix64(x: int) -> int:
    z = x & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replication_seed(base_seed: int, index: int) -> int:
    return splitmix64((base_seed + (index + 1) * GOLDEN_GAMMA) & MASK64)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class AOConfig:
    """AR(1) observed with additive outliers.

    ``Y_t = theta Y_{t-1} + w_t``, ``X_t = Y_t + v_t``; ``w_t ~ N(0, 1)`` and
    ``v_t`` is 0 with probability ``1 - eps``, else ``N(0, sigma2)``.
    """

    theta: float = 0.6
    eps: float = 0.05
    sigma2: float = 9.0
    n: int = 230
    burn_in: int = 100
    seed: int = FIG1_SEED

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError("eps must lie in [0, 1]")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        if self.n < 0 or self.burn_in < 0:
            raise ValueError("n and burn_in must be non-negative")


def simulate_ao(config: AOConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """``X`` of length ``burn_in + n`` from ``Y_0 = 0``; callers drop the burn-in.

    Draw order is fixed: all ``w``, then the contamination uniforms, then the
    outlier normals.  With ``eps = 0`` the result is the clean AR(1) path
    produced by :func:`recest.models.ar_simulate` from the same stream.
    """
    if rng is None:
        rng = make_rng(config.seed)
    size = config.burn_in + config.n
    w = rng.standard_normal(size)
    y = ar_filter([config.theta], w)
    hit = rng.random(size) < config.eps
    v = np.where(hit, math.sqrt(config.sigma2) * rng.standard_normal(size), 0.0)
    return y + v


@dataclass(frozen=True)
class ReplicationPlan:
    R: int = 300
    base_seed: int = FIG1_SEED
    horizon: int = 200
    prefix: int = 30
    t_min: int = 5
    max_fail_fraction: float = 0.05

    def __post_init__(self):
        if self.R < 1:
            raise ValueError("R must be at least 1")
        if not 1 <= self.t_min <= self.horizon:
            raise ValueError("need 1 <= t_min <= horizon")

    @property
    def seeds(self) -> list[int]:
        return [replication_seed(self.base_seed, r) for r in range(self.R)]

    @property
    def t_grid(self) -> np.ndarray:
        return np.arange(self.t_min, self.horizon + 1)


@dataclass
class MSEResult:
    estimators: list[str]
    t: np.ndarray
    mse: np.ndarray  # (estimators, t)
    n_failed: int
    n_total: int
    trace: dict = field(default_factory=dict)  # estimator -> theta_t of the first good replication
    failures: list = field(default_factory=list)

    def at(self, estimator: str, t: int) -> float:
        return float(self.mse[self.estimators.index(estimator), int(np.searchsorted(self.t, t))])

    def rows(self):
        for e, row in zip(self.estimators, self.mse):
            for t, v in zip(self.t, row):
                yield e, int(t), float(v)


def parallel_map(fn, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally across processes; order is preserved."""
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))
    return [fn(x) for x in items]


def _replicate_one(args):
    index, seed, generate, experiment, theta_true, t_grid = args
    rng = make_rng(seed)
    series = generate(rng)
    try:
        trajs = experiment(series)
    except EstimationError as exc:
        return index, None, None, f"{type(exc).__name__}: {exc}"
    names = list(trajs)
    errs = np.empty((len(names), len(t_grid)))
    trace = {}
    for j, name in enumerate(names):
        tr = trajs[name]
        pos = np.searchsorted(tr.t, t_grid)
        if np.any(pos >= len(tr.t)) or np.any(tr.t[np.minimum(pos, len(tr.t) - 1)] != t_grid):
            raise ValueError(f"estimator {name} does not cover the reporting grid")
        est = tr.theta[pos, 0]
        errs[j] = (est - theta_true) ** 2
        trace[name] = tr.theta[:, 0].copy()
    return index, names, errs, trace


def replicate(plan: ReplicationPlan, generate, experiment, theta_true: float,
              workers: int = 1) -> MSEResult:
    """Monte Carlo MSE curves.

    ``generate(rng)`` returns one series, ``experiment(series)`` a dict of
    scalar trajectories keyed by estimator id.  Replications that raise an
    EstimationError are dropped and counted; more than
    ``plan.max_fail_fraction`` of them raises ReplicationFailure.  Results
    are assembled in replication order, so the output does not depend on
    ``workers``.  Both callables must be picklable when ``workers > 1``.
    """
    t_grid = plan.t_grid
    tasks = [(r, s, generate, experiment, float(theta_true), t_grid) for r, s in enumerate(plan.seeds)]
    results = parallel_map(_replicate_one, tasks, workers)

    names, stack, trace, failures = None, [], {}, []
    for index, got_names, errs, extra in results:
        if got_names is None:
            failures.append((index, extra))
            continue
        if names is None:
            names, trace = got_names, extra
        stack.append(errs)
    n_failed = len(failures)
    if n_failed > plan.max_fail_fraction * plan.R or not stack:
        raise ReplicationFailure(n_failed, plan.R)
    if n_failed:
        log.warning("%d of %d replications failed and were excluded", n_failed, plan.R)
    mse = np.sum(np.stack(stack), axis=0) / len(stack)
    return MSEResult(names, t_grid, mse, n_failed, plan.R, trace, failures)


# --------------------------------------------------------------------------
# additive-outlier AR(1) study


def prefix_fit(prefix) -> tuple[float, ScaleEstimates]:
    """Least-squares AR(1) fit on the prefix plus MAD scales of data and residuals."""
    prefix = np.asarray(prefix, dtype=float)
    xp, x = prefix[:-1], prefix[1:]
    denom = float(xp @ xp)
    theta = float(xp @ x) / denom if denom > 0 else 0.0
    resid = x - theta * xp
    return theta, ScaleEstimates(mad_scale_or_floor(prefix), mad_scale_or_floor(resid))


@dataclass(frozen=True)
class AOGenerator:
    """Picklable series generator: ``prefix + horizon`` observations after burn-in."""

    config: AOConfig

    def __call__(self, rng) -> np.ndarray:
        return simulate_ao(self.config, rng)[self.config.burn_in:]


@dataclass(frozen=True)
class RobustAR1Experiment:
    """Least squares and the Huber / Hampel GM recursions on one AO series.

    The first ``prefix`` points give the starting value (least squares), the
    scales ``s_x, s_r`` and each estimator's starting normalizer (its
    increments summed over the prefix); the recursions then run on the
    remaining points with the last prefix point as ``X_0``.
    """

    prefix: int = 30
    c: float = 1.8
    alpha: float = 1.8
    beta: float = 4.0

    def estimators(self) -> dict:
        return {
            "huber_gm": PsiFunction("huber", c=self.c),
            "hampel_gm": PsiFunction("hampel", alpha=self.alpha, beta=self.beta),
        }

    def __call__(self, series) -> dict:
        series = np.asarray(series, dtype=float)
        head = series[: self.prefix]
        tail = series[self.prefix - 1:]
        theta0, scales = prefix_fit(head)
        out = {}

        model = gaussian_ar_model([0.0], 1.0)
        I0 = np.array([[float(head[:-1] @ head[:-1])]])
        out["ls"] = run(model.score, ar_fisher_normalizer(model, I0), [theta0], tail, presample=1)

        for name, phi in self.estimators().items():
            C_g = phi.c_g(scales.s_r)
            f = phi.scalar()
            sx = scales.s_x
            gamma0 = C_g * sum(sx * f(x / sx) * x for x in head[:-1].tolist())
            out[name] = gm_recursion(tail, phi, scales, C_g, theta0, gamma0)
        return out


def fig1_study(R: int = 300, base_seed: int = FIG1_SEED, workers: int = 1,
               theta: float = 0.6, eps: float = 0.05, sigma2: float = 9.0,
               n: int = 200, prefix: int = 30, burn_in: int = 100,
               c: float = 1.8, alpha: float = 1.8, beta: float = 4.0) -> MSEResult:
    """MSE curves of LS, Huber-GM and Hampel-GM under additive outliers, t = 5..n."""
    plan = ReplicationPlan(R=R, base_seed=base_seed, horizon=n, prefix=prefix)
    gen = AOGenerator(AOConfig(theta=theta, eps=eps, sigma2=sigma2, n=prefix + n, burn_in=burn_in))
    exp = RobustAR1Experiment(prefix=prefix, c=c, alpha=alpha, beta=beta)
    return replicate(plan, gen, exp, theta, workers=workers)


# --------------------------------------------------------------------------
# asymptotic normality of the i.i.d. likelihood recursion


@dataclass(frozen=True)
class IIDScoreReplication:
    """One replication: ``sqrt(T)(theta_T - theta)`` for the normal-location likelihood recursion."""

    theta: float = 0.0
    sigma: float = 1.0
    horizon: int = 500
    theta0: float = 0.0

    def __call__(self, seed: int) -> float:
        from .models import normal_location_model
        from .normalizers import fisher_normalizer

        model = normal_location_model(self.sigma)
        x = model.sample([self.theta], make_rng(seed), self.horizon)
        traj = run(model.score, fisher_normalizer(model), [self.theta0], x)
        return math.sqrt(self.horizon) * (float(traj.final[0]) - self.theta)


def normality_study(R: int = 2000, horizon: int = 500, theta: float = 0.0, sigma: float = 1.0,
                    base_seed: int = FIG1_SEED, workers: int = 1) -> np.ndarray:
    """Root-scaled errors at ``horizon`` over ``R`` seeded replications."""
    job = IIDScoreReplication(theta, sigma, horizon)
    seeds = [replication_seed(base_seed, r) for r in range(R)]
    return np.array(parallel_map(job, seeds, workers))
