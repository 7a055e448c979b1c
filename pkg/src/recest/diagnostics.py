"""Finite-horizon probes of local asymptotic linearity.

All probes need the true parameter and are meant for simulated data.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .core import EstimatingFunction, Normalizer, Trajectory, solve_linear
from .errors import GridMismatch, InsufficientSamples
from .models import CAEFModel

MIN_NORMALITY_SAMPLES = 100
KS_CRITICAL_1PCT = 1.63


@dataclass(frozen=True)
class ScalingSequence:
    """Diagonal scaling ``A_t(t, history)`` used to blow up estimation errors."""

    fn: Callable[[int, np.ndarray], np.ndarray]
    tag: str

    def __call__(self, t, history) -> np.ndarray:
        return np.asarray(self.fn(t, history), dtype=float)


def sqrt_t_identity(dim: int = 1) -> ScalingSequence:
    eye = np.eye(dim)
    return ScalingSequence(lambda t, history: math.sqrt(t) * eye, "sqrt_t_identity")


def h_sqrt(model: CAEFModel, H0: float = 0.0) -> ScalingSequence:
    """``A_t = H_t^{1/2}`` with ``H_t = H0 + sum_{s<=t} h(X_{s-1})``."""
    def fn(t, history):
        return np.array([[math.sqrt(H0 + sum(model.h(x) for x in history[-t:]))]])

    return ScalingSequence(fn, "H_sqrt")


def linearity_residual(traj: Trajectory, linear_traj: Trajectory, A: ScalingSequence,
                       series, presample: int = 0) -> np.ndarray:
    """``r_t = A_t (theta_t - theta*_t)`` for every ``t``; shape ``(n, m)``."""
    if len(traj.t) != len(linear_traj.t) or np.any(traj.t != linear_traj.t):
        raise GridMismatch("trajectories are on different time grids")
    series = np.asarray(series, dtype=float)
    out = np.empty_like(traj.theta)
    for i, t in enumerate(traj.t):
        a = A(int(t), series[: presample + int(t) - 1])
        out[i] = a @ (traj.theta[i] - linear_traj.theta[i])
    return out


def _step_index(model, history) -> int:
    return len(history) - getattr(model, "presample", 0) + 1


def conditional_drift(model, psi: EstimatingFunction, theta, u, history=(), t: int | None = None,
                      closed_form: bool = True) -> np.ndarray:
    """``b_t(theta, u) = E_theta{psi_t(theta + u) | F_{t-1}}``.

    For the score of a conditionally additive exponential family the closed
    form is used unless ``closed_form=False``; otherwise quadrature against
    the model's conditional law.
    """
    theta = np.asarray(theta, dtype=float).reshape(psi.dim)
    u = np.asarray(u, dtype=float).reshape(psi.dim)
    if closed_form and isinstance(model, CAEFModel) and psi is model.score:
        return model.drift(theta, u, history)
    if t is None:
        t = _step_index(model, history)
    shifted = theta + u
    value = model.cond_expect(lambda z: psi(t, shifted, z, history), theta, history)
    return np.asarray(value, dtype=float).reshape(psi.dim)


def r_field(model, psi: EstimatingFunction, normalizer: Normalizer, theta, u, history=(),
            t: int | None = None, closed_form: bool = True) -> np.ndarray:
    """``R_t(theta, u) = Gamma_t(theta) Gamma_t(theta+u)^{-1} b_t(theta, u)``."""
    theta = np.asarray(theta, dtype=float).reshape(psi.dim)
    u = np.asarray(u, dtype=float).reshape(psi.dim)
    if t is None:
        t = _step_index(model, history)
    b = conditional_drift(model, psi, theta, u, history, t, closed_form)
    if normalizer.theta_free:
        return b
    g = normalizer.cumulative(t, theta, history)
    gu = normalizer.cumulative(t, theta + u, history)
    return g @ solve_linear(gu, b)


@dataclass
class ConditionEReport:
    t: np.ndarray
    matrices: np.ndarray
    tail_deviation: float

    @property
    def eta(self) -> np.ndarray:
        """Empirical limit: the last matrix of the sequence."""
        return self.matrices[-1]


def condition_E_probe(normalizer: Normalizer, A: ScalingSequence, theta, series,
                      presample: int = 0) -> ConditionEReport:
    """Sequence ``A_t Gamma_t(theta)^{-1} A_t`` and its last-quarter spread.

    ``tail_deviation`` is the largest entrywise difference between any two
    matrices in the last quarter of the horizon.
    """
    series = np.asarray(series, dtype=float)
    n = len(series) - presample
    if n < 1:
        raise ValueError("series has no observations after the presample")
    m = normalizer.dim
    theta = np.asarray(theta, dtype=float).reshape(m)
    acc = normalizer.initial.copy()
    mats = np.empty((n, m, m))
    for i in range(n):
        t = i + 1
        history = series[: presample + i]
        acc = acc + normalizer.delta(t, theta, history)
        g = normalizer.finish(t, acc)
        a = A(t, history)
        ginv_a = np.column_stack([solve_linear(g, a[:, j]) for j in range(m)])
        mats[i] = a @ ginv_a
    tail = mats[n - max(1, n // 4):]
    spread = float(np.max(tail.max(axis=0) - tail.min(axis=0)))
    return ConditionEReport(np.arange(1, n + 1), mats, spread)


def lemma_terms(model, psi: EstimatingFunction, normalizer: Normalizer, theta,
                traj: Trajectory, series, presample: int = 0) -> dict:
    """Summands of the two asymptotic-linearity conditions along a run.

    ``drift``: ``dGamma_s(theta) D_{s-1} + R_s(theta, D_{s-1})``;
    ``noise``: ``Gamma_s(theta) Gamma_s(theta+D)^{-1}(psi_s(theta+D) - b_s(theta, D)) - psi_s(theta)``
    with ``D = theta_{s-1} - theta``.  Returned unthresholded.
    """
    series = np.asarray(series, dtype=float)
    m = psi.dim
    theta = np.asarray(theta, dtype=float).reshape(m)
    n = len(traj)
    drift = np.empty((n, m))
    noise = np.empty((n, m))
    prev = traj.theta0
    g_prev = normalizer.finish(0, normalizer.initial.copy())
    acc = normalizer.initial.copy()
    for i in range(n):
        t = i + 1
        k = presample + i
        history, x = series[:k], series[k]
        d = prev - theta
        acc = acc + normalizer.delta(t, theta, history)
        g = normalizer.finish(t, acc)
        gd = g if normalizer.theta_free else normalizer.cumulative(t, theta + d, history)
        b = conditional_drift(model, psi, theta, d, history, t)
        drift[i] = (g - g_prev) @ d + g @ solve_linear(gd, b)
        noise[i] = g @ solve_linear(gd, psi(t, theta + d, x, history) - b) - psi(t, theta, x, history)
        g_prev = g
        prev = traj.theta[i]
    return {"drift": drift, "noise": noise}


def j_psi(model, psi: EstimatingFunction, theta, history=(), t: int = 1) -> np.ndarray:
    """``E_theta{psi psi^T}`` by quadrature against the model's (conditional) law."""
    theta = np.asarray(theta, dtype=float).reshape(psi.dim)
    value = model.cond_expect(lambda z: np.outer(psi(t, theta, z, history), psi(t, theta, z, history)),
                              theta, history)
    return np.asarray(value, dtype=float).reshape(psi.dim, psi.dim)


def quantile_decrease(early, late, quantiles=(0.5, 0.9)) -> dict:
    """Compare quantiles of probe norms at two horizons.

    Used as the finite-sample stand-in for convergence in probability:
    every listed quantile must be strictly smaller at the later horizon.
    """
    early = np.asarray(early, dtype=float)
    late = np.asarray(late, dtype=float)
    out = {}
    for q in quantiles:
        a, b = float(np.quantile(early, q)), float(np.quantile(late, q))
        out[q] = (a, b, b < a)
    return out


@dataclass
class NormalityReport:
    sample_mean: list
    sample_cov: list
    target_cov: list
    ks_statistic: list
    ks_critical: float
    n_samples: int

    @property
    def ks_pass(self) -> bool:
        return all(k < self.ks_critical for k in self.ks_statistic)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ks_pass"] = self.ks_pass
        return d


def normality_check(samples, target_cov) -> NormalityReport:
    """Empirical moments and per-component KS statistics against ``N(0, target_cov)`` marginals.

    ``ks_critical`` is the asymptotic 1% critical value ``1.63 / sqrt(n)``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, m = x.shape
    if n < MIN_NORMALITY_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_NORMALITY_SAMPLES} samples, got {n}")
    target = np.asarray(target_cov, dtype=float).reshape(m, m)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    ks = [float(stats.kstest(x[:, j], "norm", args=(0.0, math.sqrt(target[j, j]))).statistic)
          for j in range(m)]
    return NormalityReport(
        sample_mean=x.mean(axis=0).tolist(),
        sample_cov=cov.tolist(),
        target_cov=target.tolist(),
        ks_statistic=ks,
        ks_critical=KS_CRITICAL_1PCT / math.sqrt(n),
        n_samples=n,
    )
