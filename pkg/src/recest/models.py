"""Concrete model families.

Every model exposes the same small duck-typed surface used by the
normalizer constructors and the diagnostics:

* ``dim`` -- parameter dimension,
* ``score`` -- the likelihood estimating function ``l_t`` (martingale-difference),
* ``cond_expect(f, theta, history)`` -- ``E_theta{f(X_t) | history}``,
* ``cond_score(theta, z, history)`` -- ``l_t`` at a candidate observation ``z``,
* ``fisher_increment(t, theta, history)`` -- one-step conditional Fisher information,
* ``fisher_theta_free`` -- whether that increment ignores ``theta``,
* ``presample`` -- observations consumed as history before the first step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import signal, stats

from .core import (
    EstimatingFunction,
    Normalizer,
    Trajectory,
    run,
    solve_linear,
)
from .errors import DegenerateNormalizer, NonFiniteUpdate, PreconditionViolated
from .quadrature import GAUSS_HERMITE, QuadratureRule

SCALAR_FLOOR = 1e-12
AR_RIDGE = 1e-6


def _as_theta(theta, dim):
    return np.asarray(theta, dtype=float).reshape(dim)


# --------------------------------------------------------------------------
# i.i.d. location families


@dataclass(frozen=True)
class IIDModel:
    """An i.i.d. model ``X_t ~ f(theta, .)`` with scalar observations.

    ``center(theta)`` and ``spread(theta)`` place the quadrature domain;
    ``normal`` says the density is exactly normal there, so Gauss-Hermite
    applies directly.
    """

    name: str
    dim: int
    density: Callable[[np.ndarray, float], float]
    score_fn: Callable[[np.ndarray, float], np.ndarray]
    fisher: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.ndarray, np.random.Generator, int], np.ndarray]
    center: Callable[[np.ndarray], float]
    spread: Callable[[np.ndarray], float]
    rule: QuadratureRule = GAUSS_HERMITE
    normal: bool = False
    fisher_theta_free: bool = True
    presample: int = 0
    scalar_score: Callable[[float, float], float] | None = None
    scalar_fisher: float | None = None

    @cached_property
    def score(self) -> EstimatingFunction:
        fast = None
        if self.scalar_score is not None:
            f = self.scalar_score
            fast = lambda t, theta, x, history: f(theta, x)  # noqa: E731
        return EstimatingFunction(
            self.dim, lambda t, theta, x, history: self.score_fn(theta, x),
            martingale_difference=True, name=f"{self.name}:score", scalar=fast,
        )

    def cond_score(self, theta, z, history=None) -> np.ndarray:
        return np.asarray(self.score_fn(_as_theta(theta, self.dim), z), dtype=float).reshape(self.dim)

    def cond_expect(self, f, theta, history=None):
        theta = _as_theta(theta, self.dim)
        mean, sd = self.center(theta), self.spread(theta)
        if self.normal:
            return self.rule.normal_expectation(f, mean, sd)
        return self.rule.density_expectation(f, lambda z: self.density(theta, z), mean, sd)

    def fisher_increment(self, t, theta, history=None) -> np.ndarray:
        return self.fisher(theta)

    def sample(self, theta, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.sampler(_as_theta(theta, self.dim), rng, size)


def normal_location_model(sigma: float = 1.0, rule: QuadratureRule = GAUSS_HERMITE) -> IIDModel:
    """``N(theta, sigma**2)``; score ``(x - theta)/sigma**2``, information ``1/sigma**2``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    s2 = sigma * sigma
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    info = np.array([[1.0 / s2]])
    info.setflags(write=False)
    return IIDModel(
        name="normal_location",
        dim=1,
        density=lambda theta, x: norm * math.exp(-0.5 * (x - theta[0]) ** 2 / s2),
        score_fn=lambda theta, x: (x - theta) / s2,
        fisher=lambda theta: info,
        sampler=lambda theta, rng, size: theta[0] + sigma * rng.standard_normal(size),
        center=lambda theta: float(theta[0]),
        spread=lambda theta: sigma,
        rule=rule,
        normal=True,
        scalar_score=lambda theta, x: (x - theta) / s2,
        scalar_fisher=1.0 / s2,
    )


def logistic_location_model(scale: float = 1.0, rule: QuadratureRule | None = None) -> IIDModel:
    """Logistic location family; score ``tanh((x-theta)/2s)/s``, information ``1/(3 s**2)``."""
    if not scale > 0:
        raise ValueError("scale must be positive")
    if rule is None:
        rule = QuadratureRule("adaptive_simpson", truncation=40.0)
    s = scale

    def density(theta, x):
        z = -abs(x - theta[0]) / s
        e = math.exp(z)
        return e / (s * (1.0 + e) ** 2)

    return IIDModel(
        name="logistic_location",
        dim=1,
        density=density,
        score_fn=lambda theta, x: math.tanh((x - theta[0]) / (2.0 * s)) / s,
        fisher=lambda theta: np.array([[1.0 / (3.0 * s * s)]]),
        sampler=lambda theta, rng, size: rng.logistic(theta[0], s, size),
        center=lambda theta: float(theta[0]),
        spread=lambda theta: s,
        rule=rule,
    )


# --------------------------------------------------------------------------
# linear procedures


@dataclass(frozen=True)
class LinearProcedure:
    """``theta_t = theta_{t-1} + Gamma_t^{-1}(h_t - gamma_t theta_{t-1})``.

    ``h(t, x, history)`` is adapted, ``gamma(t, history)`` predictable, and
    ``normalizer`` must be theta-free.
    """

    dim: int
    h: Callable[[int, object, np.ndarray], np.ndarray]
    gamma: Callable[[int, np.ndarray], np.ndarray]
    normalizer: Normalizer
    presample: int = 0

    @cached_property
    def psi(self) -> EstimatingFunction:
        def fn(t, theta, x, history):
            g = np.asarray(self.gamma(t, history), dtype=float).reshape(self.dim, self.dim)
            return np.asarray(self.h(t, x, history), dtype=float).reshape(self.dim) - g @ theta

        return EstimatingFunction(self.dim, fn, name="linear")


def linear_procedure(dim: int, h, gamma, initial=None, presample: int = 0) -> LinearProcedure:
    """Linear procedure whose normalizer has increments exactly ``gamma_t``."""
    norm = Normalizer(dim, lambda t, theta, history: gamma(t, history), initial=initial,
                      theta_free=True, name="sum_gamma")
    return LinearProcedure(dim, h, gamma, norm, presample)


def linear_run(spec: LinearProcedure, theta0, series) -> Trajectory:
    return run(spec.psi, spec.normalizer, theta0, series, presample=spec.presample)


def linear_closed_form(spec: LinearProcedure, theta0, series, atol: float = 1e-12) -> Trajectory:
    """Direct evaluation of ``Gamma_t^{-1}(Gamma_0 theta_0 + sum_{s<=t} h_s)``.

    Valid only when ``Gamma_t - Gamma_{t-1} = gamma_t``; raises
    PreconditionViolated otherwise.  With ``Gamma_0 = 0`` the starting
    point drops out after the first step.
    """
    series = np.asarray(series, dtype=float)
    m, p = spec.dim, spec.presample
    n = len(series) - p
    if n < 1:
        raise ValueError("series has no observations after the presample")
    theta0 = _as_theta(theta0, m)
    norm = spec.normalizer
    acc = norm.initial.copy()
    g_prev = norm.finish(0, acc)
    rhs = g_prev @ theta0
    thetas = np.empty((n, m))
    gammas = np.empty((n, m, m))
    for i in range(n):
        t, k = i + 1, p + i
        history = series[:k]
        gam = np.asarray(spec.gamma(t, history), dtype=float).reshape(m, m)
        acc = acc + norm.delta(t, theta0, history)
        g = norm.finish(t, acc)
        if np.any(np.abs((g - g_prev) - gam) > atol * np.maximum(1.0, np.abs(gam))):
            raise PreconditionViolated(f"step {t}: normalizer increment differs from gamma_t")
        rhs = rhs + np.asarray(spec.h(t, series[k], history), dtype=float).reshape(m)
        thetas[i] = solve_linear(g, rhs)
        gammas[i] = g
        g_prev = g
    return Trajectory(np.arange(1, n + 1), thetas, gammas, theta0)


# --------------------------------------------------------------------------
# conditionally additive exponential family Markov chains


@dataclass(frozen=True)
class CAEFModel:
    """Scalar Markov chain with transition density ``h(x,y) exp(theta m(y,x) - gamma(theta) h(x))``.

    ``transition_pmf(theta, x)`` returns ``(support, probabilities)`` for
    discrete chains and is used for quadrature-by-summation.
    """

    name: str
    gamma: Callable[[float], float]
    gamma_dot: Callable[[float], float]
    gamma_ddot: Callable[[float], float]
    h: Callable[[float], float]
    m_stat: Callable[[float, float], float]
    sample_transition: Callable[[float, float, np.random.Generator], float]
    transition_pmf: Callable[[float, float], tuple] | None = None
    dim: int = 1
    fisher_theta_free: bool = False
    presample: int = 1

    @cached_property
    def score(self) -> EstimatingFunction:
        return EstimatingFunction(1, lambda t, theta, y, history: self.cond_score(theta, y, history),
                                  martingale_difference=True, name=f"{self.name}:score")

    def cond_score(self, theta, y, history) -> np.ndarray:
        x = history[-1]
        lam = float(np.asarray(theta).reshape(-1)[0])
        return np.array([self.m_stat(y, x) - self.gamma_dot(lam) * self.h(x)])

    def fisher_increment(self, t, theta, history) -> np.ndarray:
        lam = float(np.asarray(theta).reshape(-1)[0])
        return np.array([[self.gamma_ddot(lam) * self.h(history[-1])]])

    def fisher_cumulative(self, t, theta, history) -> np.ndarray:
        lam = float(np.asarray(theta).reshape(-1)[0])
        return np.array([[self.gamma_ddot(lam) * sum(self.h(x) for x in history[-t:])]])

    def drift(self, theta, u, history) -> np.ndarray:
        """Closed-form ``E_theta{l_t(theta+u) | F_{t-1}} = h(X_{t-1})(gamma'(theta) - gamma'(theta+u))``."""
        lam = float(np.asarray(theta).reshape(-1)[0])
        du = float(np.asarray(u).reshape(-1)[0])
        return np.array([self.h(history[-1]) * (self.gamma_dot(lam) - self.gamma_dot(lam + du))])

    def cond_expect(self, f, theta, history):
        if self.transition_pmf is None:
            raise NotImplementedError(f"{self.name} has no transition pmf")
        lam = float(np.asarray(theta).reshape(-1)[0])
        support, probs = self.transition_pmf(lam, history[-1])
        acc = None
        for y, p in zip(support, probs):
            v = p * np.asarray(f(float(y)), dtype=float)
            acc = v if acc is None else acc + v
        return acc

    def simulate(self, theta: float, x0: float, n: int, rng: np.random.Generator) -> np.ndarray:
        """Path ``(X_0, X_1, ..., X_n)`` started at ``x0``."""
        out = np.empty(n + 1)
        out[0] = x0
        for i in range(n):
            out[i + 1] = self.sample_transition(theta, out[i], rng)
        return out


_POISSON_EXACT_MAX = 1e12


def _poisson_transition(lam, x, rng):
    mean = math.exp(lam) * x
    if mean <= _POISSON_EXACT_MAX:
        return float(rng.poisson(mean))
    # numpy rejects huge means; relative sd is below 1e-6 here
    return float(max(0.0, round(mean + math.sqrt(mean) * rng.standard_normal())))


def _poisson_pmf(lam, x):
    mean = math.exp(lam) * x
    if mean == 0.0:
        return np.array([0.0]), np.array([1.0])
    half = 15.0 * math.sqrt(mean) + 30.0
    support = np.arange(max(0.0, math.floor(mean - half)), math.ceil(mean + half) + 1.0)
    return support, stats.poisson.pmf(support, mean)


def galton_watson_poisson() -> CAEFModel:
    """Galton-Watson chain with Poisson offspring, canonical parameter ``lambda = log(mean)``.

    ``X_t | X_{t-1} ~ Poisson(exp(lambda) X_{t-1})``; in exponential-family
    form ``gamma(lambda) = exp(lambda)``, ``h(x) = x``, ``m(y, x) = y``.
    """
    return CAEFModel(
        name="gw_poisson",
        gamma=math.exp,
        gamma_dot=math.exp,
        gamma_ddot=math.exp,
        h=lambda x: float(x),
        m_stat=lambda y, x: float(y),
        sample_transition=_poisson_transition,
        transition_pmf=_poisson_pmf,
    )


def caef_run(model: CAEFModel, theta0: float, series, H0: float = 0.0) -> Trajectory:
    """Likelihood recursion for a conditionally additive exponential family.

    ``series[0]`` is ``X_0``; ``H_t = H0 + sum_{s<=t} h(X_{s-1})``.  The
    normalizer ``gamma''(theta_{t-1}) H_t`` is recorded as ``gamma``; ``H_t``
    goes to ``meta["H"]``.
    """
    series = np.asarray(series, dtype=float)
    n = len(series) - 1
    if n < 1:
        raise ValueError("need X_0 and at least one transition")
    if H0 < 0:
        raise ValueError("H0 must be non-negative")
    theta = float(np.asarray(theta0, dtype=float).reshape(-1)[0])
    thetas = np.empty((n, 1))
    gammas = np.empty((n, 1, 1))
    H = np.empty(n)
    acc = float(H0)
    for i in range(n):
        t = i + 1
        x_prev, x = series[i], series[i + 1]
        hx = model.h(x_prev)
        acc += hx
        g = model.gamma_ddot(theta) * acc
        if not abs(g) > SCALAR_FLOOR or not math.isfinite(g):
            raise DegenerateNormalizer(f"normalizer {g!r}", step=t)
        theta = theta + (model.m_stat(x, x_prev) - model.gamma_dot(theta) * hx) / g
        if not math.isfinite(theta):
            raise NonFiniteUpdate(f"estimate became {theta}", step=t)
        thetas[i, 0] = theta
        gammas[i, 0, 0] = g
        H[i] = acc
    traj = Trajectory(np.arange(1, n + 1), thetas, gammas, np.array([float(np.asarray(theta0).reshape(-1)[0])]))
    traj.meta["H"] = H
    return traj


# --------------------------------------------------------------------------
# autoregressions


@dataclass(frozen=True)
class ARModel:
    """AR(m): ``X_t = theta . (X_{t-1}, ..., X_{t-m}) + xi_t`` with innovation density ``g``."""

    theta: np.ndarray
    g: Callable[[float], float]
    score_ratio: Callable[[float], float]
    i_g: float
    sample_innovations: Callable[[np.random.Generator, int], np.ndarray]
    innovation_sd: float = 1.0
    normal: bool = False
    rule: QuadratureRule = GAUSS_HERMITE
    name: str = "ar"
    fisher_theta_free: bool = True

    def __post_init__(self):
        th = np.array(self.theta, dtype=float).reshape(-1)
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)
        if not self.i_g > 0:
            raise ValueError("i_g must be positive")

    @property
    def dim(self) -> int:
        return len(self.theta)

    @property
    def order(self) -> int:
        return len(self.theta)

    @property
    def presample(self) -> int:
        return self.order

    def window(self, history) -> np.ndarray:
        """Regressor ``(X_{t-1}, ..., X_{t-m})``."""
        m = self.order
        return np.asarray(history[-m:], dtype=float)[::-1]

    @cached_property
    def score(self) -> EstimatingFunction:
        return EstimatingFunction(self.dim, lambda t, theta, x, history: self.cond_score(theta, x, history),
                                  martingale_difference=True, name="ar:score")

    def cond_score(self, theta, x, history) -> np.ndarray:
        w = self.window(history)
        return -self.score_ratio(x - float(np.dot(theta, w))) * w

    def fisher_increment(self, t, theta, history) -> np.ndarray:
        w = self.window(history)
        return self.i_g * np.outer(w, w)

    def cond_expect(self, f, theta, history):
        mean = float(np.dot(_as_theta(theta, self.dim), self.window(history)))
        if self.normal:
            return self.rule.normal_expectation(f, mean, self.innovation_sd)
        return self.rule.density_expectation(f, lambda z: self.g(z - mean), mean, self.innovation_sd)

    def innovation_information(self, rule: QuadratureRule | None = None) -> float:
        """``int (g'/g)^2 g`` by quadrature (independent of the stored ``i_g``)."""
        rule = rule or QuadratureRule("adaptive_simpson", tol=1e-11, truncation=12.0)
        return float(rule.density_expectation(lambda z: self.score_ratio(z) ** 2, self.g, 0.0, self.innovation_sd))


def gaussian_ar_model(theta, sigma: float = 1.0) -> ARModel:
    """AR(m) with ``N(0, sigma**2)`` innovations: ``g'/g = -z/sigma**2``, ``i_g = 1/sigma**2``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    s2 = sigma * sigma
    norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    return ARModel(
        theta=theta,
        g=lambda z: norm * math.exp(-0.5 * z * z / s2),
        score_ratio=lambda z: -z / s2,
        i_g=1.0 / s2,
        sample_innovations=lambda rng, size: sigma * rng.standard_normal(size),
        innovation_sd=sigma,
        normal=True,
    )


def ar_filter(theta, innovations) -> np.ndarray:
    """AR recursion from a zero initial state driven by ``innovations``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    return signal.lfilter([1.0], np.concatenate(([1.0], -theta)), np.asarray(innovations, dtype=float))


def ar_simulate(model: ARModel, n: int, burn_in: int, rng: np.random.Generator) -> np.ndarray:
    """Simulate ``burn_in + n`` steps from zero and return the last ``n``."""
    if n < 0 or burn_in < 0:
        raise ValueError("n and burn_in must be non-negative")
    xi = model.sample_innovations(rng, burn_in + n)
    return ar_filter(model.theta, xi)[burn_in:]


def ar_fisher_normalizer(model: ARModel, I0=None) -> Normalizer:
    """``I_t = I_0 + i_g sum w_s w_s^T``; ``I_0`` defaults to a ``1e-6`` ridge."""
    m = model.order
    if I0 is None:
        I0 = AR_RIDGE * np.eye(m)
    return Normalizer(m, model.fisher_increment, initial=I0, theta_free=True, name="ar_fisher")


def ar_likelihood_run(model: ARModel, theta0, series, I0=None) -> Trajectory:
    """Likelihood recursion for AR(m); the first ``m`` points seed the regressor.

    Pass ``I0=np.zeros((m, m))`` for the unregularized recursion (singular
    until ``m`` linearly independent regressors have been seen).
    """
    return run(model.score, ar_fisher_normalizer(model, I0), theta0, series, presample=model.order)
