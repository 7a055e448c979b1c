"""Bounded psi-functions, MAD scale, C_g constants and recursive GM-estimators for AR(1)."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EstimatingFunction, Normalizer, Trajectory
from .errors import DegenerateNormalizer, NonFiniteUpdate, NonPositiveCg, ZeroScale
from .models import SCALAR_FLOOR
from .quadrature import adaptive_simpson

MAD_CONSTANT = 0.6745
CG_TOL = 1e-12


def huber(x, c: float):
    """Huber's psi: ``x`` on ``[-c, c]``, ``c sign(x)`` outside."""
    if not c > 0:
        raise ValueError("c must be positive")
    out = np.clip(x, -c, c)
    return float(out) if np.ndim(out) == 0 else out


def hampel(x, alpha: float, beta: float):
    """Hampel's two-part redescending psi: identity to ``alpha``, linear to 0 at ``beta``."""
    if not 0 < alpha < beta:
        raise ValueError("need 0 < alpha < beta")
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    descent = np.sign(x) * alpha * (beta - a) / (beta - alpha)
    out = np.where(a <= alpha, x, np.where(a < beta, descent, 0.0))
    return float(out) if out.ndim == 0 else out


def mad_scale(data) -> float:
    """``median(|data|) / 0.6745``; raises ZeroScale when that is zero."""
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        raise ValueError("empty data")
    s = float(np.median(np.abs(data))) / MAD_CONSTANT
    if s == 0.0:
        raise ZeroScale("median absolute value is zero")
    return s


def scale_floor(data) -> float:
    """Substitute scale for all-zero data."""
    return 1e-8 * (1.0 + float(np.max(np.abs(np.asarray(data, dtype=float)))))


def mad_scale_or_floor(data) -> float:
    try:
        return mad_scale(data)
    except ZeroScale:
        return scale_floor(data)


def normal_pdf(sd: float):
    k = 1.0 / (sd * math.sqrt(2.0 * math.pi))
    return lambda x: k * math.exp(-0.5 * (x / sd) ** 2)


def c_g_huber(c: float, s_r: float, g=None, tol: float = CG_TOL) -> float:
    """``int_{-c s_r}^{c s_r} g``; ``g`` defaults to the ``N(0, s_r**2)`` density."""
    if not (c > 0 and s_r > 0):
        raise ValueError("c and s_r must be positive")
    g = normal_pdf(s_r) if g is None else g
    return adaptive_simpson(g, -c * s_r, c * s_r, tol)


def c_g_huber_normal(c: float) -> float:
    """Closed form of :func:`c_g_huber` for normal ``g``: ``2 Phi(c) - 1``."""
    return math.erf(c / math.sqrt(2.0))


def c_g_hampel(alpha: float, beta: float, s_r: float, g=None, tol: float = CG_TOL) -> float:
    """Mass of ``g`` on ``|x| <= alpha s_r`` minus ``alpha/(beta-alpha)`` times the mass on
    ``alpha s_r < |x| < beta s_r``."""
    if not 0 < alpha < beta:
        raise ValueError("need 0 < alpha < beta")
    if not s_r > 0:
        raise ValueError("s_r must be positive")
    g = normal_pdf(s_r) if g is None else g
    a, b = alpha * s_r, beta * s_r
    inner = adaptive_simpson(g, -a, a, tol)
    tails = adaptive_simpson(g, -b, -a, tol) + adaptive_simpson(g, a, b, tol)
    return inner - alpha / (beta - alpha) * tails


def c_g_hampel_normal(alpha: float, beta: float) -> float:
    ea, eb = math.erf(alpha / math.sqrt(2.0)), math.erf(beta / math.sqrt(2.0))
    return ea - alpha / (beta - alpha) * (eb - ea)


@dataclass(frozen=True)
class PsiFunction:
    """A bounded odd psi: ``huber(c)`` or ``hampel(alpha, beta)``."""

    kind: str
    c: float = 1.8
    alpha: float = 1.8
    beta: float = 4.0

    def __post_init__(self):
        if self.kind == "huber":
            if not self.c > 0:
                raise ValueError("huber needs c > 0")
        elif self.kind == "hampel":
            if not 0 < self.alpha < self.beta:
                raise ValueError("hampel needs 0 < alpha < beta")
        else:
            raise ValueError(f"unknown psi {self.kind!r}")

    def __call__(self, x):
        if self.kind == "huber":
            return huber(x, self.c)
        return hampel(x, self.alpha, self.beta)

    @property
    def bound(self) -> float:
        return self.c if self.kind == "huber" else self.alpha

    def c_g(self, s_r: float, g=None) -> float:
        if self.kind == "huber":
            return c_g_huber(self.c, s_r, g)
        return c_g_hampel(self.alpha, self.beta, s_r, g)

    def scalar(self):
        """Fast float-only version for the recursion loops."""
        if self.kind == "huber":
            c = self.c

            def f(x):
                return c if x > c else (-c if x < -c else x)
            return f
        a, b = self.alpha, self.beta
        k = a / (b - a)

        def f(x):
            ax = abs(x)
            if ax <= a:
                return x
            if ax < b:
                return math.copysign(k * (b - ax), x)
            return 0.0
        return f


@dataclass(frozen=True)
class ScaleEstimates:
    s_x: float
    s_r: float

    def __post_init__(self):
        if not (self.s_x > 0 and self.s_r > 0):
            raise ValueError("scale estimates must be positive")


def location_psi(phi: PsiFunction) -> EstimatingFunction:
    """``psi(theta, x) = phi(x - theta)`` for i.i.d. location models."""
    return EstimatingFunction(1, lambda t, theta, x, history: phi(x - theta[0]),
                              martingale_difference=True, name=f"{phi.kind}_location")


def gm_estimating_function(phi: PsiFunction, scales: ScaleEstimates) -> EstimatingFunction:
    """AR(1) GM estimating function ``s_x phi(X_{t-1}/s_x) s_r phi((X_t - theta X_{t-1})/s_r)``."""
    sx, sr = scales.s_x, scales.s_r

    def fn(t, theta, x, history):
        xp = history[-1]
        return sx * phi(xp / sx) * sr * phi((x - theta[0] * xp) / sr)

    return EstimatingFunction(1, fn, martingale_difference=False, name=f"gm_{phi.kind}")


def _check_cg(C_g: float):
    if not C_g > 0:
        raise NonPositiveCg(f"C_g = {C_g} is not positive")


def gm_normalizer(phi: PsiFunction, scales: ScaleEstimates, C_g: float, Gamma0: float = 0.0) -> Normalizer:
    """Increments ``C_g s_x phi(X_{t-1}/s_x) X_{t-1}``."""
    _check_cg(C_g)
    sx = scales.s_x

    def increment(t, theta, history):
        xp = history[-1]
        return C_g * sx * phi(xp / sx) * xp

    return Normalizer(1, increment, initial=[[Gamma0]], theta_free=True, name=f"gm_{phi.kind}")


def gm_recursion(series, phi: PsiFunction, scales: ScaleEstimates, C_g: float,
                 theta0: float, Gamma0: float = 0.0) -> Trajectory:
    """Recursive GM-estimator of an AR(1) coefficient.

    ``series[0]`` is ``X_0``.  Each step adds ``C_g s_x phi(X_{t-1}/s_x) X_{t-1}``
    to the normalizer and moves by its inverse times the GM estimating
    function.
    """
    _check_cg(C_g)
    series = np.asarray(series, dtype=float)
    n = len(series) - 1
    if n < 1:
        raise ValueError("need X_0 and at least one observation")
    f = phi.scalar()
    sx, sr = float(scales.s_x), float(scales.s_r)
    theta = float(theta0)
    gamma = float(Gamma0)
    xs = series.tolist()
    thetas = np.empty((n, 1))
    gammas = np.empty((n, 1, 1))
    for i in range(n):
        xp, x = xs[i], xs[i + 1]
        weight = sx * f(xp / sx)
        gamma += C_g * weight * xp
        if not gamma > SCALAR_FLOOR:
            raise DegenerateNormalizer(f"normalizer {gamma!r}", step=i + 1)
        theta += weight * sr * f((x - theta * xp) / sr) / gamma
        if not math.isfinite(theta):
            raise NonFiniteUpdate(f"estimate became {theta}", step=i + 1)
        thetas[i, 0] = theta
        gammas[i, 0, 0] = gamma
    return Trajectory(np.arange(1, n + 1), thetas, gammas, np.array([float(theta0)]))
