"""Quadrature for conditional expectations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import MaxDepthExceeded, NonFiniteIntegrand

GH_NODES = 40
SIMPSON_TOL = 1e-9
TRUNCATION_SD = 10.0
MAX_DEPTH = 50


@lru_cache(maxsize=None)
def _hermgauss(n: int):
    x, w = np.polynomial.hermite.hermgauss(n)
    # Probabilists' form: E f(Z), Z ~ N(0, 1) = sum w_i f(sqrt(2) x_i) / sqrt(pi)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


def gauss_hermite(f, mean: float, sd: float, n: int = GH_NODES):
    """Approximate ``E f(Z)`` for ``Z ~ N(mean, sd**2)`` with ``n`` nodes.

    ``f`` may return scalars or arrays; the result has the shape of one
    evaluation.
    """
    if not sd > 0:
        raise ValueError("sd must be positive")
    if n < 2:
        raise ValueError("need at least two nodes")
    nodes, weights = _hermgauss(n)
    acc = None
    for z, w in zip(mean + sd * nodes, weights):
        v = np.asarray(f(z), dtype=float)
        if not np.all(np.isfinite(v)):
            raise NonFiniteIntegrand(f"integrand is {v} at {z}")
        acc = w * v if acc is None else acc + w * v
    return acc if acc.ndim else float(acc)


def adaptive_simpson(f, a: float, b: float, tol: float = SIMPSON_TOL,
                     max_depth: int = MAX_DEPTH):
    """Adaptive Simpson rule on ``[a, b]``.

    An interval is accepted when ``|S_left + S_right - S_whole| <= 15 tol``
    (tolerance halves on each bisection); accepted pieces get the
    Richardson correction.  Works for vector-valued ``f``.
    """
    if not a < b:
        raise ValueError("need a < b")
    if not tol > 0:
        raise ValueError("tol must be positive")

    def ev(x):
        v = np.asarray(f(x), dtype=float)
        if not np.all(np.isfinite(v)):
            raise NonFiniteIntegrand(f"integrand is {v} at {x}")
        return v

    fa, fm, fb = ev(a), ev(0.5 * (a + b)), ev(b)
    if fa.ndim == 0 and fm.ndim == 0 and fb.ndim == 0:
        return _simpson_scalar(f, a, b, float(fa), float(fm), float(fb), tol, max_depth)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    total = np.zeros_like(whole)
    # explicit stack: (a, b, fa, fm, fb, whole, tol, depth)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    while stack:
        a_, b_, fa_, fm_, fb_, whole_, tol_, depth = stack.pop()
        m = 0.5 * (a_ + b_)
        lm, rm = 0.5 * (a_ + m), 0.5 * (m + b_)
        flm, frm = ev(lm), ev(rm)
        left = (m - a_) / 6.0 * (fa_ + 4.0 * flm + fm_)
        right = (b_ - m) / 6.0 * (fm_ + 4.0 * frm + fb_)
        err = left + right - whole_
        if np.max(np.abs(err)) <= 15.0 * tol_:
            total = total + left + right + err / 15.0
            continue
        if depth + 1 >= max_depth:
            raise MaxDepthExceeded(f"no convergence on [{a_}, {b_}] after {max_depth} bisections")
        stack.append((m, b_, fm_, frm, fb_, right, 0.5 * tol_, depth + 1))
        stack.append((a_, m, fa_, flm, fm_, left, 0.5 * tol_, depth + 1))
    return total if total.ndim else float(total)


def _simpson_scalar(f, a, b, fa, fm, fb, tol, max_depth):
    def ev(x):
        v = float(f(x))
        if not math.isfinite(v):
            raise NonFiniteIntegrand(f"integrand is {v} at {x}")
        return v

    total = 0.0
    stack = [(a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 0)]
    while stack:
        a_, b_, fa_, fm_, fb_, whole_, tol_, depth = stack.pop()
        m = 0.5 * (a_ + b_)
        flm, frm = ev(0.5 * (a_ + m)), ev(0.5 * (m + b_))
        left = (m - a_) / 6.0 * (fa_ + 4.0 * flm + fm_)
        right = (b_ - m) / 6.0 * (fm_ + 4.0 * frm + fb_)
        err = left + right - whole_
        if abs(err) <= 15.0 * tol_:
            total += left + right + err / 15.0
            continue
        if depth + 1 >= max_depth:
            raise MaxDepthExceeded(f"no convergence on [{a_}, {b_}] after {max_depth} bisections")
        stack.append((m, b_, fm_, frm, fb_, right, 0.5 * tol_, depth + 1))
        stack.append((a_, m, fa_, flm, fm_, left, 0.5 * tol_, depth + 1))
    return total


@dataclass(frozen=True)
class QuadratureRule:
    """How to integrate against a density centred at ``mean`` with spread ``sd``.

    ``kind`` is ``"gauss_hermite"`` (exact for normal densities up to the
    node count) or ``"adaptive_simpson"`` over ``mean +/- truncation * sd``.
    """

    kind: str = "gauss_hermite"
    nodes: int = GH_NODES
    tol: float = SIMPSON_TOL
    truncation: float = TRUNCATION_SD

    def __post_init__(self):
        if self.kind not in ("gauss_hermite", "adaptive_simpson"):
            raise ValueError(f"unknown quadrature kind {self.kind!r}")
        if self.nodes < 2 or not self.tol > 0 or not self.truncation > 0:
            raise ValueError("invalid quadrature parameters")

    def normal_expectation(self, f, mean: float, sd: float):
        """``E f(Z)``, ``Z ~ N(mean, sd**2)``."""
        if self.kind == "gauss_hermite":
            return gauss_hermite(f, mean, sd, self.nodes)
        return self.density_expectation(
            f, lambda z: math.exp(-0.5 * ((z - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi)),
            mean, sd,
        )

    def density_expectation(self, f, density, mean: float, sd: float):
        """``int f(z) density(z) dz`` over the truncated domain (Simpson)."""
        lo, hi = mean - self.truncation * sd, mean + self.truncation * sd
        return adaptive_simpson(lambda z: np.asarray(f(z), dtype=float) * density(z), lo, hi, self.tol)


GAUSS_HERMITE = QuadratureRule()
