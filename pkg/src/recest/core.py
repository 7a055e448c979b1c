"""Generic recursive estimation engine.

The estimator is

    theta_t = theta_{t-1} + Gamma_t(theta_{t-1})^{-1} psi_t(theta_{t-1})

where ``psi`` is a sequence of estimating functions and ``Gamma`` a
predictable matrix process.  Observations are held in one in-memory array;
step ``t`` reads observation ``series[presample + t - 1]`` and sees the
prefix ``series[:presample + t - 1]`` as its history.  The first
``presample`` observations are history only (AR regressor windows, the
``X_0`` of a Markov chain).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from .errors import (
    EstimationError,
    InconsistentLinearStatistic,
    NonFiniteUpdate,
    SingularMatrix,
)

PIVOT_RTOL = 1e-12
SMALL_SYSTEM = 12

REEVALUATE = "reevaluate"
ACCUMULATE = "accumulate"


def solve_linear(A, b) -> np.ndarray:
    """Solve ``A x = b`` by Gaussian elimination with partial pivoting.

    Raises SingularMatrix when a pivot is smaller than ``1e-12`` times the
    largest absolute entry of ``A``.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.shape == (1, 1) and b.shape == (1,):
        a = float(A[0, 0])
        if a == 0.0 or not math.isfinite(a):
            raise SingularMatrix(f"scalar normalizer is {a}")
        return b / a
    m = b.shape[0] if b.ndim else 1
    if A.shape != (m, m):
        raise ValueError(f"shape mismatch: A is {A.shape}, b has length {m}")
    if m <= SMALL_SYSTEM:
        rows = A.tolist()
        flat = [abs(v) for r in rows for v in r]
        if not all(map(math.isfinite, flat)):
            raise SingularMatrix("non-finite entries in matrix")
        scale = max(flat)
        if scale == 0.0:
            raise SingularMatrix("zero matrix")
        return np.array(_eliminate_small(rows, b.reshape(m).tolist(), PIVOT_RTOL * scale))
    A = A.copy()
    b = b.copy()
    scale = float(np.max(np.abs(A)))
    if not math.isfinite(scale):
        raise SingularMatrix("non-finite entries in matrix")
    if scale == 0.0:
        raise SingularMatrix("zero matrix")
    tol = PIVOT_RTOL * scale
    for k in range(m):
        p = k + int(np.argmax(np.abs(A[k:, k])))
        if abs(A[p, k]) < tol:
            raise SingularMatrix(f"pivot {A[p, k]:.3e} below threshold {tol:.3e}")
        if p != k:
            A[[k, p]] = A[[p, k]]
            b[[k, p]] = b[[p, k]]
        f = A[k + 1:, k] / A[k, k]
        A[k + 1:, k:] -= np.outer(f, A[k, k:])
        b[k + 1:] -= f * b[k]

    x = np.empty(m)
    for k in range(m - 1, -1, -1):
        x[k] = (b[k] - A[k, k + 1:] @ x[k + 1:]) / A[k, k]
    return x


def _eliminate_small(a: list, b: list, tol: float) -> list:
    # same elimination on nested lists; numpy call overhead dominates for small m
    m = len(b)
    for k in range(m):
        p = max(range(k, m), key=lambda i: abs(a[i][k]))
        if abs(a[p][k]) < tol:
            raise SingularMatrix(f"pivot {a[p][k]:.3e} below threshold {tol:.3e}")
        if p != k:
            a[k], a[p] = a[p], a[k]
            b[k], b[p] = b[p], b[k]
        rk, pk = a[k], a[k][k]
        for i in range(k + 1, m):
            ri = a[i]
            f = ri[k] / pk
            if f:
                for j in range(k, m):
                    ri[j] -= f * rk[j]
                b[i] -= f * b[k]
    x = [0.0] * m
    for k in range(m - 1, -1, -1):
        rk = a[k]
        acc = b[k]
        for j in range(k + 1, m):
            acc -= rk[j] * x[j]
        x[k] = acc / rk[k]
    return x


@dataclass(frozen=True)
class EstimatingFunction:
    """A sequence of estimating functions ``psi_t(theta, x_t; history)``.

    ``fn(t, theta, x, history)`` must return something reshapeable to a
    vector of length ``dim`` and must not look past ``x``.
    """

    dim: int
    fn: Callable[[int, np.ndarray, Any, np.ndarray], Any]
    martingale_difference: bool = False
    name: str = ""
    # optional float-only twin of fn for dim == 1: (t, theta: float, x: float, history) -> float
    scalar: Callable[[int, float, float, np.ndarray], float] | None = None

    def __call__(self, t: int, theta, x, history) -> np.ndarray:
        v = self.fn(t, theta, x, history)
        if type(v) is np.ndarray and v.shape == (self.dim,):
            return v
        return np.asarray(v, dtype=float).reshape(self.dim)


def _identity_transform(t, gamma):
    return gamma


@dataclass(frozen=True)
class Normalizer:
    """A predictable normalizing matrix process.

    The cumulative matrix is ``transform(t, initial + sum_{s<=t} increment(s, theta, history_s))``.
    ``increment(t, theta, history)`` only sees observations before step t.
    ``theta_free`` marks increments that ignore ``theta``; the engine then
    accumulates them in O(1) per step.  ``cumulative_fn`` optionally
    evaluates the untransformed sum directly (for theta-dependent
    normalizers with a cheap closed form).
    """

    dim: int
    increment: Callable[[int, np.ndarray, np.ndarray], Any]
    initial: np.ndarray | None = None
    theta_free: bool = False
    transform: Callable[[int, np.ndarray], np.ndarray] = _identity_transform
    cumulative_fn: Callable[[int, np.ndarray, np.ndarray], Any] | None = None
    name: str = ""
    # optional float-only twin of increment for theta-free, dim == 1 normalizers
    scalar_increment: Callable[[int, np.ndarray], float] | None = None

    def __post_init__(self):
        init = np.zeros((self.dim, self.dim)) if self.initial is None else self.initial
        init = np.array(init, dtype=float).reshape(self.dim, self.dim)
        init.setflags(write=False)
        object.__setattr__(self, "initial", init)

    def delta(self, t: int, theta, history) -> np.ndarray:
        v = self.increment(t, theta, history)
        if type(v) is np.ndarray and v.shape == (self.dim, self.dim):
            return v
        return np.asarray(v, dtype=float).reshape(self.dim, self.dim)

    def raw_cumulative(self, t: int, theta, history) -> np.ndarray:
        """Untransformed ``initial + sum_{s<=t} increment``, evaluated at ``theta``."""
        if self.cumulative_fn is not None:
            return self.initial + np.asarray(
                self.cumulative_fn(t, theta, history), dtype=float
            ).reshape(self.dim, self.dim)
        n0 = len(history) - (t - 1)
        acc = self.initial.copy()
        for s in range(1, t + 1):
            acc += self.delta(s, theta, history[: n0 + s - 1])
        return acc

    def finish(self, t: int, raw: np.ndarray) -> np.ndarray:
        return self.transform(t, raw)

    def cumulative(self, t: int, theta, history) -> np.ndarray:
        return self.finish(t, self.raw_cumulative(t, theta, history))


@dataclass
class Trajectory:
    """Time-indexed record of one run: ``t``, ``theta[t]`` and ``gamma[t]``."""

    t: np.ndarray
    theta: np.ndarray
    gamma: np.ndarray
    theta0: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def final(self) -> np.ndarray:
        return self.theta[-1]

    def rows(self):
        """Yield ``(t, component, theta_hat)`` tuples in time order."""
        for t, th in zip(self.t, self.theta):
            for j, v in enumerate(th):
                yield int(t), j, float(v)


class State(NamedTuple):
    t: int
    theta: np.ndarray
    gamma: np.ndarray
    acc: np.ndarray  # untransformed cumulative normalizer


def initial_state(normalizer: Normalizer, theta0) -> State:
    theta0 = np.array(theta0, dtype=float).reshape(normalizer.dim)
    acc = normalizer.initial.copy()
    return State(0, theta0, normalizer.finish(0, acc), acc)


def _advance(t, theta, acc, psi, normalizer, x, history, mode):
    if normalizer.theta_free or mode == ACCUMULATE:
        acc = acc + normalizer.delta(t, theta, history)
    elif mode == REEVALUATE:
        acc = normalizer.raw_cumulative(t, theta, history)
    else:
        raise ValueError(f"unknown normalizer mode {mode!r}")
    gamma = normalizer.finish(t, acc)
    value = psi(t, theta, x, history)
    if gamma.shape == (1, 1):
        a = gamma[0, 0]
        if a == 0.0 or not math.isfinite(a):
            raise SingularMatrix(f"scalar normalizer is {float(a)}", step=t)
        new = theta + value / a
    else:
        try:
            new = theta + solve_linear(gamma, value)
        except SingularMatrix as exc:
            exc.step = t
            raise
    if not all(map(math.isfinite, new)):
        raise NonFiniteUpdate(f"estimating function gave {value}, estimate became {new}", step=t)
    return new, gamma, acc


def step(state: State, psi: EstimatingFunction, normalizer: Normalizer, x, history,
         mode: str = REEVALUATE) -> State:
    """Advance the recursion by one observation.

    Gamma_t is formed from ``history`` alone before ``x`` is read.  With
    ``mode="reevaluate"`` a theta-dependent normalizer is re-summed at the
    current estimate; with ``mode="accumulate"`` each increment is taken at
    the estimate current when it was added.
    """
    t = state.t + 1
    new, gamma, acc = _advance(t, state.theta, state.acc, psi, normalizer, x, history, mode)
    return State(t, new, gamma, acc)


def _check_series(series, presample: int) -> np.ndarray:
    series = np.asarray(series, dtype=float)
    if presample < 0:
        raise ValueError("presample must be non-negative")
    if len(series) <= presample:
        raise ValueError("series has no observations after the presample")
    return series


def _run_scalar(psi, inc, theta, acc, series, presample, thetas, gammas):
    xs = series.tolist()
    for i in range(len(xs) - presample):
        t, k = i + 1, presample + i
        history = series[:k]
        acc = acc + inc(t, history)
        if acc == 0.0 or not math.isfinite(acc):
            raise SingularMatrix(f"scalar normalizer is {float(acc)}", step=t)
        value = psi(t, theta, xs[k], history)
        theta = theta + value / acc
        if not math.isfinite(theta):
            raise NonFiniteUpdate(f"estimating function gave {value}, estimate became {theta}", step=t)
        thetas[i, 0] = theta
        gammas[i, 0, 0] = acc


def run(psi: EstimatingFunction, normalizer: Normalizer, theta0, series,
        presample: int = 0, mode: str = REEVALUATE, fast: bool = True) -> Trajectory:
    """Fold :func:`step` over ``series`` and return the trajectory.

    Failures are re-raised with ``.step`` set to the failing step index.
    Scalar theta-free problems whose estimating function and normalizer
    both provide float-only twins run on plain floats (same arithmetic,
    identical results); ``fast=False`` forces the general path.
    """
    if psi.dim != normalizer.dim:
        raise ValueError("estimating function and normalizer dimensions differ")
    series = _check_series(series, presample)
    n = len(series) - presample
    m = psi.dim
    thetas = np.empty((n, m))
    gammas = np.empty((n, m, m))
    state = initial_state(normalizer, theta0)
    theta, acc = state.theta, state.acc
    start = state.theta.copy()
    if (fast and m == 1 and psi.scalar is not None and normalizer.theta_free
            and normalizer.scalar_increment is not None
            and normalizer.transform is _identity_transform):
        _run_scalar(psi.scalar, normalizer.scalar_increment, float(theta[0]), float(acc[0, 0]),
                    series, presample, thetas, gammas)
        return Trajectory(np.arange(1, n + 1), thetas, gammas, start)
    for i in range(n):
        k = presample + i
        theta, gammas[i], acc = _advance(i + 1, theta, acc, psi, normalizer, series[k], series[:k], mode)
        thetas[i] = theta
    return Trajectory(np.arange(1, n + 1), thetas, gammas, start)


def linear_statistic(theta_true, psi: EstimatingFunction, normalizer: Normalizer, series,
                     presample: int = 0, rtol: float = 1e-10) -> Trajectory:
    """The linear statistic ``theta + Gamma_t(theta)^{-1} sum_{s<=t} psi_s(theta)``.

    Computed twice, by direct summation and by the recursion

        D_t = D_{t-1} - Gamma_t^{-1} dGamma_t D_{t-1} + Gamma_t^{-1} psi_t(theta),  D_0 = 0,

    and the two are required to agree to ``rtol`` (scaled by ``max(1, |theta*|)``).
    Needs the true parameter, so it is a diagnostic only.
    """
    series = _check_series(series, presample)
    n = len(series) - presample
    m = psi.dim
    theta = np.array(theta_true, dtype=float).reshape(m)
    acc = normalizer.initial.copy()
    g_prev = normalizer.finish(0, acc)
    total = np.zeros(m)
    d = np.zeros(m)
    thetas = np.empty((n, m))
    gammas = np.empty((n, m, m))
    for i in range(n):
        t = i + 1
        k = presample + i
        history = series[:k]
        acc = acc + normalizer.delta(t, theta, history)
        g = normalizer.finish(t, acc)
        value = psi(t, theta, series[k], history)
        total += value
        try:
            closed = theta + solve_linear(g, total)
            d = d - solve_linear(g, (g - g_prev) @ d) + solve_linear(g, value)
        except SingularMatrix as exc:
            exc.step = t
            raise
        recursive = theta + d
        if np.any(np.abs(closed - recursive) > rtol * np.maximum(1.0, np.abs(closed))):
            raise InconsistentLinearStatistic(
                f"step {t}: closed form {closed} vs recursion {recursive}"
            )
        thetas[i] = closed
        gammas[i] = g
        g_prev = g
    return Trajectory(np.arange(1, n + 1), thetas, gammas, theta.copy())
