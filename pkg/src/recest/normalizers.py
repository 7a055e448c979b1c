"""Constructors for the recommended normalizing sequences."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .core import EstimatingFunction, Normalizer
from .diagnostics import conditional_drift


def fisher_normalizer(model, initial=None) -> Normalizer:
    """Conditional Fisher information: increments ``i_t(theta)``."""
    info = getattr(model, "scalar_fisher", None)
    return Normalizer(
        model.dim,
        model.fisher_increment,
        initial=initial,
        theta_free=model.fisher_theta_free,
        cumulative_fn=getattr(model, "fisher_cumulative", None),
        name="fisher",
        scalar_increment=None if info is None else (lambda t, history: info),
    )


def default_fd_step(theta) -> np.ndarray:
    return 1e-5 * (1.0 + np.abs(np.asarray(theta, dtype=float)))


def bprime_normalizer(psi: EstimatingFunction, model, fd_step: float | None = None,
                      derivative=None, theta_free: bool = False, initial=None) -> Normalizer:
    """Increments ``-d/du b_t(theta, u)`` at ``u = 0``.

    ``b_t(theta, u) = E_theta{psi_t(theta + u) | F_{t-1}}`` is differentiated
    by central differences (step ``fd_step``, default ``1e-5 (1 + |theta|)``)
    unless ``derivative(t, theta, history)`` supplies the Jacobian.
    """
    m = psi.dim
    if fd_step is not None and not fd_step > 0:
        raise ValueError("fd_step must be positive")

    def increment(t, theta, history):
        theta = np.asarray(theta, dtype=float).reshape(m)
        if derivative is not None:
            return -np.asarray(derivative(t, theta, history), dtype=float).reshape(m, m)
        steps = default_fd_step(theta) if fd_step is None else np.full(m, fd_step)
        jac = np.empty((m, m))
        for j in range(m):
            u = np.zeros(m)
            u[j] = steps[j]
            up = conditional_drift(model, psi, theta, u, history, t, closed_form=False)
            down = conditional_drift(model, psi, theta, -u, history, t, closed_form=False)
            jac[:, j] = (np.asarray(up) - np.asarray(down)).reshape(m) / (2.0 * steps[j])
        return -jac

    return Normalizer(m, increment, initial=initial, theta_free=theta_free, name="bprime")


def score_covariance_normalizer(psi: EstimatingFunction, model, theta_free: bool = False,
                                initial=None) -> Normalizer:
    """Increments ``E_theta{psi_t(theta) l_t(theta)^T | F_{t-1}}``."""
    m = psi.dim

    def increment(t, theta, history):
        theta = np.asarray(theta, dtype=float).reshape(m)
        return model.cond_expect(
            lambda z: np.outer(psi(t, theta, z, history), model.cond_score(theta, z, history)),
            theta, history,
        )

    return Normalizer(m, increment, initial=initial, theta_free=theta_free, name="score_covariance")


def tuned(base: Normalizer, C=None, c=None, horizon: int = 0) -> Normalizer:
    """``C + c_t Gamma_t`` with ``c_t = 1`` for ``t > horizon``.

    ``c`` is a callable ``t -> c_t`` (ignored past ``horizon``); ``None``
    means ``c_t = 1`` throughout.
    """
    m = base.dim
    C = np.zeros((m, m)) if C is None else np.array(C, dtype=float).reshape(m, m)
    inner = base.transform

    def transform(t, raw):
        ct = 1.0 if c is None or t > horizon else float(c(t))
        if ct < 0:
            raise ValueError(f"tuning weight c_{t} = {ct} is negative")
        return C + ct * inner(t, raw)

    return replace(base, transform=transform, name=f"tuned({base.name})")
