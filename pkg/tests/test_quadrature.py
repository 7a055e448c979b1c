import math

import mpmath
import numpy as np
import pytest

from recest.errors import MaxDepthExceeded, NonFiniteIntegrand
from recest.quadrature import GAUSS_HERMITE, QuadratureRule, adaptive_simpson, gauss_hermite


def test_gh_normalization():
    assert gauss_hermite(lambda z: 1.0, 0.3, 1.7) == pytest.approx(1.0, abs=1e-12)


def test_gh_first_moment():
    assert gauss_hermite(lambda z: z, 3.0, 2.0) == pytest.approx(3.0, abs=1e-10)


def test_gh_second_moment_20_nodes():
    assert gauss_hermite(lambda z: z * z, 0.0, 2.0, n=20) == pytest.approx(4.0, abs=1e-8)


def test_gh_fourth_moment():
    # E Z^4 = 3 sd^4
    assert gauss_hermite(lambda z: z ** 4, 0.0, 1.5) == pytest.approx(3 * 1.5 ** 4, rel=1e-12)


def test_gh_vector_valued():
    v = gauss_hermite(lambda z: np.array([1.0, z, z * z]), 1.0, 1.0)
    np.testing.assert_allclose(v, [1.0, 1.0, 2.0], atol=1e-12)


def test_gh_rejects_bad_args():
    with pytest.raises(ValueError):
        gauss_hermite(lambda z: z, 0.0, 0.0)
    with pytest.raises(ValueError):
        gauss_hermite(lambda z: z, 0.0, 1.0, n=1)


def test_gh_nonfinite():
    with pytest.raises(NonFiniteIntegrand):
        gauss_hermite(lambda z: math.inf, 0.0, 1.0)


def test_simpson_linear():
    assert adaptive_simpson(lambda x: x, 0.0, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_simpson_kink():
    tol = 1e-9
    assert abs(adaptive_simpson(abs, -1.0, 1.0, tol) - 1.0) <= tol


def test_simpson_normal_mass():
    oracle = float(mpmath.erf(mpmath.mpf("1.8") / mpmath.sqrt(2)))
    assert oracle == pytest.approx(0.928139, abs=1e-6)
    pdf = lambda x: math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)  # noqa: E731
    assert abs(adaptive_simpson(pdf, -1.8, 1.8, 1e-12) - oracle) < 1e-8


def test_simpson_vector_matches_scalar():
    f = lambda x: math.sin(3 * x) * math.exp(-x)  # noqa: E731
    s = adaptive_simpson(f, 0.0, 2.0, 1e-11)
    v = adaptive_simpson(lambda x: np.array([f(x), 2 * f(x)]), 0.0, 2.0, 1e-11)
    exact = float(mpmath.quad(lambda x: mpmath.sin(3 * x) * mpmath.exp(-x), [0, 2]))
    assert s == pytest.approx(exact, abs=1e-10)
    np.testing.assert_allclose(v, [exact, 2 * exact], atol=1e-9)


def test_simpson_max_depth():
    with pytest.raises(MaxDepthExceeded):
        adaptive_simpson(lambda x: math.sin(1.0 / x) if x else 0.0, 0.0, 1.0, 1e-15, max_depth=8)


def test_simpson_nonfinite():
    with pytest.raises(NonFiniteIntegrand):
        adaptive_simpson(lambda x: 1.0 / x if x else math.inf, 0.0, 1.0)


def test_simpson_bad_interval():
    with pytest.raises(ValueError):
        adaptive_simpson(lambda x: x, 1.0, 1.0)
    with pytest.raises(ValueError):
        adaptive_simpson(lambda x: x, 0.0, 1.0, tol=0.0)


def test_rule_kinds_agree_on_normal():
    simpson = QuadratureRule("adaptive_simpson", tol=1e-11)
    f = lambda z: z * z + math.cos(z)  # noqa: E731
    a = GAUSS_HERMITE.normal_expectation(f, 0.5, 1.3)
    b = simpson.normal_expectation(f, 0.5, 1.3)
    assert a == pytest.approx(b, abs=1e-9)


def test_rule_validation():
    with pytest.raises(ValueError):
        QuadratureRule("trapezoid")
    with pytest.raises(ValueError):
        QuadratureRule(nodes=1)
