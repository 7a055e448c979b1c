import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from recest.errors import DegenerateNormalizer, NonPositiveCg, ZeroScale
from recest.models import ar_likelihood_run, ar_simulate, gaussian_ar_model
from recest.robust import (
    PsiFunction,
    ScaleEstimates,
    c_g_hampel,
    c_g_hampel_normal,
    c_g_huber,
    c_g_huber_normal,
    gm_normalizer,
    gm_recursion,
    hampel,
    huber,
    location_psi,
    mad_scale,
    mad_scale_or_floor,
    scale_floor,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)


def erf_mass(k):
    """``P(|Z| <= k)`` for a standard normal, in high precision."""
    return mpmath.erf(mpmath.mpf(k) / mpmath.sqrt(2))


# ---------------------------------------------------------------- psi functions


@pytest.mark.parametrize("x,expected", [(-0.5, -0.5), (2.5, 1.8), (1.8, 1.8), (-7.0, -1.8)])
def test_huber_values(x, expected):
    assert huber(x, 1.8) == expected


@pytest.mark.parametrize("x,expected", [(1.0, 1.0), (3.0, 1.8 * 1.0 / 2.2), (5.0, 0.0), (-3.0, -1.8 / 2.2)])
def test_hampel_values(x, expected):
    assert hampel(x, 1.8, 4.0) == pytest.approx(expected, abs=1e-15)


def test_hampel_hand_value():
    assert hampel(3.0, 1.8, 4.0) == pytest.approx(0.818182, abs=1e-6)


def test_vectorised():
    x = np.array([-5.0, -1.0, 0.0, 3.0])
    np.testing.assert_array_equal(huber(x, 1.8), [-1.8, -1.0, 0.0, 1.8])
    np.testing.assert_allclose(hampel(x, 1.8, 4.0), [0.0, -1.0, 0.0, 1.8 / 2.2])


@given(finite)
def test_oddness(x):
    assert huber(-x, 1.8) == -huber(x, 1.8)
    assert hampel(-x, 1.8, 4.0) == -hampel(x, 1.8, 4.0)


@given(finite)
def test_boundedness(x):
    assert abs(huber(x, 1.8)) <= 1.8
    assert abs(hampel(x, 1.8, 4.0)) <= 1.8
    if abs(x) >= 4.0:
        assert hampel(x, 1.8, 4.0) == 0.0


@pytest.mark.parametrize("point", [1.8, -1.8, 4.0, -4.0])
def test_continuity(point):
    h = 1e-13
    for f in (lambda x: huber(x, 1.8), lambda x: hampel(x, 1.8, 4.0)):
        assert abs(f(point - h) - f(point + h)) < 1e-12


@given(finite)
def test_scalar_twin_matches(x):
    for phi in (PsiFunction("huber", c=1.3), PsiFunction("hampel", alpha=1.8, beta=4.0)):
        assert phi.scalar()(x) == pytest.approx(phi(x), abs=1e-15)


def test_psi_validation():
    with pytest.raises(ValueError):
        huber(1.0, 0.0)
    with pytest.raises(ValueError):
        hampel(1.0, 2.0, 2.0)
    with pytest.raises(ValueError):
        PsiFunction("hampel", alpha=4.0, beta=1.8)
    with pytest.raises(ValueError):
        PsiFunction("tukey")


def test_psi_bound():
    assert PsiFunction("huber", c=2.0).bound == 2.0
    assert PsiFunction("hampel", alpha=1.5, beta=3.0).bound == 1.5


# ---------------------------------------------------------------- scale


def test_mad_hand_value():
    assert mad_scale([1.0, -2.0, 3.0]) == pytest.approx(2.0 / 0.6745, rel=1e-15)
    assert mad_scale([1.0, -2.0, 3.0]) == pytest.approx(2.96516, abs=1e-5)


def test_mad_constant_magnitude():
    assert mad_scale([-3.5, 3.5, 3.5]) == pytest.approx(3.5 / 0.6745)


def test_mad_consistency():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert abs(mad_scale(x) - 1.0) < 0.02


def test_zero_scale_and_floor():
    with pytest.raises(ZeroScale):
        mad_scale([0.0, 0.0, 5.0])
    assert scale_floor([0.0, 0.0, 5.0]) == pytest.approx(6e-8)
    assert mad_scale_or_floor([0.0, 0.0, 5.0]) == pytest.approx(6e-8)


def test_scale_estimates_positive():
    with pytest.raises(ValueError):
        ScaleEstimates(0.0, 1.0)


# ---------------------------------------------------------------- C_g


@pytest.mark.parametrize("s_r", [1.0, 0.3, 2.7])
def test_cg_huber_normal_oracle(s_r):
    oracle = float(erf_mass("1.8"))
    assert oracle == pytest.approx(0.928139, abs=1e-6)
    assert abs(c_g_huber(1.8, s_r) - oracle) < 1e-8
    assert abs(c_g_huber(1.8, s_r) - c_g_huber_normal(1.8)) < 1e-8


def test_cg_huber_total_mass():
    assert abs(c_g_huber(10.0, 1.0) - 1.0) < 1e-8


def test_cg_huber_monotone():
    values = [c_g_huber(c, 1.0) for c in np.linspace(0.2, 4.0, 12)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_cg_huber_custom_density():
    # uniform on [-1, 1]: mass of [-c s, c s] is c s for c s <= 1
    g = lambda x: 0.5 if abs(x) <= 1 else 0.0  # noqa: E731
    assert c_g_huber(0.5, 1.0, g) == pytest.approx(0.5, abs=1e-10)


def test_cg_hampel_oracle():
    a, b = mpmath.mpf("1.8"), mpmath.mpf(4)
    oracle = float(erf_mass(a) - a / (b - a) * (erf_mass(b) - erf_mass(a)))
    assert oracle == pytest.approx(0.8693961198, abs=1e-10)
    assert abs(c_g_hampel(1.8, 4.0, 1.0) - oracle) < 1e-8
    assert abs(c_g_hampel(1.8, 4.0, 2.5) - oracle) < 1e-8
    assert abs(c_g_hampel_normal(1.8, 4.0) - oracle) < 1e-12


def test_cg_hampel_narrow_band_finite():
    v = c_g_hampel(1.8, 1.8 + 1e-9, 1.0)
    assert math.isfinite(v)
    assert v == pytest.approx(c_g_huber_normal(1.8) - 1.8 * 2 * math.exp(-1.62) / math.sqrt(2 * math.pi), abs=1e-4)


def test_cg_hampel_rejects_degenerate():
    with pytest.raises(ValueError):
        c_g_hampel(1.8, 1.8, 1.0)


def test_psi_function_cg_dispatch():
    assert PsiFunction("huber", c=1.8).c_g(1.0) == pytest.approx(c_g_huber_normal(1.8), abs=1e-10)
    assert PsiFunction("hampel").c_g(1.0) == pytest.approx(c_g_hampel_normal(1.8, 4.0), abs=1e-10)


# ---------------------------------------------------------------- GM recursion


def test_gm_reduces_to_least_squares():
    x = 0.1 * ar_simulate(gaussian_ar_model([0.5]), 200, 50, np.random.default_rng(4))
    assert np.max(np.abs(x)) < 1.8
    phi = PsiFunction("huber", c=1.8)
    gm = gm_recursion(x, phi, ScaleEstimates(1.0, 1.0), 1.0, 0.2, Gamma0=0.01)
    ls = ar_likelihood_run(gaussian_ar_model([0.0]), [0.2], x, I0=[[0.01]])
    np.testing.assert_allclose(gm.theta, ls.theta, rtol=1e-12, atol=1e-14)


def test_gm_zero_residual_fixed_point():
    theta = 0.6
    x = 2.0 * theta ** np.arange(15)
    for phi in (PsiFunction("huber"), PsiFunction("hampel")):
        traj = gm_recursion(x, phi, ScaleEstimates(1.0, 1.0), 0.9, theta, Gamma0=0.0)
        np.testing.assert_allclose(traj.theta[:, 0], theta, atol=1e-15)


def test_gm_large_c_approaches_least_squares():
    x = ar_simulate(gaussian_ar_model([0.6]), 300, 100, np.random.default_rng(12))
    scales = ScaleEstimates(mad_scale(x[:30]), 1.0)
    runs = []
    for c in (10.0, 1e4):
        phi = PsiFunction("huber", c=c)
        runs.append(gm_recursion(x, phi, scales, phi.c_g(scales.s_r), 0.0, Gamma0=1.0).theta)
    assert np.max(np.abs(runs[0] - runs[1])) < 1e-3


def test_gm_engine_equivalence():
    from recest.core import run
    from recest.robust import gm_estimating_function

    x = ar_simulate(gaussian_ar_model([0.6]), 120, 50, np.random.default_rng(5))
    phi, scales = PsiFunction("hampel"), ScaleEstimates(1.3, 0.9)
    C_g = phi.c_g(scales.s_r)
    a = gm_recursion(x, phi, scales, C_g, 0.1, Gamma0=2.0)
    b = run(gm_estimating_function(phi, scales), gm_normalizer(phi, scales, C_g, 2.0), [0.1], x, presample=1)
    np.testing.assert_allclose(a.theta, b.theta, rtol=1e-12)


def test_gm_rejects_nonpositive_cg():
    with pytest.raises(NonPositiveCg):
        gm_recursion([1.0, 2.0], PsiFunction("huber"), ScaleEstimates(1.0, 1.0), 0.0, 0.0)
    with pytest.raises(NonPositiveCg):
        gm_normalizer(PsiFunction("huber"), ScaleEstimates(1.0, 1.0), -0.5)


def test_gm_degenerate_normalizer():
    with pytest.raises(DegenerateNormalizer) as info:
        gm_recursion([0.0, 1.0, 2.0], PsiFunction("huber"), ScaleEstimates(1.0, 1.0), 1.0, 0.0)
    assert info.value.step == 1


def test_location_psi():
    psi = location_psi(PsiFunction("huber", c=1.0))
    assert psi(1, np.array([0.5]), 3.0, None)[0] == 1.0
