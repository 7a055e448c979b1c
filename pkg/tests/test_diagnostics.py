import math

import numpy as np
import pytest
from scipy import stats

from recest.core import EstimatingFunction, linear_statistic, run
from recest.diagnostics import (
    condition_E_probe,
    conditional_drift,
    h_sqrt,
    j_psi,
    lemma_terms,
    linearity_residual,
    normality_check,
    quantile_decrease,
    r_field,
    sqrt_t_identity,
)
from recest.errors import GridMismatch, InsufficientSamples
from recest.models import (
    ar_fisher_normalizer,
    ar_simulate,
    galton_watson_poisson,
    gaussian_ar_model,
    linear_procedure,
    linear_run,
    logistic_location_model,
    normal_location_model,
)
from recest.normalizers import bprime_normalizer, fisher_normalizer

EMPTY = np.empty(0)


# ---------------------------------------------------------------- residuals


def test_residual_zero_for_linear_case():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(300)
    spec = linear_procedure(1, lambda t, z, h: 2.0 * z, lambda t, h: 1.0 + 0.5 * (h[-1] ** 2 if len(h) else 1.0))
    traj = linear_run(spec, [0.3], x)
    lin = linear_statistic([0.3], spec.psi, spec.normalizer, x)
    r = linearity_residual(traj, lin, sqrt_t_identity(), x)
    assert np.max(np.abs(r)) <= 1e-10


def test_residual_identical_trajectories():
    x = np.random.default_rng(1).standard_normal(20)
    model = normal_location_model(1.0)
    traj = run(model.score, fisher_normalizer(model), [0.0], x)
    assert np.all(linearity_residual(traj, traj, sqrt_t_identity(), x) == 0.0)


def test_residual_grid_mismatch():
    model = normal_location_model(1.0)
    a = run(model.score, fisher_normalizer(model), [0.0], np.ones(5))
    b = run(model.score, fisher_normalizer(model), [0.0], np.ones(6))
    with pytest.raises(GridMismatch):
        linearity_residual(a, b, sqrt_t_identity(), np.ones(6))


# ---------------------------------------------------------------- drift and R


@pytest.mark.parametrize("model", [normal_location_model(1.0), logistic_location_model(1.0)],
                         ids=["normal", "logistic"])
def test_drift_zero_at_truth(model):
    assert abs(conditional_drift(model, model.score, [0.2], [0.0])[0]) <= 1e-8


def test_drift_mean_psi_is_minus_u():
    model = normal_location_model(1.4)
    psi = EstimatingFunction(1, lambda t, theta, x, h: x - theta)
    for u in (-2.0, -0.1, 0.7):
        assert conditional_drift(model, psi, [0.5], [u])[0] == pytest.approx(-u, abs=1e-12)


def test_gw_drift_closed_form_vs_quadrature():
    model = galton_watson_poisson()
    hist = np.array([4.0, 30.0])
    lam = math.log(1.5)
    for u in (-0.3, 0.05, 0.4):
        closed = conditional_drift(model, model.score, [lam], [u], hist)[0]
        quad = conditional_drift(model, model.score, [lam], [u], hist, closed_form=False)[0]
        assert closed == pytest.approx(30.0 * (math.exp(lam) - math.exp(lam + u)), rel=1e-14)
        assert abs(closed - quad) <= 1e-6


def _shipped_cases():
    gw = galton_watson_poisson()
    ar = gaussian_ar_model([0.5, -0.2])
    for model in (normal_location_model(1.0), normal_location_model(3.0), logistic_location_model(0.7)):
        yield model, fisher_normalizer(model), [0.1], EMPTY
    yield gw, fisher_normalizer(gw), [math.log(1.5)], np.array([2.0, 7.0])
    yield ar, ar_fisher_normalizer(ar), [0.5, -0.2], np.array([0.3, -1.1, 0.8])


@pytest.mark.parametrize("case", list(_shipped_cases()), ids=["normal1", "normal3", "logistic", "gw", "ar2"])
def test_r_field_zero_at_u_zero(case):
    model, norm, theta, hist = case
    R = r_field(model, model.score, norm, theta, np.zeros(len(theta)), hist)
    assert np.max(np.abs(R)) <= 1e-8


def test_r_equals_drift_for_theta_free():
    model = normal_location_model(1.0)
    norm = fisher_normalizer(model)
    b = conditional_drift(model, model.score, [0.0], [0.8])
    np.testing.assert_array_equal(r_field(model, model.score, norm, [0.0], [0.8]), b)


def test_r_field_theta_dependent_ratio():
    model = galton_watson_poisson()
    norm = fisher_normalizer(model)
    hist = np.array([5.0, 8.0])
    lam, u = 0.2, 0.3
    R = r_field(model, model.score, norm, [lam], [u], hist, t=2)[0]
    b = conditional_drift(model, model.score, [lam], [u], hist)[0]
    assert R == pytest.approx(b * math.exp(lam) / math.exp(lam + u), rel=1e-14)


def test_monotone_drift_probe():
    model = normal_location_model(1.0)
    norm = fisher_normalizer(model)
    for u in np.linspace(-3, 3, 25):
        if u == 0:
            continue
        assert u * r_field(model, model.score, norm, [0.0], [u])[0] < 0


# ---------------------------------------------------------------- condition E


def test_condition_e_iid_constant():
    sigma = 2.0
    model = normal_location_model(sigma)
    rep = condition_E_probe(fisher_normalizer(model), sqrt_t_identity(), [0.0], np.zeros(200))
    np.testing.assert_allclose(rep.matrices[:, 0, 0], sigma ** 2, rtol=1e-13)
    assert rep.tail_deviation < 1e-12
    assert rep.eta[0, 0] == pytest.approx(4.0)


def test_condition_e_caef_constant():
    model = galton_watson_poisson()
    lam = math.log(1.5)
    x = model.simulate(lam, 10, 120, np.random.default_rng(2))
    rep = condition_E_probe(fisher_normalizer(model), h_sqrt(model), [lam], x, presample=1)
    np.testing.assert_allclose(rep.matrices[:, 0, 0], 1.0 / math.exp(lam), rtol=1e-8)


def test_condition_e_ar_deviation_shrinks():
    model = gaussian_ar_model([0.6])
    norm = ar_fisher_normalizer(model)
    devs = []
    for n in (200, 2000):
        per_rep = []
        for r in range(20):
            x = ar_simulate(model, n + 1, 100, np.random.default_rng(1000 + r))
            per_rep.append(condition_E_probe(norm, sqrt_t_identity(), [0.6], x, presample=1).tail_deviation)
        devs.append(np.median(per_rep))
    assert devs[1] < devs[0]


# ---------------------------------------------------------------- j_psi


def test_j_psi_score_is_information():
    model = normal_location_model(1.0)
    assert j_psi(model, model.score, [0.0])[0, 0] == pytest.approx(1.0, abs=1e-10)


def test_j_psi_mean_psi_is_variance():
    model = normal_location_model(1.5)
    psi = EstimatingFunction(1, lambda t, theta, x, h: x - theta)
    assert j_psi(model, psi, [0.3])[0, 0] == pytest.approx(2.25, abs=1e-10)


def test_j_psi_zero():
    model = normal_location_model(1.0)
    zero = EstimatingFunction(1, lambda t, theta, x, h: 0.0)
    assert j_psi(model, zero, [0.0])[0, 0] == 0.0


@pytest.mark.parametrize("model", [normal_location_model(0.5), logistic_location_model(1.0),
                                   logistic_location_model(2.0)], ids=["normal", "logistic1", "logistic2"])
def test_j_psi_coherence(model):
    theta = np.array([0.7])
    assert j_psi(model, model.score, theta)[0, 0] == pytest.approx(model.fisher(theta)[0, 0], abs=1e-6)


# ---------------------------------------------------------------- lemma terms, quantiles


def test_lemma_terms_vanish_for_mean():
    # linear psi, theta-free Gamma: drift term is identically 0, noise term too
    model = normal_location_model(1.0)
    x = np.random.default_rng(4).standard_normal(50)
    norm = fisher_normalizer(model)
    traj = run(model.score, norm, [0.5], x)
    terms = lemma_terms(model, model.score, norm, [0.0], traj, x)
    assert np.max(np.abs(terms["drift"])) < 1e-10
    assert np.max(np.abs(terms["noise"])) < 1e-10


def test_lemma_terms_nonlinear_shapes():
    model = logistic_location_model(1.0)
    x = model.sample([0.0], np.random.default_rng(5), 15)
    norm = bprime_normalizer(model.score, model, theta_free=True)
    traj = run(model.score, fisher_normalizer(model), [0.3], x)
    terms = lemma_terms(model, model.score, norm, [0.0], traj, x)
    assert terms["drift"].shape == (15, 1) and np.all(np.isfinite(terms["noise"]))


def test_quantile_decrease():
    out = quantile_decrease([3.0, 4.0, 5.0], [1.0, 2.0, 6.0])
    assert out[0.5] == (4.0, 2.0, True)
    assert out[0.9][2] is False


# ---------------------------------------------------------------- normality


def test_normality_on_target_samples():
    passes = 0
    for r in range(40):
        x = np.random.default_rng(r).standard_normal(500) * 2.0
        passes += normality_check(x, [[4.0]]).ks_pass
    assert passes >= 38


def test_normality_degenerate_input():
    rep = normality_check(np.zeros(200), [[1.0]])
    assert rep.ks_statistic[0] == pytest.approx(0.5, abs=1e-12)
    assert not rep.ks_pass


def test_normality_matches_scipy():
    x = np.random.default_rng(3).standard_normal((300, 2))
    rep = normality_check(x, np.eye(2))
    assert rep.ks_statistic[1] == pytest.approx(stats.kstest(x[:, 1], "norm").statistic)
    assert rep.ks_critical == pytest.approx(1.63 / math.sqrt(300))
    d = rep.to_dict()
    assert d["ks_pass"] == rep.ks_pass and d["n_samples"] == 300


def test_normality_needs_samples():
    with pytest.raises(InsufficientSamples):
        normality_check(np.zeros(10), [[1.0]])
