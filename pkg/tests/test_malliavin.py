import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from steindiff.diffusion import family_model
from steindiff.errors import DomainError, ResolutionWarning, UnsupportedMode
from steindiff.malliavin import (ExpQuadraticForm, GaussianFunctional, MehlerConfig,
                                 QuadraticForm, aux_gaussian_integrals, composed,
                                 conditional_projection, load_functional_config,
                                 make_functional, mehler_scalar_product,
                                 sample_gaussian_vector, tilted_gaussian_moments)

EXACT_CASES = [
    ("chi_square", "chi_square"),
    ("exp_neg_half_sum", "uniform"),
    ("exp_neg_sum", "beta"),
    ("exp_single", "lognormal"),
    ("exp_quarter_sum_minus_one", "pareto"),
]


@pytest.mark.parametrize("fname,family", EXACT_CASES)
@given(seed=st.integers(0, 2**31))
def test_scalar_product_equals_half_coefficient(fname, family, seed):
    F = make_functional(fname)
    m = family_model(family)
    N, y = F.sample(50, seed)
    sp = mehler_scalar_product(F, N).value
    np.testing.assert_allclose(sp, 0.5 * m.a(y), rtol=1e-11, atol=1e-12)


@given(seed=st.integers(0, 2**31))
def test_laplace_quartets_give_half_squared_norm(seed):
    for name in ("product_pairs", "half_diff_squares"):
        F = make_functional(name)
        N, _ = F.sample(50, seed)
        sp = mehler_scalar_product(F, N).value
        np.testing.assert_allclose(sp, 0.5 * (N * N).sum(axis=1), rtol=1e-12)


def test_identity_functional_has_unit_scalar_product():
    F = make_functional("identity")
    N, _ = F.sample(10, 1)
    np.testing.assert_allclose(mehler_scalar_product(F, N).value, 1.0)


@pytest.mark.parametrize("fname", ["exp_quarter_sum_minus_one", "exp_single", "chi_square"])
def test_quadrature_order_converged(fname):
    F = make_functional(fname)
    N, _ = F.sample(200, 3)
    v64 = mehler_scalar_product(F, N, MehlerConfig(quad_nodes=64)).value
    v32 = mehler_scalar_product(F, N, MehlerConfig(quad_nodes=32)).value
    assert np.max(np.abs(v64 - v32) / np.maximum(1, np.abs(v64))) < 1e-9


@pytest.mark.parametrize("fname", ["exp_neg_half_sum", "exp_quarter_sum_minus_one",
                                   "product_pairs", "exp_single"])
def test_inner_monte_carlo_agrees_with_closed_form(fname):
    F = make_functional(fname)
    N, _ = F.sample(100, 11)
    exact = mehler_scalar_product(F, N).value
    mc = mehler_scalar_product(F, N, MehlerConfig(inner_samples=10_000, seed=5,
                                                  method="inner-mc"))
    assert mc.method == "inner-mc"
    z = (mc.value - exact) / mc.stderr
    assert np.all(np.abs(z) < 4.5)
    # aggregated: mean z-score should be near zero
    assert abs(z.mean()) < 4.0 / math.sqrt(z.size)


def test_scaled_log_product_closed_form_against_inner_mc():
    F = make_functional("scaled_log_product", N=16)
    N, _ = F.sample(20, 4)
    exact = mehler_scalar_product(F, N).value
    mc = mehler_scalar_product(F, N, MehlerConfig(inner_samples=20_000, seed=2,
                                                  method="inner-mc"))
    assert np.all(np.abs(mc.value - exact) < 4.5 * mc.stderr)


def test_correlated_quadratic_form_closed_form_against_inner_mc():
    K = np.array([[1.0, 0.6], [0.6, 2.0]])
    form = QuadraticForm(np.array([[1.0, 0.5], [0.5, -1.0]]), g=[0.3, 0.0])
    F = GaussianFunctional.from_form(form, covariance=K, label="corr")
    assert F.closed_form_capable
    N = sample_gaussian_vector(K, 30, 9)
    exact = mehler_scalar_product(F, N).value
    mc = mehler_scalar_product(F, N, MehlerConfig(inner_samples=20_000, seed=1,
                                                  method="inner-mc"))
    assert np.all(np.abs(mc.value - exact) < 4.5 * mc.stderr + 1e-12)


def test_exp_form_with_correlation_needs_monte_carlo():
    form = ExpQuadraticForm(0.5, dim=2)
    F = GaussianFunctional.from_form(form, covariance=[[1.0, 0.3], [0.3, 1.0]])
    assert not F.closed_form_capable
    with pytest.raises(UnsupportedMode):
        mehler_scalar_product(F, np.zeros(2), MehlerConfig(method="closed-form"))
    est = mehler_scalar_product(F, np.zeros(2), MehlerConfig(inner_samples=100))
    assert est.method == "inner-mc"


@given(st.floats(-0.45, 3.0), st.floats(-3, 3), st.floats(0, 0.999))
def test_lemma_closed_forms_against_quadrature(kc, c, a):
    s = math.sqrt(1 - a * a)
    if 1 + 2 * kc * s * s <= 0.05:
        return
    # single exponent so that a negative kc cannot overflow the weight alone
    w = lambda z: math.exp(-kc * (c + s * z) ** 2 - 0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
    mode = -kc * c * s / (kc * s * s + 0.5)
    pts = sorted({0.0, mode})
    q0 = integrate.quad(w, -80, 80, limit=400, points=pts, epsabs=1e-14, epsrel=1e-12)[0]
    q1 = integrate.quad(lambda z: (c + s * z) * w(z), -80, 80, limit=400, points=pts,
                        epsabs=1e-14, epsrel=1e-12)[0]
    m0, m1 = aux_gaussian_integrals(kc, c, a)
    assert m0 == pytest.approx(q0, rel=1e-8, abs=1e-12)
    assert m1 == pytest.approx(q1, rel=1e-7, abs=1e-10)


def test_lemma_domain_error():
    with pytest.raises(DomainError):
        aux_gaussian_integrals(-1.0, 0.0, 0.0)


@given(st.floats(-0.4, 2), st.floats(-1, 1), st.floats(-2, 2), st.floats(0.01, 1))
def test_tilted_moments_against_quadrature(kappa, beta, c, s2):
    s = math.sqrt(s2)
    f = lambda z: math.exp(-kappa * (c + s * z) ** 2 + beta * (c + s * z)  # noqa: E731
                           - 0.5 * z * z) / math.sqrt(2 * math.pi)
    mode = (beta * s - 2 * kappa * c * s) / (2 * kappa * s2 + 1)
    pts = sorted({0.0, mode})
    q0 = integrate.quad(f, -40, 40, limit=400, points=pts, epsabs=1e-14, epsrel=1e-12)[0]
    q1 = integrate.quad(lambda z: (c + s * z) * f(z), -40, 40, limit=400, points=pts,
                        epsabs=1e-14, epsrel=1e-12)[0]
    m0, m1 = tilted_gaussian_moments(kappa, beta, c, s2)
    assert m0 == pytest.approx(q0, rel=1e-8)
    assert m1 == pytest.approx(q1, rel=1e-7, abs=1e-10)


def test_wrong_gradient_is_caught():
    with pytest.raises(ValueError, match="gradient"):
        GaussianFunctional(1, lambda x: x[..., 0] ** 3, lambda x: 2 * x)


def test_finite_difference_fallback():
    F = GaussianFunctional(2, lambda x: np.sin(x[..., 0]) * x[..., 1])
    x = np.array([[0.3, -1.2], [2.0, 0.5]])
    exact = np.stack([np.cos(x[:, 0]) * x[:, 1], np.sin(x[:, 0])], axis=1)
    np.testing.assert_allclose(F.grad(x), exact, rtol=1e-8, atol=1e-9)


def test_covariance_checks_and_sampling():
    with pytest.raises(np.linalg.LinAlgError):
        GaussianFunctional(2, lambda x: x[..., 0], covariance=[[1, 2], [2, 1]])
    singular = np.array([[1.0, 1.0], [1.0, 1.0]])
    x = sample_gaussian_vector(singular, 20_000, 3)
    np.testing.assert_allclose(x[:, 0], x[:, 1], atol=1e-12)
    K = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = sample_gaussian_vector(K, 200_000, 4)
    np.testing.assert_allclose(np.cov(x.T), K, atol=0.02)
    np.testing.assert_array_equal(sample_gaussian_vector(K, 10, 4), sample_gaussian_vector(K, 10, 4))


def test_composed_functional_chain_rule():
    F = make_functional("exp_neg_half_sum")
    G = composed(F, lambda y: np.sin(3 * y))
    x = np.array([[0.2, -0.7]])
    np.testing.assert_allclose(G.grad(x), G.fd_grad(x), rtol=1e-6)


def test_conditional_projection_recovers_regression():
    rng = np.random.default_rng(0)
    y = rng.uniform(-2, 2, 200_000)
    v = y ** 2 + rng.normal(size=y.size)
    proj = conditional_projection(y, v, 64)
    truth = np.array([np.mean(y[proj.bin_of(y) == k] ** 2) for k in range(64)])
    assert np.max(np.abs(proj.mean - truth)) < 5 * proj.se.max()
    assert proj.count.sum() == y.size
    ker = conditional_projection(y, v, bandwidth=0.05)
    grid = np.linspace(-1.5, 1.5, 7)
    np.testing.assert_allclose(ker(grid), grid ** 2, atol=0.05)


def test_conditional_projection_resolution_rules():
    with pytest.raises(ValueError, match="at least"):
        conditional_projection(np.arange(100.0), np.arange(100.0))
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        proj = conditional_projection(np.arange(10_000.0), np.ones(10_000), num_bins=400)
    assert any(issubclass(x.category, ResolutionWarning) for x in w)
    assert proj.mean.size == 200


def test_functional_config(tmp_path):
    ini = tmp_path / "f.ini"
    ini.write_text("[functional]\nform = scaled_log_product\nN = 8\n")
    F = load_functional_config(ini)
    assert F.dim == 8
    ini.write_text("[functional]\nform = product_pairs\ncovariance = "
                   "1,0,0,0;0,1,0,0;0,0,1,0.5;0,0,0.5,1\n")
    F = load_functional_config(ini)
    assert F.covariance[2, 3] == 0.5
    ini.write_text("[functional]\nform = chi_square\ndim = 3\n")
    with pytest.raises(ValueError, match="dimension"):
        load_functional_config(ini)


def test_unknown_functional():
    with pytest.raises(ValueError, match="unknown functional"):
        make_functional("cubic")
