import math
import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from steindiff.bounds import (BoundReport, MCConfig, bound_conditional, bound_unconditional,
                              characterization_check, reference_distances, stein_terms,
                              total_variation)
from steindiff.densities import make_family
from steindiff.diffusion import DriftSpec, build_coefficient_numeric, family_model
from steindiff.errors import ResolutionWarning, SupportViolation, UnsupportedMode
from steindiff.malliavin import make_functional

MC = MCConfig(samples=100_000, seed=7)

EXACT = [
    ("chi_square", "chi_square"),
    ("exp_neg_half_sum", "uniform"),
    ("exp_neg_sum", "beta"),
    ("exp_single", "lognormal"),
    ("exp_quarter_sum_minus_one", "pareto"),
]


@pytest.mark.parametrize("fname,family", EXACT)
def test_exact_pairs_have_vanishing_first_term(fname, family):
    rep = bound_unconditional(make_functional(fname), family_model(family), MC)
    assert rep.term1_unconditional < 1e-10
    # E b(Y) = 0 up to sampling noise
    assert rep.term2 < 4 * rep.term2_stderr


def test_normal_identity_is_exact():
    rep = bound_conditional(make_functional("identity"), family_model("normal"), MC)
    assert rep.term1_unconditional == pytest.approx(0.0, abs=1e-12)
    assert rep.term1_conditional == pytest.approx(0.0, abs=1e-12)


def test_laplace_representation_needs_conditioning():
    rep = bound_conditional(make_functional("half_diff_squares"), family_model("laplace"), MC)
    assert rep.term1_unconditional == pytest.approx(0.736, abs=0.01)
    assert rep.term1_conditional < 0.05
    assert rep.tower_ok()
    assert rep.bound_conditional < rep.bound


def test_chi_square_conditioning_changes_nothing():
    # T is a function of Y already, so projecting it is the identity up to binning
    F = make_functional("chi_square")
    m = family_model("laplace")
    rep = bound_conditional(F, m, MC)
    assert rep.term1_conditional == pytest.approx(rep.term1_unconditional, rel=0.02)


def test_characterization_accepts_own_law_and_rejects_others():
    own = characterization_check(make_functional("exp_neg_half_sum"), family_model("uniform"), MC)
    assert own.consistent()
    wrong = characterization_check(make_functional("exp_neg_half_sum"), family_model("beta"), MC)
    assert not wrong.consistent()
    assert wrong.eb_residual == pytest.approx(-1 / 6, abs=0.005)
    const = make_functional("constant", c=0.5)
    res = characterization_check(const, family_model("uniform"), MC)
    # T = a(1/2)/2 = 1/8 for every realization
    assert res.conditional_residual == pytest.approx(0.125, rel=1e-12)
    assert res.max_z() == math.inf


def test_support_violation_names_offender():
    with pytest.raises(SupportViolation, match="first offender"):
        stein_terms(make_functional("chi_square"), family_model("uniform"),
                    MCConfig(samples=1000))


def test_nonaffine_drift_needs_inner_monte_carlo():
    d = make_family("normal")
    m = build_coefficient_numeric(d, DriftSpec.from_callable(lambda x: -np.tanh(x), d, "tanh"))
    F = make_functional("identity")
    with pytest.raises(UnsupportedMode, match="inner"):
        stein_terms(F, m, MCConfig(samples=1000))
    terms = stein_terms(F, m, MCConfig(samples=2000, inner_samples=200, seed=3))
    assert terms.method == "inner-mc"
    assert np.all(np.isfinite(terms.t))


def test_small_budget_warns():
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        bound_conditional(make_functional("exp_single"), family_model("lognormal"),
                          MCConfig(samples=20_000))
    assert any(issubclass(x.category, ResolutionWarning) for x in w)


def test_results_are_reproducible_per_seed():
    F, m = make_functional("half_diff_squares"), family_model("laplace")
    small = MCConfig(samples=20_000, seed=11)
    a = bound_unconditional(F, m, small)
    b = bound_unconditional(F, m, small)
    c = bound_unconditional(F, m, MCConfig(samples=20_000, seed=12))
    assert a.to_kv() == b.to_kv()
    assert a.term1_unconditional != c.term1_unconditional


def test_bound_dominates_kolmogorov_distance():
    # Y = Z^2 is far from a standard Laplace law; the bound must cover the true gap
    F, m = make_functional("chi_square"), family_model("laplace")
    rep = bound_conditional(F, m, MC)
    assert rep.function_class == "kolmogorov"
    y = rep.extra["terms"].y
    ks = reference_distances(m.density, y)["kolmogorov"]
    assert ks <= rep.bound_conditional + 3 * rep.combined_stderr
    assert ks <= rep.bound + 3 * rep.combined_stderr


def test_report_serialization():
    rep = bound_unconditional(make_functional("exp_single"), family_model("lognormal"),
                              MCConfig(samples=1000))
    kv = rep.to_kv().splitlines()
    assert len(kv) == len(BoundReport.FIELDS)
    assert kv[0].startswith("functional = ")
    row = rep.to_csv_row().split(",")
    assert len(row) == len(BoundReport.csv_header().split(","))
    assert math.isnan(rep.bound_conditional)
    assert "extra" not in rep.as_dict()


# ---------------------------------------------------------------- reference distances

def test_shifted_normals():
    A = make_family("normal")
    B = make_family("normal", {"mu": 0.1})
    r = reference_distances(A, B)
    gap = stats.norm.cdf(0.05) - stats.norm.cdf(-0.05)
    assert r["kolmogorov"] == pytest.approx(gap, rel=1e-8)
    assert r["wasserstein1"] == pytest.approx(0.1, rel=1e-7)
    assert r["total_variation"] == pytest.approx(gap, rel=1e-7)


def test_shifted_uniforms_with_disjoint_tails():
    A = make_family("uniform")
    B = make_family("uniform", {"lo": 0.1, "hi": 1.1})
    r = reference_distances(A, B)
    assert r["kolmogorov"] == pytest.approx(0.1, abs=1e-9)
    assert r["wasserstein1"] == pytest.approx(0.1, abs=1e-8)
    assert total_variation(A, B) == pytest.approx(0.1, abs=1e-8)


def test_sample_against_density():
    d = make_family("gamma")
    x = stats.gamma(0.5, scale=2.0).rvs(size=2000, random_state=np.random.default_rng(4))
    r = reference_distances(x, d)
    assert r["kolmogorov"] == pytest.approx(stats.kstest(x, d.cdf).statistic, rel=1e-12)
    # brute-force integral of |F_n - F| on a fine grid
    grid = np.linspace(0.0, x.max() + 40.0, 2_000_001)
    fn = np.searchsorted(np.sort(x), grid, side="right") / x.size
    brute = integrate.trapezoid(np.abs(fn - d.cdf(grid)), grid)
    assert r["wasserstein1"] == pytest.approx(brute, abs=2e-4)


def test_two_samples_and_tv_refusal():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=500), rng.normal(0.5, size=400)
    r = reference_distances(a, b)
    assert r["wasserstein1"] == pytest.approx(stats.wasserstein_distance(a, b))
    with pytest.raises(UnsupportedMode):
        reference_distances(a, make_family("normal"), tv=True)
