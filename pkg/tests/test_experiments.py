import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steindiff.bounds import MCConfig
from steindiff.diffusion import family_model
from steindiff.experiments import (WORKED_EXAMPLES, expected_log_product, half_a_from_log,
                                   half_sum_projection_error, lognormal_rate_experiment,
                                   run_worked_example)
from steindiff.malliavin import make_functional

MC = MCConfig(samples=100_000, seed=21)
SMALL = MCConfig(samples=20_000, seed=5)


@pytest.mark.parametrize("name", sorted(WORKED_EXAMPLES))
def test_worked_examples_pass(name):
    rep = run_worked_example(name, MC)
    assert rep.passed, "\n".join(rep.lines())
    assert rep.lines()[-1] == "result = PASS"


def test_unknown_example():
    with pytest.raises(ValueError, match="unknown example"):
        run_worked_example("cauchy", SMALL)


def test_half_sum_projection_fails_for_a_non_laplace_functional():
    # for Y = |N|^2 - 1 (a shifted chi-square) the projection is (Y + 1)/2, not 1 + |Y|
    err = half_sum_projection_error(make_functional("chi_square"), MC)
    assert err > 0.1


@pytest.mark.parametrize("n", [2, 8])
def test_expected_log_product_against_monte_carlo(n):
    F = make_functional("scaled_log_product", N=n)
    _, y = F.sample(400_000, 3)
    se = y.std(ddof=1) / math.sqrt(y.size)
    assert abs(y.mean() - expected_log_product(n)) < 4 * se


@given(st.floats(-8.0, 8.0))
def test_half_coefficient_from_log_matches_model(z):
    m = family_model("lognormal")
    y = math.exp(-z)
    ref = 0.5 * float(m.a(np.array([y]))[0])
    assert float(half_a_from_log(z)) == pytest.approx(ref, rel=1e-8)


def test_half_coefficient_from_log_far_tails_are_finite():
    v = half_a_from_log(np.array([-40.0, -5.0, 0.0, 0.5, 5.0, 40.0]))
    assert np.all(np.isfinite(v)) and np.all(v > 0)


def test_rate_table_outputs(tmp_path):
    table = lognormal_rate_experiment((4, 8, 16, 32, 64), SMALL)
    assert [r.N for r in table.rows] == [4, 8, 16, 32, 64]
    assert table.slope_ci[0] <= table.fitted_slope <= table.slope_ci[1]
    assert all(r.half_a_gap < 1e-8 for r in table.rows)
    # exact and Monte Carlo means of the drift agree
    for r in table.rows:
        assert abs(r.term2 - r.term2_mc) < 4 * r.term2_mc_stderr + 1e-12
    csv = tmp_path / "rate.csv"
    table.to_csv(csv)
    body = np.loadtxt(csv, delimiter=",", skiprows=1, comments="#")
    assert body.shape == (5, 8)
    assert "# fitted_slope" in csv.read_text()
    gp = tmp_path / "rate.dat"
    table.to_gnuplot(gp)
    np.testing.assert_allclose(np.loadtxt(gp)[:, 1], [r.bound for r in table.rows], rtol=1e-15)


def test_rate_table_is_reproducible():
    a = lognormal_rate_experiment((4, 8, 16, 32, 64), SMALL)
    b = lognormal_rate_experiment((4, 8, 16, 32, 64), SMALL)
    assert a.fitted_slope == b.fitted_slope and a.slope_ci == b.slope_ci


@pytest.mark.parametrize("ns", [(4, 8, 16, 32), (4, 4, 8, 16, 32), (1, 4, 8, 16, 32),
                                (4, 8, 16, 32, 2048)])
def test_rate_needs_five_valid_sizes(ns):
    with pytest.raises(ValueError, match="at least 5"):
        lognormal_rate_experiment(ns, SMALL)
