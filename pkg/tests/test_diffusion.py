import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steindiff.densities import FAMILIES, make_family, make_tabulated
from steindiff.diffusion import (DriftSpec, build_coefficient_numeric, closed_form_coefficient,
                                 export_model_csv, family_model, interior_grid, model_for,
                                 reconstruct_density, validate_model)
from steindiff.errors import CenteringError, ConstructionError, DomainError


@pytest.mark.parametrize("fam", FAMILIES)
def test_numeric_coefficient_matches_closed_form(fam):
    d = make_family(fam)
    num = build_coefficient_numeric(d)
    cf = closed_form_coefficient(d)
    x = interior_grid(d, 257)
    np.testing.assert_allclose(num.a(x), cf.a(x), rtol=1e-9)


@pytest.mark.parametrize("fam", FAMILIES)
def test_flux_is_half_a_times_density(fam):
    m = family_model(fam)
    x = interior_grid(m.density, 101)
    np.testing.assert_allclose(m.flux(x), 0.5 * m.a(x) * m.density.pdf(x), rtol=1e-10)


@pytest.mark.parametrize("fam,a_at", [
    ("normal", lambda x: 2.0 + 0 * x),
    ("gamma", lambda x: 4.0 * x),
    ("uniform", lambda x: x * (1 - x)),
    ("beta", lambda x: 4.0 / 3.0 * x * (1 - x)),
    ("pareto", lambda x: 2.0 * x * (1 + x)),
    ("laplace", lambda x: 2.0 * (1 + np.abs(x))),
])
def test_closed_forms_for_worked_parameters(fam, a_at):
    m = family_model(fam)
    x = interior_grid(m.density, 33)
    np.testing.assert_allclose(m.a(x), a_at(x), rtol=1e-12)


@pytest.mark.parametrize("fam", [f for f in FAMILIES if f != "pareto"])
def test_expected_a_is_twice_the_variance(fam):
    rep = validate_model(family_model(fam))
    assert rep.expected_a_finite
    assert rep.expected_a == pytest.approx(2 * make_family(fam).variance, rel=1e-6)


def test_pareto_two_flags_infinite_expected_a():
    rep = validate_model(family_model("pareto"))
    assert not rep.expected_a_finite
    assert rep.passed  # flagged, not fatal
    assert any("E a(X)" in m for m in rep.messages)


@given(st.floats(-3, 3), st.floats(0.2, 4))
def test_normal_family_numeric_a_is_constant(mu, sigma):
    m = build_coefficient_numeric(make_family("normal", {"mu": mu, "sigma": sigma}))
    x = interior_grid(m.density, 65)
    np.testing.assert_allclose(m.a(x), 2 * sigma**2, rtol=1e-8)


def test_end_limits_and_inf_a():
    uni = validate_model(family_model("uniform"))
    assert uni.end_limits["lower"].limit == pytest.approx(1.0, abs=1e-6)
    assert uni.end_limits["upper"].limit == pytest.approx(1.0, abs=1e-6)
    assert uni.inf_a == 0.0
    assert uni.derivative_hypotheses
    lap = validate_model(family_model("laplace"))
    assert lap.inf_a == pytest.approx(2.0)
    assert lap.bounded_solution_hypotheses
    logn = validate_model(family_model("lognormal"))
    assert not logn.end_limits["lower"].positive
    assert not logn.derivative_hypotheses


def test_custom_nonlinear_drift():
    d = make_family("normal")
    drift = DriftSpec.from_callable(lambda x: -np.tanh(x), d, "tanh")
    assert drift.k == pytest.approx(0.0, abs=1e-12)
    assert not drift.is_affine
    m = build_coefficient_numeric(d, drift)
    x = interior_grid(d, 65)
    assert np.all(m.a(x) > 0)
    # flux identity: a p / 2 = int b p
    rec = reconstruct_density(m, 0.0, float(d.pdf(0.0)))
    np.testing.assert_allclose(rec(x), d.pdf(x), rtol=1e-7)


def test_uncentered_drift_is_rejected():
    d = make_family("normal")
    drift = DriftSpec(lambda x: 1.0 - np.asarray(x), 1.0, -1.0, 1.0, "shifted")
    with pytest.raises(CenteringError):
        build_coefficient_numeric(d, drift)


def test_drift_without_single_sign_change_is_rejected():
    with pytest.raises(ConstructionError, match="sign"):
        DriftSpec.from_callable(lambda x: np.cos(3 * np.asarray(x)), make_family("normal"))


def test_tabulated_density_builds_numeric_model():
    x = np.linspace(0.0, 1.0, 41)
    d = make_tabulated(x, 1.0 + 0.5 * np.sin(2 * np.pi * x))
    m = model_for(d)
    assert m.a_kind == "numeric"
    rep = validate_model(m)
    assert rep.passed
    rec = reconstruct_density(m, d.median, float(d.pdf(d.median)))
    xs = d.ppf(np.linspace(0.05, 0.95, 19))
    np.testing.assert_allclose(rec(xs), d.pdf(xs), rtol=1e-6)


def test_reconstruction_anchor_checks():
    m = family_model("uniform")
    with pytest.raises(DomainError):
        reconstruct_density(m, 1.5, 1.0)
    with pytest.raises(DomainError):
        reconstruct_density(m, 0.5, 0.0)
    rec = reconstruct_density(m, 0.5, 1.0)
    assert float(rec(0.5)) == 1.0


def test_model_csv_export(tmp_path):
    m = family_model("beta")
    path = tmp_path / "m.csv"
    export_model_csv(m, path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape[1] == 4
    np.testing.assert_allclose(data[:, 1], m.a(data[:, 0]), rtol=1e-15)


def test_a_is_zero_outside_support():
    m = family_model("beta")
    assert float(m.a(-0.5)) == 0.0
    assert float(m.a(1.5)) == 0.0
    assert math.isfinite(float(m.a(0.5)))
