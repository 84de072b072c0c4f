import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from steindiff.densities import make_family
from steindiff.quadrature import (CumulativeTable, density_grid, gauss_legendre_unit,
                                  gl_integrate, quad, quantile_nodes)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=20),
       st.floats(-2, 2), st.floats(0.1, 3))
def test_gauss_legendre_exact_for_low_degree_polynomials(coefs, lo, width):
    hi = lo + width
    p = np.polynomial.Polynomial(coefs)
    exact = p.integ()(hi) - p.integ()(lo)
    assert gl_integrate(p, lo, hi, order=12) == pytest.approx(exact, rel=1e-12, abs=1e-11)


def test_unit_rule_weights_sum_to_one():
    for order in (4, 24, 64):
        x, w = gauss_legendre_unit(order)
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.all((x > 0) & (x < 1))


def test_half_line_integrals_keep_heavy_tail_mass():
    assert quad(lambda x: x ** -2.0, 1.0, math.inf) == pytest.approx(1.0, rel=1e-10)
    assert quad(lambda x: x ** -3.0, 2.0, math.inf) == pytest.approx(0.125, rel=1e-10)
    assert quad(np.exp, -math.inf, -1.0) == pytest.approx(math.exp(-1.0), rel=1e-10)


def test_full_line_gaussian():
    val = quad(lambda x: np.exp(-0.5 * x * x), -math.inf, math.inf)
    assert val == pytest.approx(math.sqrt(2 * math.pi), rel=1e-10)


@given(st.floats(0.001, 0.999))
def test_cumulative_table_prefix_plus_suffix_is_total(q):
    d = make_family("gamma")
    table = CumulativeTable(density_grid(d, 256), d.pdf)
    x = float(d.ppf(q))
    assert table.lower(x) + table.upper(x) == pytest.approx(table.total, abs=1e-12)
    assert table.lower(x) == pytest.approx(q, abs=1e-9)


def test_quantile_nodes_are_increasing_and_interior():
    for fam in ("normal", "beta", "pareto"):
        d = make_family(fam)
        nodes = quantile_nodes(d, 128)
        assert np.all(np.diff(nodes) > 0)
        assert np.all(d.support.contains(nodes))
