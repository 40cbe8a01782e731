import math
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from bcwp import exponents as ex
from bcwp.elliptic import sharp_constant

dims = st.tuples(st.integers(3, 12), st.integers(1, 10))
mus = st.fractions(min_value=-6, max_value=6, max_denominator=24)


def test_golden_exponents_for_torus_times_circle():
    # (m, k, mu) = (3, 1, 1/2): eta = 7/2, varpi = 15/2, varrho = -1/2
    alpha, beta = ex.alpha_beta(3, 1, F(1, 2))
    assert (alpha, beta) == (F(8, 7), F(32, 7))
    assert ex.exponents(3, 1, F(1, 2)) == (F(15, 7), F(-1, 7))


def test_golden_concave_convex_point():
    rep = ex.classify(7, 4, F(1, 2), -1)
    assert rep.regime_label == "concave-convex"
    assert 0 < rep.q < 1 < rep.p


@settings(max_examples=200, deadline=None)
@given(dims, mus)
def test_exponents_match_quadratic_forms(mk, mu):
    m, k = mk
    if mu == ex.mu_sc(m, k):
        with pytest.raises(ex.UndefinedAlphaError):
            ex.alpha_beta(m, k, mu)
        return
    e, w, r = ex.quadratics(m, k, mu)
    p, q = ex.exponents(m, k, mu)
    alpha, beta = ex.alpha_beta(m, k, mu)
    assert p * e == w and q * e == r
    assert p - q == 2 * alpha
    assert beta == 2 * alpha * (k + (m - 1) * mu)


@settings(max_examples=100, deadline=None)
@given(dims)
def test_special_exponents_are_ordered(mk):
    m, k = mk
    sp = ex.special_mu(m, k)
    assert sp.mu_pY < sp.mu_sc < 0
    assert float(sp.mu_bar_minus) < float(sp.mu_bar_plus)


@settings(max_examples=100, deadline=None)
@given(dims)
def test_domain_roots_annihilate_varrho(mk):
    m, k = mk
    dom = ex.domain_D(m, k)
    if dom.in_D:
        assert dom.discriminant < 0
        return
    for root in (dom.mu_minus, dom.mu_plus):
        assert abs(float(ex.varrho(m, k, float(root)))) < 1e-9 * (m * m + k * k)


@pytest.mark.parametrize("m,k", [(4, 6), (3, 8), (6, 5)])
def test_double_root_cases_have_zero_discriminant(m, k):
    dom = ex.domain_D(m, k)
    assert dom.discriminant == 0 and dom.double_root
    assert dom.mu_minus == dom.mu_plus and dom.mu_minus.rational
    assert ex.varrho(m, k, dom.mu_minus.a) == 0


def test_quadratic_surd_simplifies_and_compares_exactly():
    s = ex.QuadraticSurd.make(1, 1, 8)
    assert (s.b, s.d) == (2, 2)
    assert s.sign_minus(F(3)) == 1
    assert s.sign_minus(F(4)) == -1
    assert ex.QuadraticSurd.make(0, 1, 9).equals(F(3))


def test_quadratic_roots_reports_empty_for_negative_discriminant():
    disc, roots, double = ex.quadratic_roots(1, 0, 1)
    assert disc == -4 and roots == () and not double


def test_mu_sc_is_deferred():
    rep = ex.classify(3, 1, F(-1, 2), -1)
    assert rep.regime_label == "deferred" and rep.p is None


def test_positive_fiber_curvature_is_out_of_scope():
    assert ex.classify(7, 4, F(1, 2), 1).strategy == "out-of-scope"


def test_regime_series_crosses_q_zero_near_known_points():
    mus = [F(i, 10000) for i in range(-5000, 0)]
    rows = ex.regime_series(7, 4, mus)
    signs = [(mu, q > 0) for mu, _, q, _ in rows if q is not None]
    flips = [float(a[0]) for a, b in zip(signs, signs[1:]) if a[1] != b[1]]
    assert len(flips) == 2
    assert flips[0] == pytest.approx(-0.4134, abs=2e-4)
    assert flips[1] == pytest.approx(-0.1792, abs=2e-4)


def test_sharp_constant_matches_gamma_formula_and_decreases():
    vals = []
    for m in range(3, 12):
        ref = (math.gamma(m) / math.gamma(m / 2)) ** (1 / m) / math.sqrt(math.pi * m * (m - 2))
        assert sharp_constant(m) == pytest.approx(ref, rel=1e-13)
        vals.append(sharp_constant(m))
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_as_number_keeps_rationals_exact():
    assert ex.as_number("-1/2") == F(-1, 2)
    assert isinstance(ex.as_number(0.25), float)
    with pytest.raises(TypeError):
        ex.as_number(True)
