from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from bcwp import exponents as ex
from bcwp import geometry as geo
from bcwp import operators as op


def _spectral_metric(n=64):
    grid = geo.torus((n, n), scheme="spectral").grid
    x, y = grid.mesh()
    g = np.zeros(grid.shape + (2, 2))
    g[..., 0, 0] = 1.0 + 0.2 * np.sin(y)
    g[..., 1, 1] = 1.0 + 0.1 * np.cos(x)
    return geo.MetricField(grid, g)


def _positive_field(grid):
    x, y = grid.mesh()
    return 1.5 + 0.3 * np.sin(x) + 0.2 * np.cos(y)


small = st.fractions(min_value=-3, max_value=3, max_denominator=6)
terms = st.lists(st.tuples(small, small), min_size=1, max_size=4)


@settings(max_examples=15, deadline=None)
@given(terms)
def test_identities_and_reductions_hold_spectrally(ts):
    spec = op.OperatorSpec(tuple(ts))
    # v^(1/alpha) with a huge power is not resolved on the grid
    assume(spec.eta == 0 or spec.zeta == 0 or abs(spec.zeta / spec.eta) >= F(1, 4))
    metric = _spectral_metric()
    rep = op.verify_reductions(metric, _positive_field(metric.grid), spec)
    assert rep["L_identity"] < 1e-9 and rep["H_identity"] < 1e-9
    if spec.zeta != 0 and spec.eta != 0:
        assert rep["L_reduction"] < 1e-9 and rep["H_reduction"] < 1e-9
    else:
        assert rep["L_reduction"] is None


def test_reduction_undefined_when_zeta_vanishes():
    with pytest.raises(op.ReductionUndefined):
        op.reduce_L(op.OperatorSpec(((1, 1), (-1, 1))))


def test_gradient_term_has_no_laplacian_part():
    spec = op.OperatorSpec(op.gradient_term(F(3)))
    assert spec.zeta == 0 and spec.eta == 3


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 10), st.integers(1, 8), st.fractions(-4, 4, max_denominator=12))
def test_scalar_operator_reduces_to_classifier_exponents(m, k, mu):
    if mu == ex.mu_sc(m, k):
        return
    red = op.reduce_L(op.scalar_operator_spec(m, k, mu))
    alpha, beta = ex.alpha_beta(m, k, mu)
    assert (red.alpha, red.beta) == (alpha, beta)


def test_nonpositive_field_is_rejected():
    metric = _spectral_metric(16)
    with pytest.raises(ValueError, match="positive"):
        op.apply_L(op.OperatorSpec(((1, 1),)), metric, np.zeros(metric.grid.shape))
