import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bcwp import geometry as geo


def _field(grid, coeffs):
    x, y = grid.mesh()
    a, b, c, d = coeffs
    return a + b * np.sin(x) + c * np.cos(2 * y) + d * np.sin(x + y)


def _bumpy_metric(n=24, scheme="fd2"):
    grid = geo.torus((n, n), scheme=scheme).grid
    x, y = grid.mesh()
    g = np.zeros(grid.shape + (2, 2))
    g[..., 0, 0] = 1.5 + 0.3 * np.sin(x)
    g[..., 1, 1] = 1.2 + 0.2 * np.cos(y)
    g[..., 0, 1] = g[..., 1, 0] = 0.1 * np.sin(x + y)
    return geo.MetricField(grid, g)


coeff = st.floats(-2, 2, allow_nan=False)
coeffs = st.tuples(coeff, coeff, coeff, coeff)


@settings(max_examples=30, deadline=None)
@given(coeffs)
def test_gradient_sq_is_nonnegative(cs):
    metric = _bumpy_metric()
    assert np.all(geo.gradient_sq(metric, _field(metric.grid, cs)) >= -1e-14)


@settings(max_examples=30, deadline=None)
@given(coeffs, coeffs)
def test_metric_inner_is_symmetric_and_bounded(c1, c2):
    metric = _bumpy_metric()
    f, h = _field(metric.grid, c1), _field(metric.grid, c2)
    fh = geo.metric_inner(metric, f, h)
    assert np.allclose(fh, geo.metric_inner(metric, h, f), atol=1e-13)
    bound = np.sqrt(geo.gradient_sq(metric, f) * geo.gradient_sq(metric, h))
    assert np.all(np.abs(fh) <= bound * (1 + 1e-12) + 1e-13)


@settings(max_examples=20, deadline=None)
@given(coeffs, coeffs)
def test_periodic_integration_by_parts(c1, c2):
    metric = _bumpy_metric()
    f, w = _field(metric.grid, c1), _field(metric.grid, c2)
    lhs = geo.integrate(metric, geo.laplace_beltrami(metric, f) * w)
    rhs = -geo.dirichlet_form(metric, f, w)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_laplacian_is_second_order_on_the_circle():
    errs = []
    ns = [32, 64, 128]
    for n in ns:
        metric = geo.circle(n)
        x = metric.grid.coords()[0]
        errs.append(np.max(np.abs(geo.laplace_beltrami(metric, np.sin(3 * x)) + 9 * np.sin(3 * x))))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(1.9 < o < 2.1 for o in orders)


def test_spectral_laplacian_is_exact_for_trig_modes():
    metric = geo.circle(16, scheme="spectral")
    x = metric.grid.coords()[0]
    assert np.max(np.abs(geo.laplace_beltrami(metric, np.cos(2 * x)) + 4 * np.cos(2 * x))) < 1e-12


def test_flat_torus_has_zero_curvature():
    assert np.max(np.abs(geo.scalar_curvature(geo.torus((8, 8, 8))))) == 0.0


def test_round_sphere_curvature_converges():
    errs = []
    for n in (32, 64):
        metric = geo.sphere2(n, 8, radius=2.0)
        mask = metric.grid.interior_mask(polar_band=math.pi / 4)
        errs.append(np.max(np.abs(geo.scalar_curvature(metric) - 0.5)[mask]))
    assert errs[1] < errs[0] < 1e-2


def test_singular_metric_reports_grid_index():
    grid = geo.torus((6, 6)).grid
    g = np.broadcast_to(np.eye(2), grid.shape + (2, 2)).copy()
    g[2, 3] = [[1.0, 1.0], [1.0, 1.0]]
    metric = geo.MetricField(grid, g)
    with pytest.raises(geo.SingularMetricError) as exc:
        metric.inverse
    assert exc.value.index == (2, 3)


def test_asymmetric_metric_is_rejected():
    grid = geo.torus((4, 4)).grid
    g = np.broadcast_to(np.eye(2), grid.shape + (2, 2)).copy()
    g[0, 0, 0, 1] = 0.1
    with pytest.raises(geo.GeometryError):
        geo.MetricField(grid, g)


def test_signature_change_is_rejected():
    grid = geo.circle(8).grid
    g = np.ones((8, 1, 1))
    g[3] = -1.0
    with pytest.raises(geo.GeometryError, match="signature"):
        geo.MetricField(grid, g)


def test_lorentzian_signature_is_recorded():
    fiber = geo.FiberModel(1, sign=-1).realize(8)
    assert fiber.signature == (1, 0)
    assert not fiber.riemannian


def test_axis_needs_four_points():
    with pytest.raises(geo.GeometryError):
        geo.Axis(3)


def test_spectral_scheme_needs_periodic_axes():
    with pytest.raises(geo.GeometryError):
        geo.GridManifold((geo.Axis(8, geo.INTERVAL, 1.0),), "spectral")


def test_fiber_curvature_constants():
    assert geo.FiberModel(3, "sphere", radius=2.0).scalar_curvature == pytest.approx(3 * 2 / 4)
    assert geo.FiberModel(4, "einstein", nu=-0.25).scalar_curvature == -1.0
    assert geo.FiberModel(2).scalar_curvature == 0.0
