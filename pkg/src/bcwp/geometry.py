"""Discrete differential geometry on structured coordinate grids.

Fields are plain ``numpy`` arrays whose leading axes are the grid axes.
Rank-2 tensors carry two trailing component axes ``(..., d, d)`` and the
Christoffel symbols are stored as ``gamma[..., l, i, j]`` for
:math:`\\Gamma^l_{ij}`.

Two differentiation schemes are available.  ``"fd2"`` uses second-order
central differences (one-sided second-order stencils at the ends of open
axes) and a divergence-form Laplace-Beltrami operator that is
self-adjoint with respect to the Riemannian volume weights.  ``"spectral"``
uses FFT differentiation and needs every axis to be periodic; it is the
high-accuracy reference used where chain-rule identities are compared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property, reduce

import numpy as np
import scipy.sparse as sp

PERIODIC = "periodic"
INTERVAL = "interval"
COLATITUDE = "colatitude"
AXIS_KINDS = (PERIODIC, INTERVAL, COLATITUDE)
SCHEMES = ("fd2", "spectral")


class GeometryError(ValueError):
    """Invalid grid, field or metric."""


class SingularMetricError(GeometryError):
    """The metric is not invertible at some grid point."""

    def __init__(self, index, det):
        self.index = tuple(int(i) for i in index)
        self.det = float(det)
        super().__init__(f"singular metric at grid index {self.index} (det = {self.det:.3e})")


@dataclass(frozen=True)
class Axis:
    """One coordinate axis of a structured grid.

    Parameters
    ----------
    n : int
        Number of points, at least 4.
    kind : str
        ``"periodic"`` (wraps modulo ``n``), ``"interval"`` (open segment
        including both end points) or ``"colatitude"`` (sphere colatitude
        on ``(0, pi)`` with both poles excluded by one spacing).
    length : float
        Period for periodic axes, span for intervals; ignored for
        colatitude axes.
    start : float
        Coordinate of the first point (periodic and interval axes).
    """

    n: int
    kind: str = PERIODIC
    length: float = 2.0 * math.pi
    start: float = 0.0

    def __post_init__(self):
        if self.kind not in AXIS_KINDS:
            raise GeometryError(f"unknown axis kind {self.kind!r}")
        if int(self.n) != self.n or self.n < 4:
            raise GeometryError(f"axis needs at least 4 points, got n={self.n}")
        if self.kind != COLATITUDE and not self.length > 0:
            raise GeometryError(f"axis length must be positive, got {self.length}")

    @property
    def periodic(self):
        return self.kind == PERIODIC

    @property
    def spacing(self):
        if self.kind == PERIODIC:
            return self.length / self.n
        if self.kind == INTERVAL:
            return self.length / (self.n - 1)
        return math.pi / (self.n + 1)

    def points(self):
        h = self.spacing
        if self.kind == COLATITUDE:
            return h * (np.arange(self.n) + 1.0)
        return self.start + h * np.arange(self.n)


@dataclass(frozen=True)
class GridManifold:
    """Tensor-product coordinate grid.

    Parameters
    ----------
    axes : tuple of Axis
    scheme : {"fd2", "spectral"}
        Differentiation scheme used by every operator on this grid.
    """

    axes: tuple
    scheme: str = "fd2"

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if len(self.axes) == 0:
            raise GeometryError("grid needs at least one axis")
        if self.scheme not in SCHEMES:
            raise GeometryError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "spectral" and not self.all_periodic:
            raise GeometryError("spectral scheme needs every axis periodic")

    @property
    def dim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(ax.n for ax in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def spacing(self):
        return tuple(ax.spacing for ax in self.axes)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def all_periodic(self):
        return all(ax.periodic for ax in self.axes)

    def coords(self):
        return [ax.points() for ax in self.axes]

    def mesh(self):
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        return np.meshgrid(*self.coords(), indexing="ij")

    def with_scheme(self, scheme):
        return replace(self, scheme=scheme)

    def product(self, other):
        """Grid of ``self x other`` with the scheme of ``self``."""
        return GridManifold(self.axes + other.axes, self.scheme)

    def refined(self, n, axes=None):
        """Copy with ``n`` points on the listed axes (all axes by default)."""
        axes = range(self.dim) if axes is None else axes
        new = list(self.axes)
        for a in axes:
            new[a] = replace(new[a], n=int(n))
        return GridManifold(tuple(new), self.scheme)

    def interior_mask(self, margin=2, polar_band=None):
        """Boolean mask dropping ``margin`` points at both ends of open axes.

        With ``polar_band`` set, colatitude axes additionally keep only
        ``polar_band <= theta <= pi - polar_band``, which gives a fixed
        region under refinement.
        """
        mask = np.ones(self.shape, dtype=bool)
        for a, ax in enumerate(self.axes):
            if ax.periodic:
                continue
            if ax.kind == COLATITUDE and polar_band is not None:
                th = ax.points()
                keep = (th >= polar_band - 1e-12) & (th <= np.pi - polar_band + 1e-12)
                mask &= keep.reshape(_bshape(self.dim, a, ax.n))
            sl = [slice(None)] * self.dim
            sl[a] = slice(0, margin)
            mask[tuple(sl)] = False
            sl[a] = slice(ax.n - margin, ax.n)
            mask[tuple(sl)] = False
        return mask


# ---------------------------------------------------------------------------
# derivatives

def _bshape(ndim, axis, n):
    shape = [1] * ndim
    shape[axis] = n
    return shape


def _wavenumbers(ax):
    return 2.0 * np.pi / ax.length * np.fft.rfftfreq(ax.n, d=1.0 / ax.n)


def diff(grid, f, axis):
    """First partial derivative along a grid axis."""
    ax = grid.axes[axis]
    h = ax.spacing
    if grid.scheme == "spectral":
        k = _wavenumbers(ax)
        ik = 1j * k
        if ax.n % 2 == 0:
            ik[-1] = 0.0
        fh = np.fft.rfft(f, axis=axis)
        return np.fft.irfft(fh * ik.reshape(_bshape(f.ndim, axis, k.size)), n=ax.n, axis=axis)
    if ax.periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)
    return np.gradient(f, h, axis=axis, edge_order=2)


def _diff2_same(grid, f, axis):
    ax = grid.axes[axis]
    h = ax.spacing
    if grid.scheme == "spectral":
        k = _wavenumbers(ax)
        fh = np.fft.rfft(f, axis=axis)
        return np.fft.irfft(-fh * (k * k).reshape(_bshape(f.ndim, axis, k.size)), n=ax.n, axis=axis)
    if ax.periodic:
        return (np.roll(f, -1, axis=axis) - 2.0 * f + np.roll(f, 1, axis=axis)) / (h * h)
    fm = np.moveaxis(f, axis, 0)
    out = np.empty_like(fm)
    out[1:-1] = (fm[2:] - 2.0 * fm[1:-1] + fm[:-2]) / (h * h)
    out[0] = (2.0 * fm[0] - 5.0 * fm[1] + 4.0 * fm[2] - fm[3]) / (h * h)
    out[-1] = (2.0 * fm[-1] - 5.0 * fm[-2] + 4.0 * fm[-3] - fm[-4]) / (h * h)
    return np.moveaxis(out, 0, axis)


def diff2(grid, f, i, j):
    """Second partial derivative; compact stencil on the diagonal."""
    if i == j:
        return _diff2_same(grid, f, i)
    return diff(grid, diff(grid, f, i), j)


def gradient(grid, f):
    """Coordinate differential ``df`` with a trailing component axis."""
    return np.stack([diff(grid, f, a) for a in range(grid.dim)], axis=-1)


# ---------------------------------------------------------------------------
# metric

@dataclass(eq=False)
class MetricField:
    """Symmetric rank-2 field ``g[..., i, j]`` on a grid.

    The signature is recorded as ``(n_negative, n_positive)`` and must be
    the same at every grid point.
    """

    grid: GridManifold
    g: np.ndarray
    signature: tuple = field(init=False)

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        d = self.grid.dim
        if g.shape != self.grid.shape + (d, d):
            raise GeometryError(f"metric shape {g.shape} does not match grid {self.grid.shape} x ({d},{d})")
        if not np.all(np.isfinite(g)):
            raise GeometryError("metric has non-finite components")
        if not np.array_equal(g, np.swapaxes(g, -1, -2)):
            raise GeometryError("metric components are not exactly symmetric")
        self.g = g
        ev = np.linalg.eigvalsh(g)
        neg = np.sum(ev < 0, axis=-1)
        if np.any(neg != neg.flat[0]):
            idx = np.unravel_index(np.argmax(neg != neg.flat[0]), neg.shape)
            raise GeometryError(f"metric signature changes at grid index {tuple(int(i) for i in idx)}")
        n_neg = int(neg.flat[0])
        self.signature = (n_neg, d - n_neg)

    @property
    def riemannian(self):
        return self.signature[0] == 0

    @cached_property
    def det(self):
        return np.linalg.det(self.g)

    @cached_property
    def inverse(self):
        det = self.det
        scale = np.max(np.abs(self.g), axis=(-1, -2)) ** self.grid.dim
        bad = np.abs(det) <= 1e-12 * np.maximum(scale, 1e-300)
        if np.any(bad):
            idx = np.unravel_index(np.argmax(bad), bad.shape)
            raise SingularMetricError(idx, det[idx])
        inv = np.linalg.inv(self.g)
        return 0.5 * (inv + np.swapaxes(inv, -1, -2))

    @cached_property
    def density(self):
        """Volume density ``|det g|^(1/2)``."""
        self.inverse  # raises on singular points
        return np.sqrt(np.abs(self.det))

    @cached_property
    def weights(self):
        """Discrete volume weights ``|det g|^(1/2) * prod(h)``."""
        return self.density * self.grid.cell_volume

    @cached_property
    def stiffness(self):
        return _stiffness_matrix(self)


def flat_metric(grid, scale=1.0):
    """Constant diagonal metric ``scale * identity``."""
    d = grid.dim
    g = np.broadcast_to(scale * np.eye(d), grid.shape + (d, d)).copy()
    return MetricField(grid, g)


def block_diagonal_metric(grid, blocks):
    """Assemble a block-diagonal metric from component arrays.

    Parameters
    ----------
    grid : GridManifold
    blocks : list of ndarray
        Each block broadcasts to ``grid.shape + (d_b, d_b)``; block sizes
        add up to ``grid.dim``.
    """
    d = grid.dim
    g = np.zeros(grid.shape + (d, d))
    o = 0
    for b in blocks:
        b = np.asarray(b, dtype=float)
        db = b.shape[-1]
        g[..., o:o + db, o:o + db] = np.broadcast_to(b, grid.shape + (db, db))
        o += db
    if o != d:
        raise GeometryError(f"blocks cover {o} dimensions, grid has {d}")
    return MetricField(grid, g)


def circle(n, length=2.0 * math.pi, scheme="fd2"):
    """Flat circle of circumference ``length``."""
    return flat_metric(GridManifold((Axis(n, PERIODIC, length),), scheme))


def torus(shape, length=2.0 * math.pi, scheme="fd2"):
    """Flat torus with ``len(shape)`` axes of equal period."""
    grid = GridManifold(tuple(Axis(n, PERIODIC, length) for n in shape), scheme)
    return flat_metric(grid)


def sphere2(n_theta, n_phi, radius=1.0):
    """Round 2-sphere in the colatitude-longitude chart, poles excluded."""
    grid = GridManifold((Axis(n_theta, COLATITUDE), Axis(n_phi, PERIODIC, 2.0 * math.pi)))
    theta, _ = grid.mesh()
    g = np.zeros(grid.shape + (2, 2))
    g[..., 0, 0] = radius ** 2
    g[..., 1, 1] = (radius * np.sin(theta)) ** 2
    return MetricField(grid, g)


def product_metric(*factors):
    """Direct product of metrics; grid axes are concatenated in order."""
    grid = reduce(lambda a, b: a.product(b), [f.grid for f in factors])
    d = grid.dim
    g = np.zeros(grid.shape + (d, d))
    o = 0
    lead = 0
    for f in factors:
        df = f.grid.dim
        shape = (1,) * lead + f.grid.shape + (1,) * (d - lead - df) + (df, df)
        g[..., o:o + df, o:o + df] = f.g.reshape(shape)
        o += df
        lead += df
    return MetricField(grid, g)


# ---------------------------------------------------------------------------
# curvature

def christoffel(metric):
    """Christoffel symbols of the second kind, ``gamma[..., l, i, j]``."""
    grid = metric.grid
    ginv = metric.inverse
    dg = np.stack([diff(grid, metric.g, a) for a in range(grid.dim)], axis=-3)  # [..., a, b, c] = d_a g_bc
    t = (np.einsum("...ijm->...mij", dg) + np.einsum("...jim->...mij", dg)) - dg
    gam = 0.5 * np.einsum("...lm,...mij->...lij", ginv, t)
    return 0.5 * (gam + np.swapaxes(gam, -1, -2))


def ricci(metric, gamma=None):
    """Ricci tensor from the Christoffel symbols.

    The contracted term is taken as the Hessian of ``log |det g| / 2`` so
    that the result is symmetric before the final symmetrization, which
    only removes rounding-level asymmetry.
    """
    grid = metric.grid
    d = grid.dim
    gam = christoffel(metric) if gamma is None else gamma
    ric = np.zeros(grid.shape + (d, d))
    for l in range(d):
        ric += diff(grid, gam[..., l, :, :], l)
    half_logdet = 0.5 * np.log(np.abs(metric.det))
    for i in range(d):
        for j in range(i, d):
            v = diff2(grid, half_logdet, i, j)
            ric[..., i, j] -= v
            if j != i:
                ric[..., j, i] -= v
    ric += np.einsum("...llm,...mij->...ij", gam, gam)
    ric -= np.einsum("...ljm,...mil->...ij", gam, gam)
    return 0.5 * (ric + np.swapaxes(ric, -1, -2))


def scalar_curvature(metric, ric=None):
    ric = ricci(metric) if ric is None else ric
    return np.einsum("...ij,...ij->...", metric.inverse, ric)


# ---------------------------------------------------------------------------
# first- and second-order operators

def gradient_sq(metric, f):
    """``g^{ij} df_i df_j``."""
    df = gradient(metric.grid, f)
    return np.einsum("...ij,...i,...j->...", metric.inverse, df, df)


def metric_inner(metric, f, c):
    """``g^{ij} df_i dc_j``."""
    df = gradient(metric.grid, f)
    dc = gradient(metric.grid, c)
    return np.einsum("...ij,...i,...j->...", metric.inverse, df, dc)


def hessian(metric, f, gamma=None):
    """Covariant Hessian ``d_i d_j f - Gamma^l_ij d_l f``."""
    grid = metric.grid
    d = grid.dim
    gam = christoffel(metric) if gamma is None else gamma
    h = np.empty(grid.shape + (d, d))
    for i in range(d):
        for j in range(i, d):
            h[..., i, j] = diff2(grid, f, i, j)
            h[..., j, i] = h[..., i, j]
    h -= np.einsum("...lij,...l->...ij", gam, gradient(grid, f))
    return 0.5 * (h + np.swapaxes(h, -1, -2))


def laplace_beltrami(metric, f):
    """Laplace-Beltrami operator in divergence form.

    With ``scheme="fd2"`` this applies the sparse stiffness matrix, so the
    result is self-adjoint with respect to :attr:`MetricField.weights`.
    Open axes carry a zero-flux closure.
    """
    grid = metric.grid
    f = np.asarray(f, dtype=float)
    if grid.scheme == "fd2":
        out = metric.stiffness @ f.reshape(-1)
        return out.reshape(grid.shape) / metric.density
    rho = metric.density
    a = rho[..., None, None] * metric.inverse
    df = gradient(grid, f)
    flux = np.einsum("...ij,...j->...i", a, df)
    div = sum(diff(grid, flux[..., i], i) for i in range(grid.dim))
    return div / rho


def integrate(metric, f):
    """Riemannian integral of a scalar field using the volume weights."""
    return float(np.sum(f * metric.weights))


def volume(metric):
    return float(np.sum(metric.weights))


# ---------------------------------------------------------------------------
# fd2 matrices

def _forward_1d(ax):
    n, h = ax.n, ax.spacing
    fw = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n), format="lil")
    if ax.periodic:
        fw[n - 1, 0] = 1.0
    else:
        fw[n - 1, n - 1] = 0.0
    return fw.tocsr() / h


def _central_1d(ax):
    n, h = ax.n, ax.spacing
    c = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="lil")
    if ax.periodic:
        c[0, n - 1] = -1.0
        c[n - 1, 0] = 1.0
    else:
        c[0, :3] = [-3.0, 4.0, -1.0]
        c[n - 1, n - 3:] = [1.0, -4.0, 3.0]
    return c.tocsr() / (2.0 * h)


def _lift(grid, axis, mat):
    mats = [sp.identity(n, format="csr") for n in grid.shape]
    mats[axis] = mat
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


def _half_average(grid, a, axis):
    ax = grid.axes[axis]
    if ax.periodic:
        return 0.5 * (a + np.roll(a, -1, axis=axis))
    am = np.moveaxis(a, axis, 0)
    out = np.empty_like(am)
    out[:-1] = 0.5 * (am[:-1] + am[1:])
    out[-1] = am[-1]
    return np.moveaxis(out, 0, axis)


def _flux_coefficients(metric):
    return metric.density[..., None, None] * metric.inverse


def _stiffness_matrix(metric):
    """Symmetric matrix ``K`` with ``Delta f = (K f) / density``."""
    grid = metric.grid
    a = _flux_coefficients(metric)
    n = grid.size
    k = sp.csr_matrix((n, n))
    fw = [_lift(grid, i, _forward_1d(ax)) for i, ax in enumerate(grid.axes)]
    cd = [_lift(grid, i, _central_1d(ax)) for i, ax in enumerate(grid.axes)]
    for i in range(grid.dim):
        ah = _half_average(grid, a[..., i, i], i).reshape(-1)
        k = k - fw[i].T @ sp.diags(ah) @ fw[i]
        for j in range(grid.dim):
            if j != i and np.any(a[..., i, j] != 0.0):
                k = k - cd[i].T @ sp.diags(a[..., i, j].reshape(-1)) @ cd[j]
    return k.tocsr()


def _forward(grid, f, axis):
    ax = grid.axes[axis]
    out = (np.roll(f, -1, axis=axis) - f) / ax.spacing
    if not ax.periodic:
        sl = [slice(None)] * f.ndim
        sl[axis] = -1
        out[tuple(sl)] = 0.0
    return out


def _central(grid, f, axis):
    ax = grid.axes[axis]
    if ax.periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * ax.spacing)
    return np.gradient(f, ax.spacing, axis=axis, edge_order=2)


def dirichlet_form(metric, f, w):
    """Discrete ``int g(grad f, grad w) dv`` in staggered gradient form.

    On an ``fd2`` grid this equals ``-int (Delta f) w dv`` up to rounding,
    which is the discrete integration-by-parts identity.
    """
    grid = metric.grid
    if grid.scheme != "fd2":
        df = gradient(grid, f)
        dw = gradient(grid, w)
        return integrate(metric, np.einsum("...ij,...i,...j->...", metric.inverse, df, dw))
    a = _flux_coefficients(metric)
    total = np.zeros(grid.shape)
    for i in range(grid.dim):
        total += _half_average(grid, a[..., i, i], i) * _forward(grid, f, i) * _forward(grid, w, i)
        for j in range(grid.dim):
            if j != i:
                total += a[..., i, j] * _central(grid, f, j) * _central(grid, w, i)
    return float(np.sum(total) * grid.cell_volume)


# ---------------------------------------------------------------------------
# fibers

FIBER_KINDS = ("flat", "sphere", "einstein")


@dataclass(frozen=True)
class FiberModel:
    """Analytic fiber ``(F_k, g_F)`` with Einstein-type Ricci tensor.

    Parameters
    ----------
    k : int
        Fiber dimension; ``k = 0`` is the empty fiber.
    kind : {"flat", "sphere", "einstein"}
        ``Ric_F = 0``, ``((k-1)/r^2) g_F`` or ``nu g_F``.
    radius : float
        Sphere radius.
    nu : float
        Einstein constant.
    sign : int
        Sign of a one-dimensional flat fiber metric (``-1`` gives ``-dy^2``).
    """

    k: int
    kind: str = "flat"
    radius: float = 1.0
    nu: float = 0.0
    sign: int = 1

    def __post_init__(self):
        if self.k < 0 or int(self.k) != self.k:
            raise GeometryError(f"fiber dimension must be a nonnegative integer, got {self.k}")
        if self.kind not in FIBER_KINDS:
            raise GeometryError(f"unknown fiber kind {self.kind!r}")
        if self.kind == "sphere" and not self.radius > 0:
            raise GeometryError("sphere radius must be positive")
        if self.sign not in (1, -1) or (self.sign == -1 and (self.k != 1 or self.kind != "flat")):
            raise GeometryError("negative fiber sign is only supported for a flat line")

    @property
    def ricci_constant(self):
        """``c`` with ``Ric_F = c g_F``."""
        if self.kind == "flat" or self.k == 0:
            return 0.0
        if self.kind == "sphere":
            return (self.k - 1) / self.radius ** 2
        return float(self.nu)

    @property
    def scalar_curvature(self):
        return self.k * self.ricci_constant

    def realize(self, n=8, length=2.0 * math.pi, scheme="fd2"):
        """Grid realization of the fiber metric.

        Flat fibers become flat tori (or a signed line for ``k = 1``); the
        round 2-sphere uses the colatitude chart with ``n`` points per axis.
        """
        if self.k == 0:
            raise GeometryError("the empty fiber has no grid realization")
        if self.kind == "flat":
            m = torus((n,) * self.k, length, scheme)
            return MetricField(m.grid, self.sign * m.g) if self.sign < 0 else m
        if self.kind == "sphere" and self.k == 2:
            return sphere2(n, n, self.radius)
        raise GeometryError(f"no grid realization for fiber kind {self.kind!r} with k={self.k}")
