"""Base-conformal warped products ``g = c^2 g_B + w^2 g_F`` and their curvature.

Closed forms are evaluated with the discrete operators of
:mod:`bcwp.geometry` on the base grid; the brute-force route assembles the
full product metric on a gridded fiber and differentiates it directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import geometry as geo
from .exponents import alpha_beta, as_number, exponents, mu_sc, special_mu


class SingularMuError(ValueError):
    """``mu`` is in the exclusion set of the Ricci coefficients."""


def _positive(name, f):
    f = np.asarray(f, dtype=float)
    if not np.all(f > 0):
        raise ValueError(f"{name} must be strictly positive (min {float(np.min(f)):.3e})")
    return f


@dataclass(eq=False)
class BcwpSpec:
    """``c^2 g_B + w^2 g_F`` with ``c, w`` positive fields on the base grid.

    ``S_B`` may be given to override the curvature computed from ``base``.
    """

    base: geo.MetricField
    fiber: geo.FiberModel
    c: np.ndarray
    w: np.ndarray
    S_B: np.ndarray | None = None

    def __post_init__(self):
        shape = self.base.grid.shape
        self.c = np.broadcast_to(_positive("c", self.c), shape)
        self.w = np.broadcast_to(_positive("w", self.w), shape)

    @property
    def m(self):
        return self.base.grid.dim

    @property
    def k(self):
        return self.fiber.k

    def base_scalar_curvature(self):
        if self.S_B is not None:
            return np.broadcast_to(np.asarray(self.S_B, dtype=float), self.base.grid.shape)
        return geo.scalar_curvature(self.base)


@dataclass(eq=False)
class SbcwpSpec:
    """``(psi, mu)`` metric: ``c = psi^mu``, ``w = psi``."""

    base: geo.MetricField
    fiber: geo.FiberModel
    psi: np.ndarray
    mu: object
    S_B: np.ndarray | None = None

    def __post_init__(self):
        self.psi = np.broadcast_to(_positive("psi", self.psi), self.base.grid.shape)
        self.mu = as_number(self.mu)

    @property
    def m(self):
        return self.base.grid.dim

    @property
    def k(self):
        return self.fiber.k

    def as_bcwp(self):
        mu = float(self.mu)
        return BcwpSpec(self.base, self.fiber, self.psi ** mu, self.psi, self.S_B)

    def base_scalar_curvature(self):
        return self.as_bcwp().base_scalar_curvature()


# ---------------------------------------------------------------------------
# assembly

def assemble_product_metric(spec, fiber_metric):
    """Block-diagonal metric on ``base x fiber`` with lifted ``c, w``."""
    base = spec.base
    if fiber_metric.grid.dim != spec.fiber.k:
        raise geo.GeometryError(f"fiber grid has dim {fiber_metric.grid.dim}, fiber model has k={spec.fiber.k}")
    grid = base.grid.product(fiber_metric.grid)
    m, k = base.grid.dim, fiber_metric.grid.dim
    bpad = base.grid.shape + (1,) * k
    fpad = (1,) * m + fiber_metric.grid.shape
    c2 = (spec.c ** 2).reshape(bpad)
    w2 = (spec.w ** 2).reshape(bpad)
    g = np.zeros(grid.shape + (m + k, m + k))
    g[..., :m, :m] = c2[..., None, None] * base.g.reshape(bpad + (m, m))
    g[..., m:, m:] = w2[..., None, None] * fiber_metric.g.reshape(fpad + (k, k))
    return geo.MetricField(grid, g)


def fiber_slice(field, m, fiber_shape, index=None):
    """Restrict a product-grid field to one fiber point (default: centre)."""
    if index is None:
        index = tuple(n // 2 for n in fiber_shape)
    return field[(slice(None),) * m + tuple(index)]


# ---------------------------------------------------------------------------
# [c, w] closed forms

@dataclass
class RicciBlocks:
    """Ricci tensor of a warped product split into blocks.

    ``bb`` is the base block, ``bf`` the mixed block (zero) and the fiber
    block is ``Ric_F - ff_factor * g_F``; with ``Ric_F = nu g_F`` it is
    ``(nu - ff_factor) g_F``.
    """

    bb: np.ndarray
    bf: np.ndarray
    ff_factor: np.ndarray
    fiber: geo.FiberModel

    def fiber_block(self, g_f):
        """Fiber block for fiber metric components ``g_f`` (shape ``(k, k)``)."""
        coeff = self.fiber.ricci_constant - self.ff_factor
        return coeff[..., None, None] * np.asarray(g_f)

    def trace(self, spec):
        """Scalar curvature ``c^-2 tr_B(bb) + w^-2 (S_F - k ff_factor)``."""
        tr = np.einsum("...ij,...ij->...", spec.base.inverse, self.bb)
        return tr / spec.c ** 2 + (spec.fiber.scalar_curvature - spec.k * self.ff_factor) / spec.w ** 2


def scalar_bcwp_closed_form(spec):
    """Scalar curvature of ``c^2 g_B + w^2 g_F`` from base quantities."""
    b = spec.base
    m, k = spec.m, spec.k
    c, w = spec.c, spec.w
    lc = geo.laplace_beltrami(b, c) / c
    lw = geo.laplace_beltrami(b, w) / w
    gc = geo.gradient_sq(b, c) / c ** 2
    gw = geo.gradient_sq(b, w) / w ** 2
    gcw = geo.metric_inner(b, w, c) / (w * c)
    rhs = (spec.base_scalar_curvature() + spec.fiber.scalar_curvature * c ** 2 / w ** 2
           - 2 * (m - 1) * lc - 2 * k * lw - (m - 4) * (m - 1) * gc
           - 2 * k * (m - 2) * gcw - k * (k - 1) * gw)
    return rhs / c ** 2


def ricci_bcwp_closed_form(spec, ric_b=None):
    """Ricci blocks of ``c^2 g_B + w^2 g_F``."""
    b = spec.base
    grid = b.grid
    m, k = spec.m, spec.k
    c, w = spec.c, spec.w
    gam = geo.christoffel(b)
    ric_b = geo.ricci(b, gam) if ric_b is None else ric_b
    dc = geo.gradient(grid, c)
    dw = geo.gradient(grid, w)
    cc = c[..., None, None]
    ww = w[..., None, None]
    outer_cc = dc[..., :, None] * dc[..., None, :]
    outer_cw = dc[..., :, None] * dw[..., None, :]
    outer_cw = outer_cw + np.swapaxes(outer_cw, -1, -2)
    gc = geo.gradient_sq(b, c) / c ** 2
    gw = geo.gradient_sq(b, w) / w ** 2
    gcw = geo.metric_inner(b, w, c) / (w * c)
    lc = geo.laplace_beltrami(b, c) / c
    lw = geo.laplace_beltrami(b, w) / w
    bb = (ric_b
          - ((m - 2) * geo.hessian(b, c, gam) / cc + k * geo.hessian(b, w, gam) / ww)
          + 2 * (m - 2) * outer_cc / cc ** 2 + k * outer_cw / (ww * cc)
          - ((m - 3) * gc + lc + k * gcw)[..., None, None] * b.g)
    ff = (w ** 2 / c ** 2) * ((m - 2) * gcw + lw + (k - 1) * gw)
    bf = np.zeros(grid.shape + (m, k))
    return RicciBlocks(bb, bf, ff, spec.fiber)


# ---------------------------------------------------------------------------
# (psi, mu) closed forms

@dataclass(frozen=True)
class SbcwpCoefficients:
    alpha_D: object
    beta_D: object
    alpha_H: object
    beta_H: object
    singular_flags: tuple


def sbcwp_coefficients(m, k, mu, strict=True):
    """Coefficients of the one-power form of the Ricci blocks.

    Parameters
    ----------
    strict : bool
        Raise :class:`SingularMuError` at excluded ``mu``; otherwise return
        None coefficients and the raised flags.
    """
    if m < 3 or k < 1:
        raise ValueError(f"need m >= 3 and k >= 1, got (m, k) = ({m}, {k})")
    mu = as_number(mu)
    sp_mu = special_mu(m, k)
    flags = []
    if mu == 0:
        flags.append("mu=0")
    if mu == 1:
        flags.append("mu=1")
    if mu == sp_mu.mu_bar:
        flags.append("mu=mu_bar")
    for name, s in (("mu=mu_bar_minus", sp_mu.mu_bar_minus), ("mu=mu_bar_plus", sp_mu.mu_bar_plus)):
        hit = s.equals(mu) if isinstance(mu, Fraction) else float(s) == mu
        if hit:
            flags.append(name)
    if flags:
        if strict:
            raise SingularMuError(f"mu = {mu} is excluded for (m, k) = ({m}, {k}): {', '.join(flags)}")
        return SbcwpCoefficients(None, None, None, None, tuple(flags))
    lin = (m - 2) * mu + k
    den_h = mu * lin + k * (mu - 1)
    a_d = 1 / lin if isinstance(lin, Fraction) else 1.0 / lin
    b_d = mu * a_d
    a_h = -lin / den_h
    b_h = lin ** 2 / den_h
    if isinstance(mu, Fraction) and (b_d != mu * a_d or b_h != -lin * a_h):
        raise ArithmeticError("coefficient identities failed")
    return SbcwpCoefficients(a_d, b_d, a_h, b_h, ())


def _sbcwp_parts(spec):
    co = sbcwp_coefficients(spec.m, spec.k, spec.mu)
    b = spec.base
    psi = spec.psi
    pd = psi ** (1.0 / float(co.alpha_D))
    ph = psi ** (1.0 / float(co.alpha_H))
    lap_term = float(co.beta_D) * geo.laplace_beltrami(b, pd) / pd
    hess_term = float(co.beta_H) * geo.hessian(b, ph) / ph[..., None, None]
    return co, lap_term, hess_term


def ricci_sbcwp(spec, ric_b=None):
    """Ricci blocks of the ``(psi, mu)`` metric in one-power form."""
    co, lap_term, hess_term = _sbcwp_parts(spec)
    b = spec.base
    ric_b = geo.ricci(b) if ric_b is None else ric_b
    mu = float(spec.mu)
    bb = ric_b + hess_term - lap_term[..., None, None] * b.g
    ff = spec.psi ** (-2.0 * (mu - 1.0)) * lap_term / mu
    bf = np.zeros(b.grid.shape + (spec.m, spec.k))
    return RicciBlocks(bb, bf, ff, spec.fiber)


@dataclass
class ReducedScalar:
    u: np.ndarray
    S: np.ndarray
    alpha: object
    beta: object
    p: object
    q: object


def scalar_sbcwp_reduced(spec):
    """Scalar curvature from ``-beta Lap u + S_B u = S u^p - S_F u^q``, ``psi = u^alpha``."""
    m, k, mu = spec.m, spec.k, spec.mu
    alpha, beta = alpha_beta(m, k, mu)
    p, q = exponents(m, k, mu)
    u = spec.psi ** (1.0 / float(alpha))
    lu = geo.laplace_beltrami(spec.base, u)
    s_b = spec.base_scalar_curvature()
    s_f = spec.fiber.scalar_curvature
    S = (-float(beta) * lu + s_b * u + s_f * u ** float(q)) / u ** float(p)
    return ReducedScalar(u, S, alpha, beta, p, q)


@dataclass
class SpecialScalar:
    residual: np.ndarray
    S: np.ndarray


def scalar_sbcwp_special(spec, S=None):
    """Residual of the gradient identity at ``mu = -k/(m-1)``.

    Returns the field ``LHS - RHS`` of
    ``-k(1 + k/(m-1)) |grad psi|^2/psi^2 = psi^(-2k/(m-1)) (S - S_F psi^-2) - S_B``
    with ``S`` from the closed form unless given, and the value of ``S``
    that makes the identity hold exactly.
    """
    m, k = spec.m, spec.k
    if spec.mu != mu_sc(m, k):
        raise ValueError(f"special form needs mu = {mu_sc(m, k)}, got {spec.mu}")
    psi = spec.psi
    s_b = spec.base_scalar_curvature()
    s_f = spec.fiber.scalar_curvature
    expo = 2.0 * k / (m - 1)
    lhs = -k * (1.0 + k / (m - 1)) * geo.gradient_sq(spec.base, psi) / psi ** 2
    if S is None:
        S = scalar_bcwp_closed_form(spec.as_bcwp())
    rhs = psi ** (-expo) * (S - s_f * psi ** -2.0) - s_b
    s_exact = psi ** expo * (lhs + s_b) + s_f * psi ** -2.0
    return SpecialScalar(lhs - rhs, s_exact)


def scalar_sbcwp(spec):
    """Scalar curvature by the one-power route, special form at ``mu_sc``."""
    if spec.mu == mu_sc(spec.m, spec.k):
        return scalar_sbcwp_special(spec).S
    return scalar_sbcwp_reduced(spec).S


def einstein_residual(spec, lam, nu):
    """Residuals of the Einstein system for the ``(psi, mu)`` metric.

    Returns ``(base, fiber)`` with ``base = bb - lam psi^(2 mu) g_B`` and
    ``fiber = (nu - ff_factor) - lam psi^2``.
    """
    blocks = ricci_sbcwp(spec)
    mu = float(spec.mu)
    base = blocks.bb - (lam * spec.psi ** (2.0 * mu))[..., None, None] * spec.base.g
    fiber = (nu - blocks.ff_factor) - lam * spec.psi ** 2
    return base, fiber


# ---------------------------------------------------------------------------
# brute force

def brute_force_scalar(spec, fiber_metric, index=None):
    """Scalar curvature of the assembled product, restricted to a fiber point."""
    bc = spec.as_bcwp() if isinstance(spec, SbcwpSpec) else spec
    prod = assemble_product_metric(bc, fiber_metric)
    return fiber_slice(geo.scalar_curvature(prod), spec.m, fiber_metric.grid.shape, index)


def brute_force_ricci(spec, fiber_metric, index=None):
    """Ricci tensor of the assembled product split into (bb, bf, ff) blocks."""
    bc = spec.as_bcwp() if isinstance(spec, SbcwpSpec) else spec
    prod = assemble_product_metric(bc, fiber_metric)
    ric = fiber_slice(geo.ricci(prod), spec.m, fiber_metric.grid.shape, index)
    m = spec.m
    return ric[..., :m, :m], ric[..., :m, m:], ric[..., m:, m:]


# ---------------------------------------------------------------------------
# nested construction

@dataclass(eq=False)
class SchwarzschildNesting:
    inner: SbcwpSpec
    outer: SbcwpSpec
    assembled: geo.MetricField
    direct: geo.MetricField
    max_abs_diff: float
    fiber_factor_diff: float


def schwarzschild_nested(u_profile, s_axis, y_axis, fiber=None, sign=-1, fiber_n=4):
    """Nest two ``(psi, mu)`` metrics into ``u^-2 dr^2 + sign u^2 dt^2 + r^2 g_F``.

    Parameters
    ----------
    u_profile : callable or ndarray
        Positive ``u(r)``, or samples of ``u(sqrt(s))`` on the ``s`` axis.
    s_axis, y_axis : geometry.Axis
        Interval axes for ``s = r^2`` (inside ``s > 0``) and ``y = t/2``.
    fiber : FiberModel, optional
        Outer fiber; a flat 2-torus by default.
    sign : {1, -1}
        Sign of the ``dt^2`` term.
    """
    fiber = geo.FiberModel(2) if fiber is None else fiber
    s = s_axis.points()
    if not np.all(s > 0):
        raise ValueError("s axis must lie in s > 0")
    u = u_profile(np.sqrt(s)) if callable(u_profile) else np.asarray(u_profile, dtype=float)
    u = _positive("u_profile", u)
    line = geo.MetricField(geo.GridManifold((s_axis,)), np.ones((s_axis.n, 1, 1)))
    y_fiber = geo.FiberModel(1, sign=sign)
    y_metric = geo.MetricField(geo.GridManifold((y_axis,)), sign * np.ones((y_axis.n, 1, 1)))
    psi1 = 2.0 * s ** 0.25 * u
    inner = SbcwpSpec(line, y_fiber, psi1, -1)
    inner_metric = assemble_product_metric(inner.as_bcwp(), y_metric)
    ss, _ = inner_metric.grid.mesh()
    outer = SbcwpSpec(inner_metric, fiber, np.sqrt(ss), Fraction(-1, 2))
    f_metric = fiber.realize(fiber_n)
    assembled = assemble_product_metric(outer.as_bcwp(), f_metric)
    # direct form pulled back by r = sqrt(s), t = 2y
    grid = assembled.grid
    mesh = grid.mesh()
    sg = mesh[0]
    ug = np.broadcast_to(u.reshape((-1,) + (1,) * (grid.dim - 1)), grid.shape)
    g = np.zeros_like(assembled.g)
    g[..., 0, 0] = 1.0 / (4.0 * sg * ug ** 2)
    g[..., 1, 1] = sign * 4.0 * ug ** 2
    fpad = (1, 1) + f_metric.grid.shape + f_metric.g.shape[-2:]
    g[..., 2:, 2:] = sg[..., None, None] * f_metric.g.reshape(fpad)
    direct = geo.MetricField(grid, g)
    diff = float(np.max(np.abs(assembled.g - direct.g)))
    factor = outer.psi ** 2
    fdiff = float(np.max(np.abs(factor - ss)))
    return SchwarzschildNesting(inner, outer, assembled, direct, diff, fdiff)
