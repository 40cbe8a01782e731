"""Power-sum operators and their one-power reductions.

An operator spec is a list of terms ``(r_i, a_i)``.  It acts on a positive
field ``v`` as

    L v = sum_i r_i Lap(v^a_i) / v^a_i,      H v = sum_i r_i Hess(v^a_i) / v^a_i.

With ``zeta = sum r_i a_i`` and ``eta = sum r_i a_i^2`` both collapse to a
single power: ``L v = beta Lap(v^(1/alpha)) / v^(1/alpha)`` with
``alpha = zeta/eta`` and ``beta = zeta^2/eta`` (and likewise for ``H``).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import geometry as geo
from .exponents import as_number


class ReductionUndefined(ValueError):
    """``zeta`` or ``eta`` vanishes."""


@dataclass(frozen=True)
class OperatorSpec:
    terms: tuple

    def __post_init__(self):
        terms = tuple((as_number(r), as_number(a)) for r, a in self.terms)
        if not terms:
            raise ValueError("operator spec needs at least one term")
        object.__setattr__(self, "terms", terms)

    @property
    def zeta(self):
        return sum((r * a for r, a in self.terms), Fraction(0))

    @property
    def eta(self):
        return sum((r * a * a for r, a in self.terms), Fraction(0))

    def __add__(self, other):
        return OperatorSpec(self.terms + other.terms)


@dataclass(frozen=True)
class ReductionResult:
    zeta: object
    eta: object
    alpha: object
    beta: object


def reduce_L(spec):
    """Single-power reduction ``(alpha, beta) = (zeta/eta, zeta^2/eta)``."""
    z, e = spec.zeta, spec.eta
    if z == 0 or e == 0:
        raise ReductionUndefined(f"reduction needs zeta != 0 and eta != 0 (zeta={z}, eta={e})")
    res = ReductionResult(z, e, z / e, z * z / e)
    if isinstance(z, Fraction) and isinstance(e, Fraction) and res.beta * e != z * z:
        raise ArithmeticError("beta * eta != zeta^2")
    return res


def _positive(v):
    v = np.asarray(v, dtype=float)
    if not np.all(v > 0):
        raise ValueError("field must be strictly positive")
    return v


def apply_L(spec, metric, v):
    v = _positive(v)
    out = np.zeros_like(v)
    for r, a in spec.terms:
        if a == 0:
            continue
        va = v ** float(a)
        out += float(r) * geo.laplace_beltrami(metric, va) / va
    return out


def apply_H(spec, metric, v):
    v = _positive(v)
    d = metric.grid.dim
    gam = geo.christoffel(metric)
    out = np.zeros(v.shape + (d, d))
    for r, a in spec.terms:
        if a == 0:
            continue
        va = v ** float(a)
        out += float(r) * geo.hessian(metric, va, gam) / va[..., None, None]
    return out


def L_identity_rhs(spec, metric, v):
    """``(eta - zeta)|grad v|^2/v^2 + zeta Lap v / v``."""
    z, e = float(spec.zeta), float(spec.eta)
    return (e - z) * geo.gradient_sq(metric, v) / v ** 2 + z * geo.laplace_beltrami(metric, v) / v


def H_identity_rhs(spec, metric, v):
    """``(eta - zeta) dv (x) dv / v^2 + zeta Hess v / v``."""
    z, e = float(spec.zeta), float(spec.eta)
    dv = geo.gradient(metric.grid, v)
    outer = dv[..., :, None] * dv[..., None, :]
    return (e - z) * outer / (v ** 2)[..., None, None] + z * geo.hessian(metric, v) / v[..., None, None]


def L_reduced(spec, metric, v):
    red = reduce_L(spec)
    w = v ** (1.0 / float(red.alpha))
    return float(red.beta) * geo.laplace_beltrami(metric, w) / w


def H_reduced(spec, metric, v):
    red = reduce_L(spec)
    w = v ** (1.0 / float(red.alpha))
    return float(red.beta) * geo.hessian(metric, w) / w[..., None, None]


def verify_reductions(metric, v, spec):
    """Sup-norm residuals of the identities and reductions.

    Reduction residuals are None when ``zeta`` or ``eta`` vanish.  The
    identities are exact for the continuous operators, so they should be
    checked with the spectral scheme; on ``fd2`` grids they hold to O(h^2).
    """
    v = _positive(v)
    lv = apply_L(spec, metric, v)
    hv = apply_H(spec, metric, v)
    scale_l = max(1.0, float(np.max(np.abs(lv))))
    scale_h = max(1.0, float(np.max(np.abs(hv))))
    report = {
        "L_identity": float(np.max(np.abs(lv - L_identity_rhs(spec, metric, v)))) / scale_l,
        "H_identity": float(np.max(np.abs(hv - H_identity_rhs(spec, metric, v)))) / scale_h,
        "L_reduction": None,
        "H_reduction": None,
    }
    try:
        reduce_L(spec)
    except ReductionUndefined:
        return report
    report["L_reduction"] = float(np.max(np.abs(lv - L_reduced(spec, metric, v)))) / scale_l
    report["H_reduction"] = float(np.max(np.abs(hv - H_reduced(spec, metric, v)))) / scale_h
    return report


# ---------------------------------------------------------------------------
# operator specs arising from the (psi, mu) metrics

def gradient_term(coeff):
    """Terms representing ``coeff |grad v|^2 / v^2`` (or ``coeff dv (x) dv / v^2``)."""
    coeff = as_number(coeff)
    return ((coeff / 2, 2), (-coeff, 1))


def _merge(terms):
    acc = {}
    for r, a in terms:
        acc[a] = acc.get(a, 0) + r
    return OperatorSpec(tuple((r, a) for a, r in sorted(acc.items()) if r != 0))


def scalar_operator_spec(m, k, mu):
    """Operator whose reduction gives the scalar-curvature ``(alpha, beta)``.

    It is minus the derivative part of ``c^2 S`` for ``c = psi^mu``,
    ``w = psi``.
    """
    mu = as_number(mu)
    grad = (m - 4) * (m - 1) * mu ** 2 + 2 * k * (m - 2) * mu + k * (k - 1)
    return _merge(((2 * (m - 1), mu), (2 * k, 1)) + gradient_term(grad))


def ricci_laplacian_spec(m, k, mu):
    """Operator of the ``g_B`` term of the base Ricci block."""
    mu = as_number(mu)
    return _merge(((1, mu),) + gradient_term((m - 3) * mu ** 2 + k * mu))


def ricci_hessian_spec(m, k, mu):
    """Operator of the Hessian term of the base Ricci block (sign included)."""
    mu = as_number(mu)
    return _merge(((-(m - 2), mu), (-k, 1)) + gradient_term(2 * (m - 2) * mu ** 2 + 2 * k * mu))


def fiber_laplacian_spec(m, k, mu):
    """Operator of the fiber Ricci factor ``(w^2/c^2)[...]``."""
    mu = as_number(mu)
    return _merge(((1, 1),) + gradient_term((m - 2) * mu + k - 1))
