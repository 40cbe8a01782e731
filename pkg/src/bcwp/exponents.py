"""Exponent algebra and regime classification of the reduced equation.

For a base of dimension ``m``, a fiber of dimension ``k`` and a
conformal exponent ``mu`` the scalar-curvature equation reduces to

    -beta Lap u + S_B u = S u^p - S_F u^q,   psi = u^alpha.

Everything here is exact when ``mu`` is rational (``int``, ``Fraction``
or a string such as ``"-1/2"``); floats fall back to float arithmetic.
Irrational roots of the integer quadratics are carried as
:class:`QuadraticSurd` values so that boundary cases compare exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from fractions import Fraction

REGIME_LABELS = (
    "linear",
    "sublinear",
    "superlinear-subcritical",
    "critical",
    "supercritical",
    "q-negative-singular",
    "q-zero",
    "concave-convex",
    "q-one",
    "deferred",
)


class UndefinedAlphaError(ValueError):
    """``mu`` equals ``-k/(m-1)``, where the reduction has no exponent."""


def as_number(x):
    """Exact ``Fraction`` for rational input, ``float`` otherwise."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("boolean is not a number")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, str):
        return Fraction(x.strip())
    if hasattr(x, "dtype") and getattr(x.dtype, "kind", "") in "iu":
        return Fraction(int(x))
    return float(x)


def _squarefree(d):
    """Split a positive integer as ``s^2 * r`` with ``r`` squarefree."""
    s, r, f = 1, d, 2
    while f * f <= r:
        while r % (f * f) == 0:
            r //= f * f
            s *= f
        f += 1
    return s, r


@dataclass(frozen=True)
class QuadraticSurd:
    """Exact real number ``a + b*sqrt(d)`` with ``d`` squarefree."""

    a: Fraction
    b: Fraction = Fraction(0)
    d: int = 0

    @classmethod
    def make(cls, a, b, d):
        a, b, d = Fraction(a), Fraction(b), int(d)
        if d < 0:
            raise ValueError("negative radicand")
        if d == 0 or b == 0:
            return cls(a)
        s, r = _squarefree(d)
        if r == 1:
            return cls(a + b * s)
        return cls(a, b * s, r)

    @property
    def rational(self):
        return self.b == 0

    def __float__(self):
        return float(self.a) + float(self.b) * math.sqrt(self.d)

    def sign_minus(self, x):
        """Sign of ``self - x``."""
        if not isinstance(x, Fraction):
            v = float(self) - float(x)
            return (v > 0) - (v < 0)
        y = self.a - x
        if self.b == 0:
            return (y > 0) - (y < 0)
        sb = 1 if self.b > 0 else -1
        sy = (y > 0) - (y < 0)
        if sy == sb or sy == 0:
            return sb
        lhs, rhs = y * y, self.b * self.b * self.d
        if lhs > rhs:
            return sy
        return sb if lhs < rhs else 0

    def equals(self, x):
        return self.sign_minus(x) == 0

    def __str__(self):
        if self.b == 0:
            return str(self.a)
        return f"{self.a} + {self.b}*sqrt({self.d})"


def quadratic_roots(a, b, c):
    """Real roots of ``a x^2 + b x + c`` with ``a != 0``.

    Returns
    -------
    disc : Fraction
        Discriminant ``b^2 - 4ac``.
    roots : tuple of QuadraticSurd
        Ascending; a double root is returned once.
    double : bool
        True when the discriminant vanishes.
    """
    a, b, c = Fraction(a), Fraction(b), Fraction(c)
    if a == 0:
        raise ValueError("leading coefficient vanishes")
    disc = b * b - 4 * a * c
    if disc < 0:
        return disc, (), False
    centre = -b / (2 * a)
    if disc == 0:
        return disc, (QuadraticSurd.make(centre, 0, 0),), True
    # sqrt(disc) = sqrt(num/den) = sqrt(num*den)/den
    num, den = disc.numerator, disc.denominator
    half = Fraction(1, 2 * den) / a
    r1 = QuadraticSurd.make(centre, -abs(half), num * den)
    r2 = QuadraticSurd.make(centre, abs(half), num * den)
    return disc, (r1, r2), False


# ---------------------------------------------------------------------------
# exponents

def _check_dims(m, k):
    if int(m) != m or int(k) != k or m < 2 or k < 0:
        raise ValueError(f"need integer m >= 2 and k >= 0, got (m, k) = ({m}, {k})")


def eta(m, k, mu):
    mu = as_number(mu)
    return (m - 1) * (m - 2) * mu ** 2 + 2 * (m - 2) * k * mu + (k + 1) * k


def varpi(m, k, mu):
    mu = as_number(mu)
    return (m - 1) * (m + 2) * mu ** 2 + 2 * m * k * mu + (k + 1) * k


def varrho(m, k, mu):
    mu = as_number(mu)
    return (m - 1) * (m + 2) * mu ** 2 + 2 * (m * k - 2 * (m - 1)) * mu + (k - 3) * k


def quadratics(m, k, mu):
    """``(eta, varpi, varrho)`` at ``(m, k, mu)``."""
    return eta(m, k, mu), varpi(m, k, mu), varrho(m, k, mu)


def mu_sc(m, k):
    return Fraction(-k, m - 1)


def alpha_beta(m, k, mu):
    """Conformal exponent ``alpha`` and Laplacian coefficient ``beta``.

    The denominator is evaluated in its factored form and checked against
    ``eta`` exactly for rational input.
    """
    _check_dims(m, k)
    mu = as_number(mu)
    lin = k + (m - 1) * mu
    if lin == 0:
        raise UndefinedAlphaError(f"alpha is undefined at mu = -k/(m-1) = {mu_sc(m, k)}")
    den = (lin + (1 - mu)) * k + (m - 2) * mu * lin
    if isinstance(mu, Fraction) and den != eta(m, k, mu):
        raise ArithmeticError("alpha denominator does not match eta")
    alpha = 2 * lin / den
    beta = alpha * 2 * lin
    return alpha, beta


def exponents(m, k, mu):
    """``(p, q)`` with ``p = 2 mu alpha + 1`` and ``q = p - 2 alpha``."""
    mu = as_number(mu)
    alpha, _ = alpha_beta(m, k, mu)
    p = 2 * mu * alpha + 1
    q = 2 * (mu - 1) * alpha + 1
    if isinstance(mu, Fraction):
        if q != p - 2 * alpha:
            raise ArithmeticError("q != p - 2 alpha")
        # p = varpi/eta and q = varrho/eta
        e, w, r = quadratics(m, k, mu)
        if p * e != w or q * e != r:
            raise ArithmeticError("exponents disagree with the quadratic forms")
    return p, q


def critical_exponent(m):
    """``(m+2)/(m-2)``, or None for ``m = 2``."""
    return None if m == 2 else Fraction(m + 2, m - 2)


@dataclass(frozen=True)
class DomainInfo:
    in_D: bool
    discriminant: Fraction
    mu_minus: QuadraticSurd | None
    mu_plus: QuadraticSurd | None
    double_root: bool


def domain_D(m, k):
    """Membership of ``(m, k)`` in the set where ``varrho`` has no real root."""
    _check_dims(m, k)
    disc, roots, double = quadratic_roots((m - 1) * (m + 2), 2 * (m * k - 2 * (m - 1)), (k - 3) * k)
    if not roots:
        return DomainInfo(True, disc, None, None, False)
    return DomainInfo(False, disc, roots[0], roots[-1], double)


@dataclass(frozen=True)
class SpecialMu:
    mu_sc: Fraction
    mu_pY: Fraction | None
    mu_bar: Fraction | None
    mu_bar_minus: QuadraticSurd | None
    mu_bar_plus: QuadraticSurd | None


def special_mu(m, k):
    """The distinguished exponents ``mu_sc``, ``mu_pY``, ``mu_bar``, ``mu_bar_pm``."""
    _check_dims(m, k)
    sc = mu_sc(m, k)
    if m == 2:
        return SpecialMu(sc, None, None, None, None)
    py = Fraction(-(k + 1), m - 2)
    bar = Fraction(-k, m - 2)
    if not py < sc < 0:
        raise ArithmeticError("expected mu_pY < mu_sc < 0")
    bm = bp = None
    if k > 0:
        # roots of mu[(m-2)mu + k] + k(mu - 1)
        _, (bm, bp), _ = quadratic_roots(m - 2, 2 * k, -k)
    return SpecialMu(sc, py, bar, bm, bp)


# ---------------------------------------------------------------------------
# classification

@dataclass(frozen=True)
class RegimeReport:
    m: int
    k: int
    mu: object
    sf_sign: int
    alpha: object
    beta: object
    p: object
    q: object
    eta: object
    varpi: object
    varrho: object
    in_D: bool
    mu_minus: QuadraticSurd | None
    mu_plus: QuadraticSurd | None
    special: SpecialMu
    p_Y: Fraction | None
    regime_label: str
    singular_mu: bool
    result: str
    strategy: str

    def as_record(self):
        """Flat dictionary of strings and floats for serialization."""
        def fmt(v):
            if v is None:
                return None
            if isinstance(v, (Fraction, QuadraticSurd)):
                return {"exact": str(v), "value": float(v)}
            if isinstance(v, float):
                return {"exact": None, "value": v}
            return v
        rec = {}
        for key in ("m", "k", "sf_sign", "regime_label", "singular_mu", "in_D", "result", "strategy"):
            rec[key] = getattr(self, key)
        for key in ("mu", "alpha", "beta", "p", "q", "eta", "varpi", "varrho", "mu_minus", "mu_plus", "p_Y"):
            rec[key] = fmt(getattr(self, key))
        for key, v in asdict(self.special).items():
            rec[key] = fmt(getattr(self.special, key))
        return rec


def _sign(x):
    return (x > 0) - (x < 0)


def _p_label(p, p_y):
    if p == 1:
        return "linear"
    if p < 1:
        return "sublinear"
    if p_y is None or p < p_y:
        return "superlinear-subcritical"
    if p == p_y:
        return "critical"
    return "supercritical"


_ROUTES = {
    "deferred": ("mu = mu_sc: the reduced equation is not studied", "out-of-scope"),
    "linear": ("solvable iff lambda = lambda_1; u is a positive multiple of u_1", "eigen"),
    "sublinear": ("solvable iff sign(lambda) = sign(lambda_1); lambda < 0 needs lambda_1 < 0 near 0",
                  "monotone (lambda > 0), eigen (lambda = 0), newton-empirical (lambda < 0)"),
    "superlinear-subcritical": ("solvable for lambda with sign(lambda) = sign(kappa_p), by scaling",
                                "variational"),
    "critical": ("as subcritical when kappa_pY < 1/K_m^2", "variational"),
    "supercritical": ("max S_B < 0 and lambda < 0: constant bracket", "bracket"),
    "q-negative-singular": ("lambda < 0 with a bracket a0 <= u <= a1", "bracket"),
    "q-zero": ("lambda < 0 with a bracket; lambda = 0 is linear", "bracket"),
    "concave-convex": ("lambda < 0 always; lambda_1 > 0 gives 0 <= lambda < Lambda_bar", "monotone"),
    "q-one": ("fiber term is linear and folds into the potential", "monotone"),
}


def classify(m, k, mu, sf_sign=0):
    """Regime report for ``(m, k, mu)`` and the sign of ``S_F``.

    Boundary values of ``p`` and ``q`` get their own labels.  A positive
    fiber curvature is labelled by ``p`` but routed out of scope.
    """
    _check_dims(m, k)
    mu = as_number(mu)
    sf_sign = _sign(sf_sign)
    e, w, r = quadratics(m, k, mu)
    dom = domain_D(m, k) if k >= 1 else DomainInfo(False, Fraction(0), None, None, False)
    spec = special_mu(m, k)
    p_y = critical_exponent(m)
    singular = False
    if k >= 1 and m >= 3:
        for v in (Fraction(0), Fraction(1), spec.mu_bar):
            singular |= (mu == v)
        for s in (spec.mu_bar_minus, spec.mu_bar_plus):
            singular |= s.equals(mu) if isinstance(mu, Fraction) else abs(float(s) - mu) == 0
    if mu == spec.mu_sc:
        alpha = beta = p = q = None
        label = "deferred"
    else:
        alpha, beta = alpha_beta(m, k, mu)
        p, q = exponents(m, k, mu)
        label = _p_label(p, p_y)
        if sf_sign < 0:
            if q < 0:
                label = "q-negative-singular"
            elif q == 0:
                label = "q-zero"
            elif q == 1:
                label = "q-one"
            elif 0 < q < 1 < p:
                label = "concave-convex"
    result, strategy = _ROUTES[label]
    if sf_sign > 0:
        strategy = "out-of-scope"
        result = "positive fiber curvature is not covered"
    return RegimeReport(m, k, mu, sf_sign, alpha, beta, p, q, e, w, r, dom.in_D,
                        dom.mu_minus, dom.mu_plus, spec, p_y, label, singular, result, strategy)


def regime_series(m, k, mus):
    """Rows ``(mu, p, q, varrho)`` for plotting; ``p, q`` are None at ``mu_sc``."""
    rows = []
    for mu in mus:
        mu = as_number(mu)
        try:
            p, q = exponents(m, k, mu)
        except UndefinedAlphaError:
            p = q = None
        rows.append((mu, p, q, varrho(m, k, mu)))
    return rows
