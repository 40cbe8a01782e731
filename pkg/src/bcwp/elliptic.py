"""Semilinear elliptic solver for ``-beta Lap u + S_B u = lam u^p - S_F u^q``.

The discrete operator ``L = -beta Lap + S_B`` uses the divergence-form
Laplace-Beltrami matrix of :mod:`bcwp.geometry`.  With ``R`` the volume
density, ``R^(1/2) L R^(-1/2)`` is symmetric, which is the form handed to
the eigen- and linear solvers.

Main entry points
-----------------
principal_eigenpair
    Shifted inverse power iteration for ``(lambda_1, u_1)``.
kappa_p
    Constrained minimization of the conformal-type energy.
construct_sub_super, monotone_iteration
    Certified sub/supersolution pairs and the monotone scheme.
solve_pbsc, lambda_sweep
    Regime-routed constant-scalar-curvature solver and the parameter sweep.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy import optimize
from scipy.sparse.linalg import cg, factorized
from scipy.special import gamma as gamma_fn

from . import geometry as geo
from .exponents import alpha_beta, classify, critical_exponent, exponents
from .metrics import SbcwpSpec, scalar_sbcwp_reduced

CONVERGED = "converged"
NONEXISTENCE = "nonexistence-certified"
OUT_OF_SCOPE = "regime-out-of-scope"
FAILED = "failed"

ENVELOPE_MARGIN = 1e-9
STALL_WINDOW = 1000
SCAN_LO, SCAN_HI, SCAN_POINTS = 1e-8, 1e8, 10001


class ConvergenceError(RuntimeError):
    pass


class CertificateViolation(RuntimeError):
    """An iterate left the order interval of its certificate."""


class CertificateError(RuntimeError):
    """No admissible sub/supersolution pair in the scanned range."""


# ---------------------------------------------------------------------------
# operator

DIRECT_MAX_DIM = 3


def shifted_solver(matrix, shift, dim):
    """Solver for ``(matrix + shift I) x = b`` with a symmetric ``matrix``.

    Sparse LU up to :data:`DIRECT_MAX_DIM` grid axes; beyond that the
    fill-in is too large and Jacobi-preconditioned CG is used instead.
    """
    n = matrix.shape[0]
    a = (matrix + shift * sp.identity(n, format="csc")).tocsc()
    if dim <= DIRECT_MAX_DIM:
        return factorized(a)
    a = a.tocsr()
    inv_diag = 1.0 / a.diagonal()
    pre = sp.linalg.LinearOperator(a.shape, matvec=lambda x: inv_diag * x)

    def run(b):
        x, info = cg(a, b, rtol=1e-14, atol=0.0, maxiter=20 * n, M=pre)
        if info != 0:
            raise ConvergenceError(f"CG did not converge (info={info})")
        return x
    return run


class EllipticOperator:
    """``L = -beta Lap + V`` on a Riemannian grid with cached factorizations."""

    def __init__(self, metric, beta, potential):
        if not metric.riemannian:
            raise geo.GeometryError("elliptic operator needs a Riemannian base metric")
        if metric.grid.scheme != "fd2":
            metric = geo.MetricField(metric.grid.with_scheme("fd2"), metric.g)
        self.metric = metric
        self.beta = float(beta)
        self.shape = metric.grid.shape
        self.potential = np.broadcast_to(np.asarray(potential, dtype=float), self.shape).copy()
        rho = metric.density.reshape(-1)
        self._sqrt_rho = np.sqrt(rho)
        k = metric.stiffness
        inv_sqrt = sp.diags(1.0 / self._sqrt_rho)
        sym = -self.beta * (inv_sqrt @ k @ inv_sqrt) + sp.diags(self.potential.reshape(-1))
        self.symmetric = ((sym + sym.T) * 0.5).tocsc()
        self._solvers = {}

    @property
    def size(self):
        return self.symmetric.shape[0]

    def apply(self, u):
        """``L u`` on a grid-shaped field."""
        x = self._sqrt_rho * np.asarray(u, dtype=float).reshape(-1)
        return (self.symmetric @ x / self._sqrt_rho).reshape(self.shape)

    def solver(self, shift):
        """Solver for ``(L + shift) x = b`` (sparse LU, cached by shift)."""
        key = float(shift)
        if key not in self._solvers:
            solve = shifted_solver(self.symmetric, key, self.metric.grid.dim)
            sq = self._sqrt_rho
            shape = self.shape

            def run(b):
                y = solve(sq * np.asarray(b, dtype=float).reshape(-1))
                return (y / sq).reshape(shape)
            if len(self._solvers) > 8:
                self._solvers.clear()
            self._solvers[key] = run
        return self._solvers[key]

    def dense(self):
        return self.symmetric.toarray()


# ---------------------------------------------------------------------------
# problem

@dataclass(eq=False)
class PdeProblem:
    """Discrete ``-beta Lap u + S_B u = lam u^p - S_F u^q`` on a compact grid."""

    base: geo.MetricField
    beta: float
    S_B: np.ndarray
    S_F: float
    p: float
    q: float
    lam: float
    tol: float = 1e-10
    maxiter: int = 100000

    def __post_init__(self):
        self.beta = float(self.beta)
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not self.base.riemannian:
            raise geo.GeometryError("base metric must be Riemannian")
        self.S_B = np.broadcast_to(np.asarray(self.S_B, dtype=float), self.base.grid.shape).copy()
        self.S_F = float(self.S_F)
        self.p, self.q, self.lam = float(self.p), float(self.q), float(self.lam)

    @cached_property
    def operator(self):
        return EllipticOperator(self.base, self.beta, self.S_B)

    def f(self, t):
        t = np.asarray(t, dtype=float)
        out = self.lam * t ** self.p if self.lam != 0 else np.zeros_like(t)
        if self.S_F != 0:
            out = out - self.S_F * t ** self.q
        return out

    def fprime(self, t):
        t = np.asarray(t, dtype=float)
        out = self.lam * self.p * t ** (self.p - 1) if self.lam != 0 else np.zeros_like(t)
        if self.S_F != 0:
            out = out - self.S_F * self.q * t ** (self.q - 1)
        return out

    def residual(self, u):
        return self.operator.apply(u) - self.f(u)

    def with_lambda(self, lam):
        new = PdeProblem(self.base, self.beta, self.S_B, self.S_F, self.p, self.q, lam, self.tol, self.maxiter)
        new.__dict__["operator"] = self.operator
        return new


# ---------------------------------------------------------------------------
# eigenpair

@dataclass
class EigenResult:
    lam1: float
    u1: np.ndarray
    residual: float
    iterations: int


def principal_eigenpair(base, beta, S_B, tol=1e-11, maxiter=10000, operator=None):
    """Principal eigenpair of ``-beta Lap + S_B`` by shifted inverse iteration.

    The shift starts below ``min S_B`` (a lower bound for ``lambda_1``) and
    is moved up to ``theta - 2 r`` once the Rayleigh quotient ``theta`` has
    residual ``r``; for a symmetric matrix ``lambda_1`` then stays above
    the shift, so the iteration keeps targeting the principal pair.
    The eigenfunction is normalized to ``max u_1 = 1``.
    """
    op = EllipticOperator(base, beta, S_B) if operator is None else operator
    a = op.symmetric
    sq = op._sqrt_rho
    shift = float(np.min(op.potential)) - 1.0
    x = sq.copy()
    x /= np.linalg.norm(x)
    last_shift_res = np.inf
    dim = op.metric.grid.dim
    solve = shifted_solver(a, -shift, dim)
    theta = np.inf
    for it in range(1, maxiter + 1):
        ax = a @ x
        theta_new = float(x @ ax)
        r = float(np.linalg.norm(ax - theta_new * x))
        scale = max(1.0, abs(theta_new))
        if r <= tol * scale or (abs(theta_new - theta) <= 1e-15 * scale and r <= 1e3 * tol * scale):
            theta = theta_new
            break
        theta = theta_new
        if r < 1e-3 * last_shift_res and r < 1e-2 * scale:
            new_shift = theta - 2.0 * r - 1e-12 * scale
            if new_shift > shift:
                shift = new_shift
                last_shift_res = r
                solve = shifted_solver(a, -shift, dim)
        y = solve(x)
        x = y / np.linalg.norm(y)
    else:
        raise ConvergenceError(f"inverse iteration did not converge in {maxiter} steps (residual {r:.3e})")
    u = (x / sq).reshape(op.shape)
    if np.sum(u) < 0:
        u = -u
    if not np.all(u > 0):
        raise ConvergenceError("principal eigenfunction is not positive")
    u = u / np.max(u)
    res = float(np.max(np.abs(op.apply(u) - theta * u)))
    return EigenResult(theta, u, res, it)


def dense_spectrum(base, beta, S_B):
    """All eigenvalues of the discrete operator by a dense symmetric solve."""
    op = EllipticOperator(base, beta, S_B)
    return sla.eigh(op.dense(), eigvals_only=True)


# ---------------------------------------------------------------------------
# Yamabe-type constant

@dataclass
class KappaResult:
    kappa: float
    v: np.ndarray
    lam: float
    residual: float
    iterations: int


def energy(base, beta, S_B, v, operator=None):
    """``int |grad v|^2 + (S_B/beta) v^2`` with the discrete Dirichlet form."""
    w = base.weights
    return geo.dirichlet_form(base, v, v) + float(np.sum(w * S_B * v * v)) / beta


def kappa_p(base, beta, S_B, p, tol=1e-10, maxiter=20000, v0=None):
    """Minimize the conformal-type energy on ``int |v|^(p+1) = 1``.

    Projected descent along the residual preconditioned by
    ``(L/beta + s)^-1``, with renormalization onto the constraint and
    backtracking on the energy.  The Euler-Lagrange equation of a
    minimizer is ``-beta Lap v + S_B v = beta kappa v^p``.
    """
    m = base.grid.dim
    p = float(p)
    p_y = critical_exponent(m) if m >= 3 else None
    if not p > 1 or (p_y is not None and p > float(p_y) + 1e-14):
        raise ValueError(f"kappa_p needs 1 < p <= p_Y, got p={p}")
    S_B = np.broadcast_to(np.asarray(S_B, dtype=float), base.grid.shape)
    op = EllipticOperator(base, beta, S_B)
    w = base.weights
    s = max(0.0, -float(np.min(S_B)) / beta) + 1.0
    precond = op.solver(beta * s)

    def normalize(v):
        v = np.abs(v)
        return v / float(np.sum(w * v ** (p + 1))) ** (1.0 / (p + 1))

    def en(v):
        return float(np.sum(w * v * op.apply(v))) / beta

    v = normalize(np.ones(base.grid.shape) if v0 is None else np.asarray(v0, dtype=float))
    e = en(v)
    tau = 1.0
    for it in range(1, maxiter + 1):
        r = op.apply(v) / beta - e * v ** p
        if float(np.max(np.abs(r))) <= tol * max(1.0, abs(e) * float(np.max(v)) ** p):
            break
        d = beta * precond(r)
        while True:
            cand = normalize(v - tau * d)
            ec = en(cand)
            if ec <= e + 1e-15 * max(1.0, abs(e)):
                v, e = cand, ec
                tau = min(1.0, 2.0 * tau)
                break
            tau *= 0.5
            if tau < 1e-12:
                break
        if tau < 1e-12:
            break
    else:
        raise ConvergenceError(f"kappa_p descent did not converge in {maxiter} steps")
    res = float(np.max(np.abs(op.apply(v) - beta * e * v ** p)))
    return KappaResult(e, v, beta * e, res, it)


def sphere_volume(m):
    """Volume of the unit ``m``-sphere in ``R^(m+1)``."""
    return 2.0 * math.pi ** ((m + 1) / 2.0) / gamma_fn((m + 1) / 2.0)


def sharp_constant(m):
    """Sharp Euclidean Sobolev constant ``K_m`` for ``m >= 3``."""
    if m < 3:
        raise ValueError("K_m needs m >= 3")
    return math.sqrt(4.0 / (m * (m - 2) * sphere_volume(m) ** (2.0 / m)))


def critical_condition(kappa, m):
    """Whether ``kappa < 1/K_m^2``."""
    return kappa < 1.0 / sharp_constant(m) ** 2


# ---------------------------------------------------------------------------
# nonlinearity

@dataclass
class Nonlinearity:
    lam: float
    S_F: float
    p: float
    q: float
    S_B_min: float | None
    gamma: float | None
    gamma_tilde: float | None
    ratio_decreasing: bool
    ratio_method: str


def _f(lam, S_F, p, q, t):
    out = lam * t ** p if lam != 0 else 0.0 * t
    return out - S_F * t ** q if S_F != 0 else out


def _positive_root(g, lo=SCAN_LO, hi=SCAN_HI, after=None):
    """First sign change of ``g`` on a log grid, refined by Brent's method."""
    t = np.geomspace(lo if after is None else after * (1 + 1e-12), hi, 4001)
    v = g(t)
    s = np.sign(v)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    if idx.size == 0:
        zero = np.nonzero(v == 0)[0]
        return float(t[zero[0]]) if zero.size else None
    i = idx[0]
    return optimize.brentq(g, t[i], t[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps)


def nonlinearity_analysis(lam, S_F, p, q, S_B_min=None):
    """Zeros of ``f_lam`` and of ``f_lam - S_B_min t`` and monotonicity of ``f/t``."""
    lam, S_F, p, q = float(lam), float(S_F), float(p), float(q)
    gam = None
    if lam < 0 and S_F < 0 and p != q:
        gam = (S_F / lam) ** (1.0 / (p - q))
    gam_t = None
    if S_B_min is not None:
        if S_B_min >= 0 and gam is not None:
            gam_t = gam
        else:
            def g(t):
                return _f(lam, S_F, p, q, t) - S_B_min * t
            gam_t = _positive_root(g, after=gam)
    # f(t)/t = lam t^(p-1) - S_F t^(q-1); each term nonincreasing
    t1 = lam * (p - 1) <= 0
    t2 = S_F == 0 or S_F * (q - 1) >= 0
    strict = (lam != 0 and p != 1) or (S_F != 0 and q != 1)
    if t1 and t2 and strict:
        return Nonlinearity(lam, S_F, p, q, S_B_min, gam, gam_t, True, "termwise")
    t = np.geomspace(SCAN_LO, SCAN_HI, 2001)
    ratio = _f(lam, S_F, p, q, t) / t
    dec = bool(np.all(np.diff(ratio) < 0))
    return Nonlinearity(lam, S_F, p, q, S_B_min, gam, gam_t, dec, "numeric")


# ---------------------------------------------------------------------------
# certificates

@dataclass
class Certificate:
    """Evidence attached to an outcome.

    ``kind`` is one of ``"eps-u1/Me"``, ``"eps-u1/gamma"``, ``"bracket"``,
    ``"variational"``, ``"linear"``, ``"newton-empirical"`` for solutions and
    ``"envelope"``, ``"sign-gate"`` for nonexistence.
    """

    kind: str
    sub: np.ndarray | None = None
    super: np.ndarray | None = None
    nu: float | None = None
    bracket: tuple | None = None
    reason: str = ""
    details: dict = field(default_factory=dict)


def _power_limit(coeffs, exps, at_zero):
    """Limit of ``sum c_i t^e_i`` as t -> 0+ or t -> inf."""
    terms = [(c, e) for c, e in zip(coeffs, exps) if c != 0]
    if not terms:
        return 0.0
    key = min if at_zero else max
    lead = key(e for _, e in terms)
    if lead == 0:
        return float(sum(c for c, e in terms if e == 0))
    if (lead < 0) == at_zero:
        c = sum(c for c, e in terms if e == lead)
        return math.copysign(math.inf, c)
    return float(sum(c for c, e in terms if e == 0))


def envelope_extrema(lam, S_F, p, q):
    """Infimum and supremum of ``lam t^(p-1) - S_F t^(q-1)`` over ``t > 0``.

    Returns ``((inf, inf_attained), (sup, sup_attained))``.  Interior
    extrema of a log-grid scan are refined by golden-section search; extrema
    at the ends of the scan are replaced by the exact limits.
    """
    coeffs, exps = (lam, -S_F), (p - 1.0, q - 1.0)

    def env(t):
        return _f(lam, S_F, p, q, t) / t

    if all(c == 0 or e == 0 for c, e in zip(coeffs, exps)):
        # constant envelope: attained everywhere
        v = float(sum(c for c, e in zip(coeffs, exps) if e == 0))
        return (v, True), (v, True)
    s = np.linspace(math.log(SCAN_LO), math.log(SCAN_HI), SCAN_POINTS)
    vals = env(np.exp(s))
    out = []
    for sign in (1.0, -1.0):
        i = int(np.argmin(sign * vals))
        lim0 = _power_limit(coeffs, exps, True)
        lim1 = _power_limit(coeffs, exps, False)
        ends = min(sign * lim0, sign * lim1)
        if 0 < i < len(s) - 1:
            r = optimize.minimize_scalar(lambda x: sign * env(math.exp(x)), bracket=(s[i - 1], s[i], s[i + 1]),
                                         method="golden", tol=1e-12)
            best = min(float(r.fun), sign * float(vals[i]))
            if best <= ends:
                out.append((sign * best, True))
                continue
        out.append((sign * ends, False))
    return out[0], out[1]


def nonexistence_check(problem):
    """Envelope test: no positive solution when ``max S_B <= inf E`` or ``min S_B >= sup E``.

    Attained extrema need the margin :data:`ENVELOPE_MARGIN`; limits that
    are not attained certify with equality.
    """
    (inf_e, inf_att), (sup_e, sup_att) = envelope_extrema(problem.lam, problem.S_F, problem.p, problem.q)
    smax, smin = float(np.max(problem.S_B)), float(np.min(problem.S_B))
    if smax <= inf_e - (ENVELOPE_MARGIN if inf_att else 0.0):
        return Certificate("envelope", reason="max S_B <= inf envelope",
                           details={"max_S_B": smax, "inf_envelope": inf_e, "attained": inf_att})
    if smin >= sup_e + (ENVELOPE_MARGIN if sup_att else 0.0):
        return Certificate("envelope", reason="min S_B >= sup envelope",
                           details={"min_S_B": smin, "sup_envelope": sup_e, "attained": sup_att})
    return None


def _tol(problem, *fields):
    scale = 1.0 + max(float(np.max(np.abs(f))) for f in fields)
    return 1e-9 * scale * (1.0 + float(np.max(np.abs(problem.S_B))) + problem.beta)


def verify_certificate(problem, sub, sup):
    """Discrete sub/supersolution inequalities and ordering; returns a dict of margins."""
    op = problem.operator
    sub = np.broadcast_to(sub, op.shape)
    sup = np.broadcast_to(sup, op.shape)
    tol = _tol(problem, sub, sup)
    sub_defect = float(np.max(op.apply(sub) - problem.f(sub)))
    sup_defect = float(np.max(problem.f(sup) - op.apply(sup)))
    order = float(np.max(sub - sup))
    ok = np.all(sub > 0) and sub_defect <= tol and sup_defect <= tol and order <= tol
    return {"ok": bool(ok), "sub_defect": sub_defect, "super_defect": sup_defect, "order": order, "tol": tol}


def choose_nu(problem, lo, hi):
    """Shift making ``t -> f(t) + nu t`` nondecreasing on ``[lo, hi]``."""
    lo, hi = float(lo), float(hi)
    t = np.unique(np.concatenate([np.geomspace(lo, hi, 2001), [lo, hi]])) if hi > lo else np.array([lo])
    lip = float(np.max(np.abs(problem.fprime(t))))
    nu = max(0.0, -float(np.min(problem.S_B))) + lip
    return nu + 1e-2 * (1.0 + nu) if nu + float(np.min(problem.S_B)) <= 0 else nu


def _finish(problem, kind, sub, sup, **details):
    check = verify_certificate(problem, sub, sup)
    if not check["ok"]:
        raise CertificateError(f"{kind} pair failed verification: {check}")
    shape = problem.operator.shape
    sub = np.broadcast_to(sub, shape).copy()
    sup = np.broadcast_to(sup, shape).copy()
    nu = choose_nu(problem, np.min(sub), np.max(sup))
    details.update(check)
    return Certificate(kind, sub, sup, nu, details=details)


def _eps_sub(problem, u1, upper):
    op = problem.operator
    for eps in np.geomspace(1.0, 1e-8, 81):
        sub = eps * u1
        if np.any(sub > upper):
            continue
        if float(np.max(op.apply(sub) - problem.f(sub))) <= _tol(problem, sub):
            return float(eps), sub
    raise CertificateError("no admissible eps in [1e-8, 1]")


def torsion_function(problem):
    """``e`` with ``L e = 1``; needs ``lambda_1 > 0``."""
    e = problem.operator.solver(0.0)(np.ones(problem.operator.shape))
    if not np.all(e > 0):
        raise CertificateError("torsion function is not positive")
    return e


def _me_super(problem, e):
    op = problem.operator
    le = op.apply(e)

    def excess(M):
        return float(np.max(problem.f(M * e) - M * le))

    grid = np.geomspace(1e-8, 1e8, 161)
    vals = np.array([excess(M) / M for M in grid])
    ok = np.nonzero(vals <= 0)[0]
    if ok.size:
        return float(grid[ok[0]])
    i = int(np.argmin(vals))
    lo, hi = math.log(grid[max(i - 1, 0)]), math.log(grid[min(i + 1, len(grid) - 1)])
    r = optimize.minimize_scalar(lambda s: excess(math.exp(s)) / math.exp(s), bounds=(lo, hi),
                                 method="bounded", options={"xatol": 1e-12})
    M = math.exp(r.x)
    if excess(M) <= 0.0:
        return M
    raise CertificateError("no admissible M for the supersolution M e")


def eps_me_certificate(problem, eig):
    """``(eps u_1, M e)`` pair for ``lambda_1 > 0``."""
    e = torsion_function(problem)
    M = _me_super(problem, e)
    sup = M * e
    eps, sub = _eps_sub(problem, eig.u1, sup)
    return _finish(problem, "eps-u1/Me", sub, sup, eps=eps, M=M)


def gamma_certificate(problem, eig):
    """``(eps u_1, gamma)`` pair for ``lam < 0``, ``S_F < 0``."""
    nl = nonlinearity_analysis(problem.lam, problem.S_F, problem.p, problem.q, float(np.min(problem.S_B)))
    top = nl.gamma_tilde
    if top is None:
        raise CertificateError("no positive zero for the constant supersolution")
    sup = np.full(problem.operator.shape, top)
    eps, sub = _eps_sub(problem, eig.u1, sup)
    return _finish(problem, "eps-u1/gamma", sub, sup, eps=eps, gamma=nl.gamma, gamma_tilde=nl.gamma_tilde)


def bracket_constants(problem):
    """Constants ``a0 <= a1`` with ``f(a0) >= S_B a0`` and ``f(a1) <= S_B a1`` everywhere."""
    t = np.geomspace(SCAN_LO, SCAN_HI, SCAN_POINTS)
    ft = problem.f(t)
    pos = ft - float(np.max(problem.S_B)) * t > 0
    neg = ft - float(np.min(problem.S_B)) * t < 0
    # smallest a1 whose whole tail is negative
    if not neg[-1]:
        raise CertificateError("no upper bracket constant in the scan range")
    tail = np.nonzero(~neg)[0]
    j = tail[-1] + 1 if tail.size else 0
    cand = np.nonzero(pos[:j + 1])[0]
    if cand.size == 0:
        raise CertificateError("no lower bracket constant in the scan range")
    return float(t[cand[-1]]), float(t[j])


def bracket_certificate(problem):
    a0, a1 = bracket_constants(problem)
    cert = _finish(problem, "bracket", a0, a1)
    cert.bracket = (a0, a1)
    return cert


def construct_sub_super(problem, eig):
    """Certified pair for the regimes with a monotone-iteration route."""
    l1 = eig.lam1
    if problem.lam < 0 and problem.S_F < 0 and problem.q < problem.p:
        return gamma_certificate(problem, eig)
    if l1 > 0:
        return eps_me_certificate(problem, eig)
    return bracket_certificate(problem)


# ---------------------------------------------------------------------------
# monotone iteration

@dataclass
class IterationRun:
    u: np.ndarray
    iterations: int
    converged: bool
    monotone_violation: float
    changes: list


@dataclass
class SolveOutcome:
    status: str
    lam: float
    u: np.ndarray | None = None
    psi: np.ndarray | None = None
    residual_inf: float | None = None
    iterations: int = 0
    certificate: Certificate | None = None
    from_super: np.ndarray | None = None
    gap: float | None = None
    eig: EigenResult | None = None
    regime: object = None
    curvature_error: float | None = None
    reason: str = ""
    trace: dict = field(default_factory=dict)


def _iterate(problem, cert, start, direction, tol, maxiter, keep_trace):
    op = problem.operator
    solve = op.solver(cert.nu)
    nu = cert.nu
    slack = 1e-9 * (1.0 + float(np.max(cert.super)))
    u = start.copy()
    worst = 0.0
    changes = []
    ref_change = math.inf
    for it in range(1, maxiter + 1):
        new = solve(problem.f(u) + nu * u)
        if np.any(new < cert.sub - slack) or np.any(new > cert.super + slack):
            raise CertificateViolation(f"iterate {it} left the order interval")
        step = new - u
        worst = max(worst, float(np.max(-direction * step)))
        change = float(np.max(np.abs(step)))
        if keep_trace:
            changes.append(change)
        u = new
        if change < tol:
            return IterationRun(u, it, True, worst, changes)
        if it % STALL_WINDOW == 0:
            if it > STALL_WINDOW and _stalled(ref_change, change, tol, maxiter - it):
                return IterationRun(u, it, False, worst, changes)
            ref_change = change
    return IterationRun(u, maxiter, False, worst, changes)


def _stalled(old, new, tol, remaining):
    """Whether the contraction seen over the last window cannot reach ``tol`` in time."""
    if new >= old:
        return True
    rate = math.log(new / old) / STALL_WINDOW
    return math.log(tol / new) / rate > remaining


def monotone_iteration(problem, cert, tol=None, maxiter=None, keep_trace=False):
    """Monotone scheme from both ends of a certified order interval.

    ``tol`` (sup-norm change between iterates) and ``maxiter`` default to
    the values carried by ``problem``.
    """
    tol = problem.tol if tol is None else tol
    maxiter = problem.maxiter if maxiter is None else maxiter
    low = _iterate(problem, cert, cert.sub, 1.0, tol, maxiter, keep_trace)
    high = _iterate(problem, cert, cert.super, -1.0, tol, maxiter, keep_trace)
    u = low.u
    res = float(np.max(np.abs(problem.residual(u))))
    ok = low.converged and high.converged and res <= 1e-6 and np.all(u > 0)
    out = SolveOutcome(CONVERGED if ok else FAILED, problem.lam, u, residual_inf=res,
                       iterations=low.iterations + high.iterations, certificate=cert,
                       from_super=high.u, gap=float(np.max(np.abs(high.u - low.u))))
    out.trace = {"from_sub_changes": low.changes, "from_super_changes": high.changes,
                 "monotone_violation_sub": low.monotone_violation,
                 "monotone_violation_super": high.monotone_violation}
    if not ok:
        out.reason = "monotone iteration did not converge (stalled or hit maxiter)"
    return out


def newton_solve(problem, u0, tol=1e-10, maxiter=200):
    """Damped Newton iteration keeping ``u > 0``; no order-interval certificate."""
    op = problem.operator
    sq = op._sqrt_rho
    u = np.asarray(u0, dtype=float).copy()
    r = problem.residual(u)
    for it in range(1, maxiter + 1):
        if float(np.max(np.abs(r))) <= tol:
            return u, it, True
        jac = op.symmetric - sp.diags(problem.fprime(u).reshape(-1))
        dx = sp.linalg.spsolve(jac.tocsc(), sq * r.reshape(-1)) / sq
        step = 1.0
        while step > 1e-10:
            cand = u - step * dx.reshape(op.shape)
            if np.all(cand > 0):
                rc = problem.residual(cand)
                if np.max(np.abs(rc)) < np.max(np.abs(r)):
                    u, r = cand, rc
                    break
            step *= 0.5
        else:
            return u, it, False
    return u, maxiter, bool(np.max(np.abs(r)) <= tol)


def scale_solution(u0, lam0, lam, p):
    """``t u0`` with ``t = (lam/lam0)^(1/(1-p))``; maps solutions at ``lam0`` to ``lam``."""
    if p == 1 or lam0 == 0 or lam == 0 or (lam > 0) != (lam0 > 0):
        raise ValueError("scaling needs p != 1 and lam, lam0 of the same nonzero sign")
    t = (lam / lam0) ** (1.0 / (1.0 - p))
    return t * np.asarray(u0, dtype=float), t


# ---------------------------------------------------------------------------
# orchestration

def _sign(x, tol):
    return 0 if abs(x) <= tol else (1 if x > 0 else -1)


def _out(status, lam, reason, **kw):
    return SolveOutcome(status, lam, reason=reason, **kw)


def _nonexist(lam, kind, reason, **kw):
    return SolveOutcome(NONEXISTENCE, lam, certificate=Certificate(kind, reason=reason), reason=reason, **kw)


def _solve_pure_power(problem, eig, tol0, m):
    """Routes for ``S_F = 0`` (and the folded ``q = 1`` case)."""
    lam, p = problem.lam, problem.p
    l1 = eig.lam1
    s_l1, s_lam = _sign(l1, tol0), _sign(lam, tol0)
    if p == 1:
        if abs(lam - l1) <= tol0:
            u = eig.u1.copy()
            res = float(np.max(np.abs(problem.operator.apply(u) - l1 * u)))
            return SolveOutcome(CONVERGED, lam, u, residual_inf=res, certificate=Certificate("linear"),
                                reason="lambda = lambda_1: u is a multiple of u_1")
        return _nonexist(lam, "sign-gate", "linear case needs lambda = lambda_1")
    if p < 1:
        if s_lam != s_l1:
            return _nonexist(lam, "sign-gate", "sublinear case needs sign(lambda) = sign(lambda_1)")
        if s_lam == 0:
            u = eig.u1.copy()
            return SolveOutcome(CONVERGED, lam, u, residual_inf=float(np.max(np.abs(problem.operator.apply(u)))),
                                certificate=Certificate("linear"), reason="lambda = lambda_1 = 0")
        if s_lam > 0:
            return monotone_iteration(problem, eps_me_certificate(problem, eig))
        t = (l1 / lam) ** (1.0 / (p - 1.0))
        u, its, ok = newton_solve(problem, t * eig.u1)
        res = float(np.max(np.abs(problem.residual(u))))
        st = CONVERGED if ok and res <= 1e-6 and np.all(u > 0) else FAILED
        return SolveOutcome(st, lam, u, residual_inf=res, iterations=its,
                            certificate=Certificate("newton-empirical", reason="lambda_1 < 0: no certified pair"),
                            reason="empirical Newton solve")
    p_y = critical_exponent(m) if m >= 3 else None
    if lam < 0 and float(np.max(problem.S_B)) < 0:
        return monotone_iteration(problem, bracket_certificate(problem))
    if p_y is not None and p > float(p_y):
        return _out(OUT_OF_SCOPE, lam, "supercritical case needs max S_B < 0 and lambda < 0")
    kr = kappa_p(problem.base, problem.beta, problem.S_B, p)
    s_k = _sign(kr.kappa, tol0)
    if s_k != s_lam:
        return _nonexist(lam, "sign-gate", "superlinear case needs sign(lambda) = sign(kappa_p)")
    if p_y is not None and p == float(p_y) and not critical_condition(kr.kappa, m):
        return _out(OUT_OF_SCOPE, lam, "critical case without kappa < 1/K_m^2")
    cert = Certificate("variational", details={"kappa": kr.kappa, "kappa_residual": kr.residual})
    if s_lam == 0:
        u = kr.v / np.max(kr.v)
    else:
        u, t = scale_solution(kr.v, kr.lam, lam, p)
        cert.details["scale"] = t
    res = float(np.max(np.abs(problem.residual(u))))
    st = CONVERGED if res <= 1e-6 else FAILED
    return SolveOutcome(st, lam, u, residual_inf=res, iterations=kr.iterations, certificate=cert,
                        reason="constrained minimizer rescaled to lambda")


def solve_pbsc(base, fiber, mu, lam, S_B=None, check_curvature=True, tol=1e-10, maxiter=100000):
    """Find ``psi`` with constant scalar curvature ``lam`` for the ``(psi, mu)`` metric.

    Parameters
    ----------
    base : MetricField
        Riemannian base; the solver uses the ``fd2`` scheme.
    fiber : FiberModel
        Supplies ``k`` and ``S_F`` (must be ``<= 0``).
    mu : rational or float
    lam : float
    S_B : ndarray or float, optional
        Base scalar curvature; computed from ``base`` when omitted.
    """
    m, k = base.grid.dim, fiber.k
    S_F = fiber.scalar_curvature
    lam = float(lam)
    rep = classify(m, k, mu, S_F)
    if rep.regime_label == "deferred" or S_F > 0:
        return _out(OUT_OF_SCOPE, lam, rep.result, regime=rep)
    if base.grid.scheme != "fd2":
        base = geo.MetricField(base.grid.with_scheme("fd2"), base.g)
    S_B = geo.scalar_curvature(base) if S_B is None else S_B
    alpha, beta = rep.alpha, rep.beta
    problem = PdeProblem(base, float(beta), S_B, S_F, float(rep.p), float(rep.q), lam, tol, maxiter)
    eig = principal_eigenpair(base, problem.beta, problem.S_B, operator=problem.operator)
    tol0 = 1e-9 * (1.0 + float(np.max(np.abs(problem.S_B))))
    out = _route(problem, rep, eig, tol0, m)
    out.regime = rep
    out.eig = eig
    if out.status == CONVERGED:
        out.psi = out.u ** float(alpha)
        if check_curvature:
            spec = SbcwpSpec(base, fiber, out.psi, rep.mu, S_B=problem.S_B)
            S = scalar_sbcwp_reduced(spec).S
            out.curvature_error = float(np.max(np.abs(S - lam)))
    return out


def _route(problem, rep, eig, tol0, m):
    lam = problem.lam
    label = rep.regime_label
    cert = nonexistence_check(problem)
    if cert is not None:
        return SolveOutcome(NONEXISTENCE, lam, certificate=cert, reason=cert.reason)
    s_l1 = _sign(eig.lam1, tol0)
    try:
        if problem.S_F == 0:
            return _solve_pure_power(problem, eig, tol0, m)
        if label == "q-one":
            folded = PdeProblem(problem.base, problem.beta, problem.S_B + problem.S_F, 0.0, problem.p, 0.0, lam,
                                problem.tol, problem.maxiter)
            eig2 = principal_eigenpair(folded.base, folded.beta, folded.S_B, operator=folded.operator)
            out = _solve_pure_power(folded, eig2, tol0, m)
            if out.u is not None:
                out.residual_inf = float(np.max(np.abs(problem.residual(out.u))))
            return out
        if s_l1 <= 0 and lam >= 0:
            return _nonexist(lam, "sign-gate", "lambda_1 <= 0 and S_F < 0 force lambda < 0")
        if problem.p == 1:
            if lam >= eig.lam1:
                return _nonexist(lam, "sign-gate", "p = 1 with S_F < 0 needs lambda < lambda_1")
            if lam < float(np.min(problem.S_B)):
                return monotone_iteration(problem, bracket_certificate(problem))
            return _out(OUT_OF_SCOPE, lam, "p = 1 with lambda in [min S_B, lambda_1) has no certified route")
        if label == "concave-convex":
            if lam < 0:
                return monotone_iteration(problem, gamma_certificate(problem, eig))
            return monotone_iteration(problem, eps_me_certificate(problem, eig))
        if label == "q-zero" and lam == 0:
            e = torsion_function(problem)
            u = -problem.S_F * e
            res = float(np.max(np.abs(problem.residual(u))))
            return SolveOutcome(CONVERGED if res <= 1e-6 else FAILED, lam, u, residual_inf=res,
                                certificate=Certificate("linear", reason="q = 0, lambda = 0: L u = -S_F"))
        if lam < 0 or (lam == 0 and float(np.min(problem.S_B)) > 0):
            # guaranteed for q < 0 < 1 < p and lam < 0; elsewhere only attempted
            covered = problem.q < 0 and problem.p > 1 and lam < 0
            try:
                cert = bracket_certificate(problem)
            except CertificateError as exc:
                if covered:
                    raise
                return _out(OUT_OF_SCOPE, lam, f"{label}: {exc}")
            return monotone_iteration(problem, cert)
        return _out(OUT_OF_SCOPE, lam, f"{label} with lambda = {lam} has no certified route")
    except CertificateError as exc:
        return _out(FAILED, lam, str(exc))
    except CertificateViolation as exc:
        return _out(FAILED, lam, str(exc))


# ---------------------------------------------------------------------------
# sweep

@dataclass
class SweepReport:
    lams: list
    statuses: list
    down_set: bool
    last_success: float | None
    first_failure: float | None
    estimate: float | None
    lambda_bar: float | None
    bisections: list = field(default_factory=list)


def lambda_bar_bound(lam1, S_F, p, q):
    """Smallest ``L`` with ``lam1 t < L t^p - S_F t^q`` for all ``t > 0``.

    It is ``sup_t (lam1 t^(1-p) + S_F t^(q-p))``, found by bounded
    minimization in ``log t``.
    """
    def neg(s):
        t = math.exp(s)
        return -(lam1 * t ** (1.0 - p) + S_F * t ** (q - p))

    s = np.linspace(math.log(SCAN_LO), math.log(SCAN_HI), 2001)
    i = int(np.argmin([neg(x) for x in s]))
    lo, hi = s[max(i - 1, 0)], s[min(i + 1, len(s) - 1)]
    r = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return -float(r.fun)


def lambda_sweep(base, fiber, mu, lams, S_B=None, n_bisect=0):
    """Solve over a grid of ``lam`` and bracket the largest solvable value."""
    lams = sorted(float(x) for x in lams)
    statuses = [solve_pbsc(base, fiber, mu, lam, S_B, check_curvature=False).status for lam in lams]
    ok = [s == CONVERGED for s in statuses]
    first_fail = next((i for i, v in enumerate(ok) if not v), None)
    down = first_fail is None or not any(ok[first_fail:])
    last_s = None
    if first_fail is None:
        last_s = lams[-1] if lams else None
    elif first_fail > 0:
        last_s = lams[first_fail - 1]
    ff = lams[first_fail] if first_fail is not None else None
    bis = []
    if last_s is not None and ff is not None:
        lo, hi = last_s, ff
        for _ in range(n_bisect):
            mid = 0.5 * (lo + hi)
            st = solve_pbsc(base, fiber, mu, mid, S_B, check_curvature=False).status
            bis.append((mid, st))
            if st == CONVERGED:
                lo = mid
            else:
                hi = mid
        last_s, ff = lo, hi
    est = 0.5 * (last_s + ff) if last_s is not None and ff is not None else None
    m, k = base.grid.dim, fiber.k
    rep = classify(m, k, mu, fiber.scalar_curvature)
    lbar = None
    if rep.regime_label == "concave-convex":
        base_fd = geo.MetricField(base.grid.with_scheme("fd2"), base.g)
        sb = geo.scalar_curvature(base_fd) if S_B is None else S_B
        eig = principal_eigenpair(base_fd, float(rep.beta), np.broadcast_to(sb, base.grid.shape))
        lbar = lambda_bar_bound(eig.lam1, fiber.scalar_curvature, float(rep.p), float(rep.q))
    return SweepReport(lams, statuses, down, last_s, ff, est, lbar, bis)
