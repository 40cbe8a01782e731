"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import time
from fractions import Fraction as F

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.optimize import brentq

from bcwp import elliptic as el
from bcwp import exponents as ex
from bcwp import geometry as geo
from bcwp import metrics as mt
from bcwp import operators as ops
from bcwp import verification as vf

LADDER = [16, 32, 64]
ORDER_LO, ORDER_HI = 1.8, 2.2


def _t3(n, scheme):
    # T^3 refined along the axis in which psi varies
    return geo.torus((n, 4, 4), scheme=scheme)


def _psi(base):
    x = base.grid.mesh()[0]
    return 1.2 + 0.4 * np.sin(x)


# 1 ---------------------------------------------------------------------------

def test_curvature_oracle_agreement(criterion):
    t0 = time.perf_counter()
    fiber = geo.FiberModel(1)
    details, ok = [], True
    for mu in (F(-1), F(-1, 2), F(0), F(1, 2), F(2)):
        rep = vf.scalar_ladder(_t3, fiber, _psi, mu, LADDER)
        analytic = rep.finest.analytic_rel
        orders = rep.orders
        good = analytic <= 1e-9 and all(o is not None and ORDER_LO <= o <= ORDER_HI for o in orders)
        ok &= good
        details.append(f"mu={mu}: rel={analytic:.1e} orders={[round(o, 3) for o in orders]}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 300
    criterion(1, ok, f"{'; '.join(details)}; {elapsed:.1f}s")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_ricci_block_structure(criterion):
    fiber = geo.FiberModel(1)
    ok, details = True, []
    for mu in (F(1, 2), F(2), F(-1, 2)):
        rep = vf.scalar_ladder(_t3, fiber, _psi, mu, LADDER, ricci=True)
        mixed = max(lv.ricci_mixed for lv in rep.levels)
        h2 = (2 * math.pi / LADDER[-1]) ** 2
        bb, ff = rep.ricci_orders["bb"][-1], rep.ricci_orders["ff"][-1]
        good = mixed <= h2 and ORDER_LO <= bb <= ORDER_HI and ORDER_LO <= ff <= ORDER_HI
        ok &= good
        details.append(f"mu={mu}: mixed={mixed:.1e} order bb={bb:.3f} ff={ff:.3f}")
    criterion(2, ok, "; ".join(details))
    assert ok


# 3 ---------------------------------------------------------------------------

def test_exponent_golden_values(criterion):
    t0 = time.perf_counter()
    checks = []
    for m in range(2, 8):
        for k in range(1, 7):
            a, _ = ex.alpha_beta(m, k, 0)
            checks.append(a == F(2, k + 1))
            p, _ = ex.exponents(m, k, 1)
            checks.append(p == F(m + k + 2, m + k - 2))
            if m >= 3:
                py = ex.special_mu(m, k).mu_pY
                p, _ = ex.exponents(m, k, py)
                checks.append(p == F(m + 2, m - 2))
    for m in range(2, 8):
        _, b = ex.alpha_beta(m, 2, 0)
        _, q = ex.exponents(m, 2, 0)
        checks.append(b == F(8, 3) and q == F(-1, 3))
    dom = ex.domain_D(7, 4)
    lo = ex.QuadraticSurd.make(F(-8, 27), F(-1, 27), 10)
    hi = ex.QuadraticSurd.make(F(-8, 27), F(1, 27), 10)
    checks.append(not dom.in_D and dom.mu_minus == lo and dom.mu_plus == hi)
    # varrho(7, 4, mu) = 54 mu^2 + 32 mu + 4; substitute mu = a + b sqrt(10) exactly
    for r in (lo, hi):
        a, b = r.a, r.b
        rational = 54 * (a * a + 10 * b * b) + 32 * a + 4
        irrational = 108 * a * b + 32 * b
        checks.append(rational == 0 and irrational == 0 and ex.varrho(7, 4, 0) == 4)
    elapsed = time.perf_counter() - t0
    ok = all(checks) and elapsed < 1.0
    criterion(3, ok, f"{sum(checks)}/{len(checks)} exact checks, mu_pm = {lo}, {hi}; {elapsed:.3f}s")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_sweep_invariants(criterion):
    t0 = time.perf_counter()
    mus = [F(j, 12) for j in range(-60, 61)] + [F(j, 7) for j in range(-35, 36)]
    violations, count = [], 0
    for m in range(2, 11):
        for k in range(1, 11):
            sc = ex.mu_sc(m, k)
            # discriminant of varpi in mu
            disc = (2 * m * k) ** 2 - 4 * (m - 1) * (m + 2) * (k + 1) * k
            if disc > -4 * k * m * m:
                violations.append(("disc", m, k))
            if m >= 3 and not (F(-(k + 1), m - 2) < sc < 0):
                violations.append(("special", m, k))
            for mu in mus:
                count += 1
                e, w, _ = ex.quadratics(m, k, mu)
                if not (e > 0 and w > 0):
                    violations.append(("eta/varpi", m, k, mu))
                if mu == sc:
                    continue
                a, _ = ex.alpha_beta(m, k, mu)
                p, q = ex.exponents(m, k, mu)
                if not p > 0 or q != p - 2 * a or (a > 0) != (mu > sc):
                    violations.append(("p/q/alpha", m, k, mu))
    elapsed = time.perf_counter() - t0
    ok = not violations and elapsed < 10
    criterion(4, ok, f"{count} (m,k,mu) points, {len(violations)} violations; {elapsed:.2f}s")
    assert ok


# 5 ---------------------------------------------------------------------------

def _test_metric():
    t = geo.torus((64, 64), scheme="spectral")
    x, y = t.grid.mesh()
    phi = 0.2 * np.sin(x) + 0.1 * np.cos(y)
    g = np.zeros(t.grid.shape + (2, 2))
    g[..., 0, 0] = np.exp(2 * phi)
    g[..., 1, 1] = 1.3 * np.exp(-phi)
    g[..., 0, 1] = g[..., 1, 0] = 0.2 * np.sin(x + y)
    return geo.MetricField(t.grid, g), np.exp(0.3 * np.sin(x) + 0.2 * np.cos(2 * y))


def test_operator_identities(criterion):
    rng = np.random.default_rng(2024)
    metric, v = _test_metric()
    worst, n_lists = 0.0, 0
    while n_lists < 20:
        nt = int(rng.integers(1, 5))
        terms = tuple((F(int(rng.integers(-8, 9)), 4), F(int(rng.integers(-8, 9)), 4)) for _ in range(nt))
        res = ops.verify_reductions(metric, v, ops.OperatorSpec(terms))
        worst = max([worst] + [r for r in res.values() if r is not None])
        n_lists += 1
    exact = []
    for m in range(3, 8):
        for k in range(1, 5):
            for mu in (F(-3, 2), F(1, 3), F(2), F(5, 2)):
                co = mt.sbcwp_coefficients(m, k, mu, strict=False)
                if co.singular_flags:
                    continue
                rl = ops.reduce_L(ops.ricci_laplacian_spec(m, k, mu))
                rh = ops.reduce_L(ops.ricci_hessian_spec(m, k, mu))
                exact.append((rl.alpha, rl.beta, rh.alpha, rh.beta) == (co.alpha_D, co.beta_D, co.alpha_H, co.beta_H))
                if mu != ex.mu_sc(m, k):
                    rs = ops.reduce_L(ops.scalar_operator_spec(m, k, mu))
                    exact.append((rs.alpha, rs.beta) == ex.alpha_beta(m, k, mu))
    ok = worst <= 1e-8 and all(exact)
    criterion(5, ok, f"20 term lists max residual {worst:.2e}; {sum(exact)}/{len(exact)} exact coefficient pairs")
    assert ok


# 6 ---------------------------------------------------------------------------

def _dense_lambda1(metric, beta, S_B):
    """Smallest eigenvalue of -beta Lap + S_B, with Lap assembled column by column."""
    n = metric.grid.size
    cols = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        cols[:, j] = geo.laplace_beltrami(metric, e.reshape(metric.grid.shape)).reshape(-1)
        e[j] = 0.0
    a = -beta * cols + np.diag(np.broadcast_to(S_B, metric.grid.shape).reshape(-1))
    return float(np.min(sla.eigvals(a).real))


def test_eigen_dense_agreement(criterion):
    circ = geo.circle(64)
    x = circ.grid.mesh()[0]
    tor = geo.torus((16, 16))
    X, Y = tor.grid.mesh()
    cases = [(circ, 1.0, np.sin(x)), (tor, 2.0, np.cos(X) * np.sin(Y) + 0.3)]
    diffs = []
    for metric, beta, sb in cases:
        eig = el.principal_eigenpair(metric, beta, sb)
        diffs.append(abs(eig.lam1 - _dense_lambda1(metric, beta, sb)))
    const = []
    for metric in (circ, tor):
        eig = el.principal_eigenpair(metric, 1.5, 0.7)
        const.append(max(abs(eig.lam1 - 0.7), float(np.max(np.abs(eig.u1 - 1.0)))))
    ok = max(diffs) <= 1e-8 and max(const) <= 1e-12
    criterion(6, ok, f"dense differences {[f'{d:.1e}' for d in diffs]}; constant S_B deviation {max(const):.1e}")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_constant_coefficient_oracles(criterion):
    t3 = geo.torus((8, 8, 8))
    flat = geo.FiberModel(1)
    errs, times = {}, []
    # (a) S_F = 0, p > 1: variational route and bracket route
    worst = 0.0
    for mu, sb, lam in ((F(1), 1.0, 4.0), (F(2), 2.0, 3.0), (F(1), -1.0, -2.0)):
        t0 = time.perf_counter()
        out = el.solve_pbsc(t3, flat, mu, lam, S_B=sb)
        times.append(time.perf_counter() - t0)
        p = float(ex.exponents(3, 1, mu)[0])
        exact = (sb / lam) ** (1.0 / (p - 1.0))
        worst = max(worst, float(np.max(np.abs(out.u - exact))) if out.status == el.CONVERGED else math.inf)
    errs["a"] = worst
    # (b) singular q < 0 with an Einstein fiber
    fib = geo.FiberModel(2, "einstein", nu=-0.5)
    worst = 0.0
    for mu in (F(1, 4), F(-1, 4)):
        p, q = (float(v) for v in ex.exponents(3, 2, mu))
        for sb, lam in ((1.0, -1.0), (0.5, -3.0)):
            t0 = time.perf_counter()
            out = el.solve_pbsc(t3, fib, mu, lam, S_B=sb)
            times.append(time.perf_counter() - t0)
            root = brentq(lambda t: sb * t - lam * t ** p - t ** q, 1e-6, 1e6, xtol=1e-15, rtol=1e-15)
            worst = max(worst, float(np.max(np.abs(out.u - root))) if out.status == el.CONVERGED else math.inf)
    errs["b"] = worst
    # (c) scaling map between two lambdas, S_F = 0
    p = 3.0
    u0 = el.solve_pbsc(t3, flat, F(1), 4.0, S_B=1.0).u
    scaled, _ = el.scale_solution(u0, 4.0, 9.0, p)
    errs["c"] = float(np.max(np.abs(scaled - (1.0 / 9.0) ** 0.5)))
    ok = errs["a"] <= 1e-8 and errs["b"] <= 1e-8 and errs["c"] <= 1e-14 and max(times) <= 30
    criterion(7, ok, f"(a) {errs['a']:.1e} (b) {errs['b']:.1e} (c) {errs['c']:.1e}; slowest {max(times):.2f}s")
    assert ok


# 8 ---------------------------------------------------------------------------

def test_regime_behavior(criterion):
    t3 = geo.torus((8, 8, 8))
    X, Y, _ = t3.grid.mesh()
    flat = geo.FiberModel(1)
    fib = geo.FiberModel(2, "einstein", nu=-0.5)
    pos = 1 + 0.5 * np.sin(X)
    neg = -0.3 + 0.5 * np.sin(X) + 0.2 * np.cos(Y)
    bad = []
    # sublinear (m, k, mu) = (3, 1, -1/4): sign mismatch never converges
    for sb, lams in ((pos, (-1.0, -0.2, 0.0)), (neg, (0.3, 1.0, 0.0))):
        for lam in lams:
            out = el.solve_pbsc(t3, flat, F(-1, 4), lam, S_B=sb)
            l1 = out.eig.lam1
            if np.sign(lam) != np.sign(l1) and out.status == el.CONVERGED:
                bad.append(("sublinear", lam))
            if out.status not in (el.NONEXISTENCE, el.OUT_OF_SCOPE) and np.sign(lam) != np.sign(l1):
                bad.append(("sublinear-status", lam, out.status))
    # lambda >= 0, lambda_1 <= 0, S_F < 0: always certified nonexistence
    n_gate = 0
    for sb in (neg, 0.1 * np.cos(X)):
        for mu in (F(1, 2), F(1, 4), F(-1, 4), F(2)):
            for lam in (0.0, 0.5, 2.0):
                out = el.solve_pbsc(t3, fib, mu, lam, S_B=sb)
                n_gate += 1
                if out.eig.lam1 > 0 or out.status != el.NONEXISTENCE:
                    bad.append(("gate", mu, lam, out.status))
    # uniqueness: two certificates, one limit
    gaps = []
    rep = ex.classify(3, 2, F(1, 2), -1)
    pr = el.PdeProblem(t3, float(rep.beta), pos, -1.0, float(rep.p), float(rep.q), -1.0)
    eig = el.principal_eigenpair(t3, pr.beta, pr.S_B)
    a = el.monotone_iteration(pr, el.gamma_certificate(pr, eig))
    b = el.monotone_iteration(pr, el.bracket_certificate(pr))
    gaps.append(float(np.max(np.abs(a.u - b.u))))
    rep = ex.classify(3, 1, F(-1, 4), 0)
    pr = el.PdeProblem(t3, float(rep.beta), pos, 0.0, float(rep.p), float(rep.q), 1.5)
    eig = el.principal_eigenpair(t3, pr.beta, pr.S_B)
    a = el.monotone_iteration(pr, el.eps_me_certificate(pr, eig))
    b = el.monotone_iteration(pr, el.bracket_certificate(pr))
    gaps.append(float(np.max(np.abs(a.u - b.u))))
    ok = not bad and max(gaps) <= 1e-6
    criterion(8, ok, f"{len(bad)} regime violations, {n_gate} gate cases; certificate gaps {[f'{g:.1e}' for g in gaps]}")
    assert ok


# 9 ---------------------------------------------------------------------------

def test_concave_convex_sweep(criterion):
    t0 = time.perf_counter()
    m, k, mu = 7, 4, F(1, 2)
    rep = ex.classify(m, k, mu, -1)
    assert rep.regime_label == "concave-convex"
    p, q = float(rep.p), float(rep.q)
    base = geo.torus((4,) * m)
    fiber = geo.FiberModel(k, "einstein", nu=-0.25)
    step = 0.05
    lams = [round(step * i, 10) for i in range(11)]
    sw = el.lambda_sweep(base, fiber, mu, lams, S_B=1.0)
    # constant solutions: lam = u^(1-p) - u^(q-p), maximal where its derivative vanishes
    u_star = ((p - q) / (p - 1.0)) ** (1.0 / (1.0 - q))
    oracle = u_star ** (1.0 - p) - u_star ** (q - p)
    elapsed = time.perf_counter() - t0
    ok = (sw.estimate is not None and abs(sw.estimate - oracle) <= step and sw.down_set
          and sw.lambda_bar >= sw.estimate and elapsed <= 300)
    criterion(9, ok, f"estimate {sw.estimate:.4f} vs tangency {oracle:.4f} (step {step}); down-set {sw.down_set}; "
                     f"lambda_bar {sw.lambda_bar:.4f}; {elapsed:.1f}s")
    assert ok


# 10 --------------------------------------------------------------------------

def test_a_priori_bounds(criterion):
    t3 = geo.torus((8, 8, 8))
    X, Y, _ = t3.grid.mesh()
    fib = geo.FiberModel(2, "einstein", nu=-0.5)
    S_F = fib.scalar_curvature
    fields = (1 + 0.5 * np.sin(X), -0.3 + 0.5 * np.sin(X) + 0.2 * np.cos(Y), 0.1 * np.cos(X))
    n_runs, n_low, bad = 0, 0, []
    for sb in fields:
        for mu in (F(1, 2), F(1, 4), F(-1, 4), F(2)):
            p, q = (float(v) for v in ex.exponents(3, 2, mu))
            for lam in (-0.5, -2.0):
                out = el.solve_pbsc(t3, fib, mu, lam, S_B=sb)
                if out.status != el.CONVERGED:
                    continue
                n_runs += 1
                smin = float(np.min(sb))
                gam = (S_F / lam) ** (1.0 / (p - q))
                # first zero of f(t) - smin t past gamma (f - smin t > 0 below it)
                g = lambda t: lam * t ** p - S_F * t ** q - smin * t
                hi = gam if smin >= 0 else brentq(g, gam, 1e8)
                top = float(np.max(out.u))
                if top > hi + 1e-8:
                    bad.append(("upper", mu, lam, top, hi))
                if out.eig.lam1 <= 0:
                    n_low += 1
                    if gam > top:
                        bad.append(("lower", mu, lam, top, gam))
    ok = not bad and n_runs > 0 and n_low > 0
    criterion(10, ok, f"{n_runs} converged lambda<0 runs ({n_low} with lambda_1 <= 0), {len(bad)} bound violations")
    assert ok


# 11 --------------------------------------------------------------------------

def test_schwarzschild_nesting(criterion):
    s_axis = geo.Axis(32, geo.INTERVAL, 16.0, 9.0)
    y_axis = geo.Axis(8, geo.INTERVAL, 1.0)
    diffs = []
    for sign in (-1, 1):
        res = mt.schwarzschild_nested(lambda r: np.ones_like(r), s_axis, y_axis, sign=sign)
        diffs.append(res.max_abs_diff)
    res = mt.schwarzschild_nested(lambda r: np.sqrt(1 - 2.0 / r), s_axis, y_axis)
    diffs.append(res.max_abs_diff)
    ok = max(diffs) <= 1e-10
    criterion(11, ok, f"max pointwise metric difference {max(diffs):.1e} (u=1 both signs, u=sqrt(1-2/r))")
    assert ok


# 12 --------------------------------------------------------------------------

def test_end_to_end_constant_curvature(criterion):
    fiber = geo.FiberModel(1)
    mu = F(-1, 4)
    rep = ex.classify(3, 1, mu, 0)
    assert rep.special.mu_sc < mu < 0
    errs, sol = [], []
    ns = [16, 32, 64]
    for n in ns:
        base = geo.product_metric(geo.sphere2(n, 8, math.sqrt(2.0)), geo.circle(8))
        out = el.solve_pbsc(base, fiber, mu, 1.0, S_B=1.0)
        assert out.status == el.CONVERGED
        sol.append(float(np.max(np.abs(out.u - 1.0))))
        spec = mt.SbcwpSpec(base, fiber, out.psi, mu)
        S = mt.brute_force_scalar(spec, fiber.realize(4))
        mask = base.grid.interior_mask(polar_band=math.pi / 4)
        errs.append(float(np.max(np.abs(S - 1.0)[mask])))
    orders = vf.observed_orders(ns, errs)
    ok = max(sol) <= 1e-8 and all(o is not None and ORDER_LO <= o <= ORDER_HI for o in orders) \
        and errs[-1] <= 4.0 * (math.pi / ns[-1]) ** 2
    criterion(12, ok, f"|u-1| {max(sol):.1e}; |S-1| {[f'{e:.2e}' for e in errs]}; orders {[round(o, 3) for o in orders]}")
    assert ok
