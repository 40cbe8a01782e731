"""Command line front end: one subcommand per experiment.

Exit codes: 0 converged or verified, 2 nonexistence certified, 3 regime
out of scope, 1 error or failed run.
"""
from __future__ import annotations

import argparse
import math
import sys
import time
from fractions import Fraction

import numpy as np

from . import config as cf
from . import elliptic as el
from . import geometry as geo
from . import metrics as mt
from . import verification as vf
from .exponents import as_number, classify, critical_exponent, regime_series
from .report import RunReport, write_report

ORDER_BAND = (1.8, 2.2)
ANALYTIC_TOL = 1e-9
NESTING_TOL = 1e-10


def _s_b(cfg, base):
    v = cfg["base"]["S_B"]
    return geo.scalar_curvature(geo.MetricField(base.grid.with_scheme("fd2"), base.g)) if v is None else v


def _mask_fn(cfg):
    band = cfg["verify"]["polar_band"]
    return lambda grid: grid.interior_mask(polar_band=band)


def _regime_scalars(rep, prefix="regime."):
    return {prefix + k: v for k, v in rep.as_record().items()}


# ---------------------------------------------------------------------------
# drivers

def run_verify(cfg):
    """Three-route curvature comparison over the refinement ladder."""
    fiber = cf.build_fiber(cfg)
    ladder = cfg["verify"]["ladder"]
    axes = cfg["verify"]["refine_axes"]
    report = RunReport("verify", cfg)

    def make_base(n, scheme):
        return cf.build_base(cfg, n, axes, scheme)

    S_B = cfg["base"]["S_B"]
    if cfg["warp"]["mu"] is not None:
        base0 = make_base(ladder[0], "fd2")
        cf.build_field(cfg["warp"]["psi"], base0, cfg["seed"], "warp.psi")
        mu = cf.mu_value(cfg)
        lad = vf.scalar_ladder(make_base, fiber, lambda b: cf.build_field(cfg["warp"]["psi"], b, cfg["seed"], "warp.psi"),
                               mu, ladder, cfg["fiber"]["grid_n"], S_B, _mask_fn(cfg), cfg["verify"]["ricci"])
        rows = []
        for i, lv in enumerate(lad.levels):
            order = lad.orders[i - 1] if i else None
            rows.append([lv.n, lv.analytic_rel, lv.brute_err, order, lv.ricci_bb_err, lv.ricci_ff_err, lv.ricci_mixed])
        report.add_table("ladder", ["n", "analytic_rel", "brute_err", "order", "ricci_bb_err", "ricci_ff_err",
                                    "ricci_mixed"], rows)
        fin = lad.finest
        report.scalars.update({"mu": mu, "finest_n": fin.n, "analytic_rel_finest": fin.analytic_rel,
                               "brute_err_finest": fin.brute_err, "orders": lad.orders,
                               "ricci_orders_bb": lad.ricci_orders.get("bb"),
                               "ricci_orders_ff": lad.ricci_orders.get("ff")})
        orders = [o for o in lad.orders if o is not None]
        ok = fin.analytic_rel <= ANALYTIC_TOL and all(ORDER_BAND[0] <= o <= ORDER_BAND[1] for o in orders)
        if not orders and fin.brute_err > vf.TINY_ERROR:
            ok = False
        try:
            report.scalars.update(_regime_scalars(classify(base0.grid.dim, fiber.k, mu, fiber.scalar_curvature)))
        except ValueError:
            pass
    else:
        if cfg["warp"]["c"] is None or cfg["warp"]["w"] is None:
            raise cf.ConfigError("warp: give either mu (with psi) or both c and w")
        rows, errs = [], []
        fmetric = fiber.realize(cfg["fiber"]["grid_n"])
        for n in ladder:
            fd = make_base(n, "fd2")
            c = cf.build_field(cfg["warp"]["c"], fd, cfg["seed"], "warp.c")
            w = cf.build_field(cfg["warp"]["w"], fd, cfg["seed"] + 1, "warp.w")
            spec = mt.BcwpSpec(fd, fiber, c, w, S_B)
            closed = mt.scalar_bcwp_closed_form(spec)
            brute = mt.brute_force_scalar(spec, fmetric)
            mask = _mask_fn(cfg)(fd.grid)
            errs.append(float(np.max(np.abs(brute - closed)[mask])))
            rows.append([n, errs[-1]])
        orders = vf.observed_orders(ladder, errs)
        for i in range(1, len(rows)):
            rows[i].append(orders[i - 1])
        rows[0].append(None)
        report.add_table("ladder", ["n", "closed_vs_brute", "order"], rows)
        report.scalars.update({"closed_vs_brute_finest": errs[-1], "orders": orders})
        good = [o for o in orders if o is not None]
        ok = all(ORDER_BAND[0] <= o <= ORDER_BAND[1] for o in good) and (good or errs[-1] <= vf.TINY_ERROR)
    report.status = "verified" if ok else "failed"
    return report


def _lattice_mus(lo, hi, steps):
    if steps <= 0:
        return []
    lo, hi = Fraction(str(lo)), Fraction(str(hi))
    if steps == 1:
        return [lo]
    return [lo + i * (hi - lo) / (steps - 1) for i in range(steps)]


def run_classify(cfg):
    c = cfg["classify"]
    mu = cf.mu_value(cfg, "classify.mu")
    rep = classify(c["m"], c["k"], mu, c["sf_sign"])
    report = RunReport("classify", cfg, "classified")
    report.scalars.update(_regime_scalars(rep, ""))
    lat = c["lattice"]
    mus = _lattice_mus(lat["mu_min"], lat["mu_max"], lat["mu_steps"])
    if lat["m"] and lat["k"] and mus:
        rows = []
        for m in lat["m"]:
            for k in lat["k"]:
                for x in mus:
                    r = classify(m, k, x, c["sf_sign"])
                    rows.append([m, k, x, r.regime_label, r.p, r.q, r.alpha, r.beta, r.varrho, r.in_D])
        report.add_table("lattice", ["m", "k", "mu", "label", "p", "q", "alpha", "beta", "varrho", "in_D"], rows)
    ser = c["series"]
    if ser["m"] and ser["mu_steps"]:
        mus = _lattice_mus(ser["mu_min"], ser["mu_max"], ser["mu_steps"])
        rows = [[float(x), None if p is None else float(p), None if q is None else float(q), float(r)]
                for x, p, q, r in regime_series(ser["m"], ser["k"], mus)]
        report.series["regime"] = (["mu", "p", "q", "varrho"], rows)
    return report


def run_eigen(cfg):
    base = cf.build_base(cfg, scheme="fd2")
    S_B = _s_b(cfg, base)
    beta = cfg["solver"]["beta"]
    eig = el.principal_eigenpair(base, beta, S_B)
    report = RunReport("eigen", cfg, "converged")
    report.scalars.update({"lambda_1": eig.lam1, "eigen_residual": eig.residual, "iterations": eig.iterations})
    if base.grid.size <= 4096:
        dense = el.dense_spectrum(base, beta, S_B)
        report.scalars.update({"dense_lambda_1": float(dense[0]), "dense_difference": abs(eig.lam1 - float(dense[0]))})
    report.add_field("u1", base.grid, eig.u1)
    return report


def run_kappa(cfg):
    base = cf.build_base(cfg, scheme="fd2")
    S_B = _s_b(cfg, base)
    beta, p = cfg["solver"]["beta"], cfg["solver"]["p"]
    kr = el.kappa_p(base, beta, S_B, p, tol=cfg["solver"]["tol"])
    report = RunReport("kappa", cfg, "converged")
    report.scalars.update({"kappa": kr.kappa, "euler_lagrange_residual": kr.residual, "iterations": kr.iterations})
    m = base.grid.dim
    if m >= 3:
        report.scalars["sharp_constant"] = el.sharp_constant(m)
        if p == float(critical_exponent(m)):
            report.scalars["below_sobolev_threshold"] = el.critical_condition(kr.kappa, m)
    report.add_field("minimizer", base.grid, kr.v)
    return report


def run_solve(cfg):
    base = cf.build_base(cfg, scheme="fd2")
    fiber = cf.build_fiber(cfg)
    mu = cf.mu_value(cfg)
    lam = cfg["solver"]["lam"]
    out = el.solve_pbsc(base, fiber, mu, lam, cfg["base"]["S_B"], tol=cfg["solver"]["tol"],
                        maxiter=cfg["solver"]["maxiter"])
    report = RunReport("solve-sc", cfg, out.status)
    sc = report.scalars
    sc.update({"lam": lam, "status": out.status, "reason": out.reason,
               "certificate": out.certificate.kind if out.certificate else None,
               "residual_inf": out.residual_inf, "curvature_error": out.curvature_error,
               "iterations": out.iterations, "gap": out.gap,
               "lambda_1": out.eig.lam1 if out.eig else None})
    if out.certificate is not None:
        for key, v in sorted(out.certificate.details.items()):
            if isinstance(v, (int, float, bool, str)):
                sc[f"certificate.{key}"] = v
        if out.certificate.bracket:
            sc["certificate.bracket"] = list(out.certificate.bracket)
    if out.regime is not None:
        sc.update(_regime_scalars(out.regime))
    if out.u is not None:
        sc["u_max"] = float(np.max(out.u))
        sc["u_min"] = float(np.min(out.u))
        report.add_field("u", base.grid, out.u)
        report.add_field("psi", base.grid, out.psi)
    return report


def run_sweep(cfg):
    base = cf.build_base(cfg, scheme="fd2")
    fiber = cf.build_fiber(cfg)
    mu = cf.mu_value(cfg)
    sw = cfg["sweep"]
    lams = np.linspace(sw["lam_min"], sw["lam_max"], sw["steps"]) if sw["steps"] else []
    report = RunReport("sweep", cfg, "verified")
    rows = []
    if len(lams):
        rep = el.lambda_sweep(base, fiber, mu, lams, cfg["base"]["S_B"], sw["bisections"])
        rows = [[lam, st] for lam, st in zip(rep.lams, rep.statuses)]
        report.scalars.update({"down_set": rep.down_set, "last_success": rep.last_success,
                               "first_failure": rep.first_failure, "estimate": rep.estimate,
                               "lambda_bar": rep.lambda_bar,
                               "bound_holds": None if rep.lambda_bar is None or rep.last_success is None
                               else rep.lambda_bar >= rep.last_success})
        if rep.bisections:
            report.add_table("bisection", ["lam", "status"], rep.bisections)
        if not rep.down_set:
            report.status = "failed"
    report.add_table("sweep", ["lam", "status"], rows)
    report.series["sweep"] = (["lam", "success"], [[lam, int(st == el.CONVERGED)] for lam, st in rows])
    return report


def run_schwarzschild(cfg):
    sc = cfg["schwarzschild"]
    if not 0 < sc["s_min"] < sc["s_max"]:
        raise cf.ConfigError("schwarzschild: needs 0 < s_min < s_max")
    s_axis = geo.Axis(sc["n_s"], geo.INTERVAL, sc["s_max"] - sc["s_min"], sc["s_min"])
    y_axis = geo.Axis(sc["n_y"], geo.INTERVAL, sc["y_length"])
    if sc["profile"] == "one":
        def profile(r):
            return np.ones_like(r)
    else:
        mass = sc["mass"]
        if sc["s_min"] <= (2.0 * mass) ** 2:
            raise cf.ConfigError("schwarzschild.s_min: must exceed (2 mass)^2")

        def profile(r):
            return np.sqrt(1.0 - 2.0 * mass / r)
    fiber = cf.build_fiber(cfg)
    res = mt.schwarzschild_nested(profile, s_axis, y_axis, fiber, sc["sign"], sc["fiber_n"])
    report = RunReport("schwarzschild", cfg)
    report.scalars.update({"max_abs_diff": res.max_abs_diff, "fiber_factor_diff": res.fiber_factor_diff,
                           "tolerance": NESTING_TOL})
    report.status = "verified" if res.max_abs_diff <= NESTING_TOL else "failed"
    return report


RUNNERS = {"verify": run_verify, "classify": run_classify, "eigen": run_eigen, "kappa": run_kappa,
           "solve-sc": run_solve, "sweep": run_sweep, "schwarzschild": run_schwarzschild}


# ---------------------------------------------------------------------------
# argument handling

def build_parser():
    parser = argparse.ArgumentParser(prog="bcwp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in cf.COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="TOML experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a scalar config entry (repeatable)")
        p.add_argument("-o", "--out", help="output directory (overrides output.dir)")
        p.add_argument("--prefix", help="file prefix (overrides output.prefix)")
        if name == "classify":
            p.add_argument("values", nargs="*", help="m k mu [S_F sign]")
    return parser


def load_config(args):
    cfg = cf.load(args.config) if args.config else cf.resolve({})
    sets = list(args.set)
    if getattr(args, "values", None):
        vals = args.values
        if len(vals) not in (3, 4):
            raise cf.ConfigError("classify: expected m k mu [S_F sign]")
        keys = ["classify.m", "classify.k", "classify.mu", "classify.sf_sign"]
        sets = [f"{k}={v}" if k != "classify.mu" else f'{k}="{v}"' for k, v in zip(keys, vals)] + sets
    sets.append(f'command="{args.command}"')
    if args.out:
        sets.append(f'output.dir="{args.out}"')
    if args.prefix:
        sets.append(f'output.prefix="{args.prefix}"')
    return cf.override(cfg, sets)


def main(argv=None):
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        cfg = load_config(args)
        report = RUNNERS[args.command](cfg)
    except (cf.ConfigError, geo.GeometryError, ValueError, ArithmeticError, RuntimeError) as exc:
        print(f"bcwp {args.command}: error: {exc}", file=sys.stderr)
        return 1
    report.wall_clock = time.perf_counter() - t0
    paths = write_report(report, cfg["output"]["dir"], cfg["output"]["prefix"])
    print(f"status = {report.status}")
    for key, v in report.scalars.items():
        if not key.startswith("regime.") or key in ("regime.regime_label", "regime.result"):
            print(f"{key} = {v}")
    print(f"wall_clock_seconds = {report.wall_clock:.3f}")
    print("wrote " + ", ".join(paths))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
