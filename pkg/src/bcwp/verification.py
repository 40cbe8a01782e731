"""Refinement ladders comparing the three scalar-curvature routes.

Routes
------
reduced
    One-power form ``(-beta Lap u + S_B u + S_F u^q) / u^p`` (or the
    gradient identity at ``mu = mu_sc``).
closed
    ``[c, w]`` closed form with ``c = psi^mu``, ``w = psi``.
brute
    Assembled product metric differentiated directly on a gridded fiber.

The reduced and closed routes are compared on the same grid (spectral when
every base axis is periodic); the brute-force route is compared against
the reduced route and its error is tracked across the ladder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import metrics as mt

TINY_ERROR = 1e-11


def observed_orders(ns, errors):
    """``log2(e_i / e_{i+1}) / log2(n_{i+1} / n_i)``; None where errors are at rounding level."""
    out = []
    for (n0, e0), (n1, e1) in zip(zip(ns, errors), zip(ns[1:], errors[1:])):
        if e0 <= TINY_ERROR or e1 <= TINY_ERROR:
            out.append(None)
        else:
            out.append(math.log(e0 / e1) / math.log(n1 / n0))
    return out


@dataclass
class LadderLevel:
    n: int
    analytic_rel: float
    brute_err: float
    ricci_bb_err: float | None = None
    ricci_ff_err: float | None = None
    ricci_mixed: float | None = None


@dataclass
class LadderReport:
    mu: object
    levels: list
    orders: list
    ricci_orders: dict = field(default_factory=dict)

    @property
    def finest(self):
        return self.levels[-1]


def _rel(a, b):
    return float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(b))))


def scalar_ladder(make_base, fiber, psi_fn, mu, ladder, fiber_n=4, S_B=None, mask_fn=None,
                  ricci=False):
    """Run the three routes over a refinement ladder.

    Parameters
    ----------
    make_base : callable
        ``make_base(n, scheme)`` returns the base metric at ladder level ``n``.
    fiber : FiberModel
    psi_fn : callable
        ``psi_fn(base)`` returns the positive warping field.
    mu : rational or float
    ladder : sequence of int
    mask_fn : callable, optional
        ``mask_fn(grid)`` selects the points where errors are measured.
    ricci : bool
        Also compare Ricci blocks (base, fiber and mixed); skipped when
        ``mu`` is excluded from the one-power Ricci form.
    """
    if ricci:
        try:
            mt.sbcwp_coefficients(make_base(ladder[0], "fd2").grid.dim, fiber.k, mu)
        except mt.SingularMuError:
            ricci = False
    levels = []
    fmetric = fiber.realize(fiber_n)
    for n in ladder:
        fd = make_base(n, "fd2")
        ana_scheme = "spectral" if fd.grid.all_periodic else "fd2"
        ana = make_base(n, ana_scheme)
        psi = psi_fn(ana)
        spec_a = mt.SbcwpSpec(ana, fiber, psi, mu, S_B=S_B)
        s_red = mt.scalar_sbcwp(spec_a)
        s_closed = mt.scalar_bcwp_closed_form(spec_a.as_bcwp())
        analytic = _rel(s_red, s_closed)
        spec_b = mt.SbcwpSpec(fd, fiber, psi, mu, S_B=S_B)
        s_bf = mt.brute_force_scalar(spec_b, fmetric)
        mask = np.ones(fd.grid.shape, bool) if mask_fn is None else mask_fn(fd.grid)
        brute = float(np.max(np.abs(s_bf - s_red)[mask]))
        level = LadderLevel(n, analytic, brute)
        if ricci:
            blocks = mt.ricci_sbcwp(spec_a)
            bb, bf, ff = mt.brute_force_ricci(spec_b, fmetric)
            g_f = mt.fiber_slice(fmetric.g, 0, fmetric.grid.shape)
            level.ricci_bb_err = float(np.max(np.abs(bb - blocks.bb)[mask]))
            level.ricci_ff_err = float(np.max(np.abs(ff - blocks.fiber_block(g_f))[mask]))
            level.ricci_mixed = float(np.max(np.abs(bf)))
        levels.append(level)
    ns = [lv.n for lv in levels]
    rep = LadderReport(mu, levels, observed_orders(ns, [lv.brute_err for lv in levels]))
    if ricci:
        rep.ricci_orders = {
            "bb": observed_orders(ns, [lv.ricci_bb_err for lv in levels]),
            "ff": observed_orders(ns, [lv.ricci_ff_err for lv in levels]),
        }
    return rep
