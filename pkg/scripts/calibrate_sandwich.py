"""Brute-force calibration of the Taylor-sandwich envelope constants.

Two per-edge inequalities are verified throughout the test suite, each of the
shape  base + middle + c * slack  with calibrated (c_lo, c_hi):

  power_step  (x + d)^p  vs  x^p + p x^(p-1) d + c * (|x|^(p-2) d^2 + |d|^p)
  edge_value  extended barrier-plus-g^p value at f + d  vs its first-order
              expansion at f plus (9/10)^2 d^2 r_e (lower) / (11/10)^2 d^2 r_e
              (upper) plus c * (|f|^(2p-4) d^2 + d^p)

The power_step ratio is scale-invariant, so its sweep is a dense 1-d scan
over u = x/d.  The edge_value sweep samples the documented domain:

  u_hat+-  log-uniform in [0.3, 4.0]
  w+-      log-uniform in [0.1, 4.0]
  f        uniform in [-0.8, 0.8] * ell,  ell = min(u_hat) / 10
  d        in [d_floor, ell - f] with cubic bias toward the floor,
           d_floor = 1e-3 * min(u_hat)

plus a deterministic corner grid over the same ranges.  The middle
coefficient (9/10)^2 exceeds the true local Taylor coefficient 1/2, so the
lower-side constant is necessarily large and negative; the d_floor is what
keeps it finite (see the package design notes).

Default invocation reproduces the constants frozen in prflow.config:

  python scripts/calibrate_sandwich.py
  python scripts/calibrate_sandwich.py --check   # fresh sweep vs frozen config
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from prflow.barrier import Weights, _g_eval, box_radius, decrement_terms
from prflow.config import EDGE_VALUE_CONSTANTS, POWER_STEP_CONSTANTS
from prflow.graph import build_graph

P_VALUES = (2, 4, 6, 8)

U_RANGE = (0.3, 4.0)
W_RANGE = (0.1, 4.0)
F_FRAC = 0.8
DELTA_FLOOR_FRAC = 1e-3


def power_step_extrema(p: int) -> tuple[float, float]:
    """Exact-ish extrema of ((u+1)^p - u^p - p u^(p-1)) / (|u|^(p-2) + 1).

    The numerator is the binomial tail sum_{k>=2} C(p,k) u^(p-k), evaluated
    as a polynomial so there is no cancellation at large |u|.
    """
    coeffs = [math.comb(p, k) for k in range(2, p + 1)]

    def ratio(u):
        return np.polyval(coeffs, u) / (np.abs(u) ** (p - 2) + 1.0)

    u = np.linspace(-200.0, 200.0, 4_000_001)
    r = ratio(u)
    lo_i, hi_i = int(np.argmin(r)), int(np.argmax(r))
    lo, hi = float(r[lo_i]), float(r[hi_i])
    for i in (lo_i, hi_i):
        center = u[i]
        for width in (1.0, 1e-2, 1e-4):
            uu = np.linspace(center - width, center + width, 200_001)
            rr = ratio(uu)
            j = int(np.argmin(rr)) if i == lo_i else int(np.argmax(rr))
            center = uu[j]
            lo = min(lo, float(rr.min()))
            hi = max(hi, float(rr.max()))
    # at +-infinity the ratio tends to C(p,2) for p > 2 and is 1/2 throughout
    # for p = 2 (numerator and denominator are both constant there)
    lim = float(math.comb(p, 2)) if p > 2 else 0.5
    return min(lo, lim), max(hi, lim)


def _edge_value_ratios(p, uf, ub, wf, wb, fpos, delta):
    """Vectorized lower/upper slack ratios, one parallel edge per sample."""
    k = len(uf)
    edges = [(0, 1, float(uf[i]), float(ub[i])) for i in range(k)]
    g = build_graph(2, edges, 0, 1, float(max(uf.max(), ub.max())))
    w = Weights(wf, wb)
    zero = np.zeros(k)

    bv, b1, _ = decrement_terms(g, w, zero, fpos)
    gv, g1, _ = _g_eval(g, zero, fpos)
    val_f = bv + gv ** p
    slope = b1 + p * gv ** (p - 1) * g1

    bv2, _, _ = decrement_terms(g, w, zero, fpos + delta)
    gv2, _, _ = _g_eval(g, zero, fpos + delta)
    actual = bv2 + gv2 ** p

    r = wf / (uf - fpos) ** 2 + wb / (ub + fpos) ** 2
    power = np.abs(fpos) ** (2 * p - 4) * delta ** 2 + delta ** p
    base = val_f + delta * slope
    ratio_lo = (actual - (base + 0.81 * delta ** 2 * r)) / power
    ratio_hi = (actual - (base + 1.21 * delta ** 2 * r)) / power
    return ratio_lo, ratio_hi


def _loguniform(rng, lo, hi, n):
    return np.exp(rng.uniform(np.log(lo), np.log(hi), n))


def sample_edge_domain(rng, n):
    uf = _loguniform(rng, *U_RANGE, n)
    ub = _loguniform(rng, *U_RANGE, n)
    wf = _loguniform(rng, *W_RANGE, n)
    wb = _loguniform(rng, *W_RANGE, n)
    ell = np.minimum(uf, ub) / 10.0
    fpos = rng.uniform(-F_FRAC, F_FRAC, n) * ell
    floor = DELTA_FLOOR_FRAC * np.minimum(uf, ub)
    dmax = ell - fpos
    delta = floor + rng.uniform(0.0, 1.0, n) ** 3 * (dmax - floor)
    return uf, ub, wf, wb, fpos, delta


def corner_edge_domain():
    u_levels = np.array([0.3, 0.5, 1.0, 2.0, 4.0])
    w_levels = np.array([0.1, 1.0, 4.0])
    f_fracs = np.array([-0.8, -0.4, 0.0, 0.4, 0.8])
    rows = []
    for uf in u_levels:
        for ub in u_levels:
            ell = min(uf, ub) / 10.0
            floor = DELTA_FLOOR_FRAC * min(uf, ub)
            for wf in w_levels:
                for wb in w_levels:
                    for ff in f_fracs:
                        fpos = ff * ell
                        dmax = ell - fpos
                        for d in (floor, 2.0 * floor, 0.01 * ell,
                                  0.1 * ell, 0.5 * dmax, dmax):
                            rows.append((uf, ub, wf, wb, fpos, d))
    cols = np.array(rows).T
    return tuple(cols)


def edge_value_extrema(p: int, n_random: int, seed: int) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    lo, hi = np.inf, -np.inf
    batches = [corner_edge_domain()]
    done = 0
    while done < n_random:
        size = min(50_000, n_random - done)
        batches.append(sample_edge_domain(rng, size))
        done += size
    for batch in batches:
        ratio_lo, ratio_hi = _edge_value_ratios(p, *map(np.asarray, batch))
        lo = min(lo, float(ratio_lo.min()))
        hi = max(hi, float(ratio_hi.max()))
    return lo, hi


def widen(lo: float, hi: float, rel: float, absolute: float) -> tuple[float, float]:
    return lo - rel * abs(lo) - absolute, hi + rel * abs(hi) + absolute


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=200_000,
                    help="random edge-value samples per p (plus corner grid)")
    ap.add_argument("--seed", type=int, default=20250817)
    ap.add_argument("--check", action="store_true",
                    help="verify the frozen config constants on a fresh sweep")
    args = ap.parse_args(argv)

    failures = 0
    print("POWER_STEP_CONSTANTS")
    for p in P_VALUES:
        lo, hi = power_step_extrema(p)
        c_lo, c_hi = widen(lo, hi, 0.02, 0.0)
        print(f"  {p}: raw ({lo:.6g}, {hi:.6g})  frozen ({c_lo:.6g}, {c_hi:.6g})")
        if args.check:
            f_lo, f_hi = POWER_STEP_CONSTANTS[p]
            if not (f_lo <= lo and hi <= f_hi):
                print(f"    CHECK FAILED: config ({f_lo}, {f_hi})")
                failures += 1

    print("EDGE_VALUE_CONSTANTS")
    for p in P_VALUES:
        lo, hi = edge_value_extrema(p, args.samples, args.seed + p)
        c_lo, c_hi = widen(lo, hi, 0.15, 1.0)
        print(f"  {p}: raw ({lo:.6g}, {hi:.6g})  frozen ({c_lo:.6g}, {c_hi:.6g})")
        if args.check:
            f_lo, f_hi = EDGE_VALUE_CONSTANTS[p]
            if not (f_lo <= lo and hi <= f_hi):
                print(f"    CHECK FAILED: config ({f_lo}, {f_hi})")
                failures += 1

    if args.check:
        print("check:", "FAILED" if failures else "ok")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
