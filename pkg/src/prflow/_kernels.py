"""Compiled fast path for the interior-phase iteration loops.

The pure-python phase loops spend nearly all of their time in per-call numpy
overhead: one interior iteration is a few hundred operations on very short
vectors, which costs milliseconds interpreted but tens of microseconds when
fused.  This module restates the same algorithms as flat loops under numba:
the Jacobi-PCG laplacian solve, demand projection, accelerated descent on the
extended decrement (warm-up), the outer/inner composite solve with weight
extraction and reduction (weighted), the least-squares dual fit, the
advance-time coupling checks, and the coupling-drift recentering.

`warmup_chunk` / `weighted_chunk` mutate the iterate arrays in place, run
until the phase threshold, the chunk budget, or a failure, fill one stat row
per accepted iteration, and return a status code that driver.py maps back
onto the package's exception types.  Tolerances, bounds, and schedule
constants are imported from the modules that own them so the two paths cannot
drift apart silently.  Scheduling arithmetic (delta, F, gap) is bit-identical
to the python path; solver outputs agree to solve-tolerance level (summation
order differs).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .barrier import BOX_DIVISOR, COUPLING_TOL_BASE
from .config import CONGESTION_BOUND, REPAIR_FRACTION
from .laplacian import ITER_CAP_MULT
from .potential_step import AGD_STALL_RATIO, AGD_STALL_WINDOW
from .weighted_step import NORM_FLOOR

# mirrors of hard-coded python-path budgets: agd_minimize(max_iter=2000),
# _inner_residual_solve(newton_iters=12), and the two line-search depths
AGD_MAX_ITER = 2000
INNER_NEWTON_ITERS = 12
ARMIJO_OUTER = 60
ARMIJO_INNER = 40

# status codes shared by the helpers and the chunk entry points
K_OK = 0
K_CG_FAIL = 1        # laplacian CG hit its iteration cap       -> NoConvergence
K_RATIO = 2          # resistances non-positive or ratio beyond cap
K_AGD_FAIL = 3       # accelerated descent hit its cap          -> NoConvergence
K_CONSTRAINT = 4     # post-descent conservation residual       -> NoConvergence
K_CONGESTION = 5     # congestion bound failed through all delta halvings
K_COMPOSITE_FAIL = 6  # composite outer loop exhausted           -> NoConvergence
K_DEGENERATE = 7     # all g terms vanish at extraction
K_POOR_FIT = 8       # dual least-squares residual above tolerance
K_COUPLING = 9       # coupling residual above tolerance after advance
K_BUDGET_ITER = 10   # per-iteration weight increase above budget
K_BUDGET_TOTAL = 11  # total weight norm above the phase budget
K_INTERIOR = 12      # iterate left the capacity interior
K_NEG_GAP = 13       # duality gap went meaningfully negative
K_DONE = 14          # gap crossed the phase threshold
K_RUNNING = 15       # chunk budget exhausted, phase unfinished

# stat buffer columns, one row per accepted iteration
STAT_F = 0
STAT_GAP = 1
STAT_DELTA = 2
STAT_POTENTIAL = 3
STAT_RHO = 4
STAT_WNORM = 5
STAT_WINC = 6
STAT_COUPLING = 7
STAT_INNER = 8
STAT_UHAT = 9
STAT_FHAT = 10
STAT_COLS = 11


@njit(cache=True)
def _cg(tail, head, n, s, r, chi, tol, ratio_cap, phi):
    """Jacobi-PCG for L phi = chi with L = B' R^{-1} B and phi[s] = 0.

    Mirrors laplacian.solve_laplacian: the demand is re-centered, the system
    is grounded at s, and convergence means the reduced residual 2-norm fell
    to tol times the balanced demand 2-norm.  Fills phi; returns K_OK,
    K_CG_FAIL past the iteration cap, or K_RATIO for bad resistances.
    """
    m = tail.shape[0]
    for v in range(n):
        phi[v] = 0.0
    if m == 0:
        return K_OK
    rmin = r[0]
    rmax = r[0]
    for e in range(1, m):
        if r[e] < rmin:
            rmin = r[e]
        if r[e] > rmax:
            rmax = r[e]
    if rmin <= 0.0 or rmax / rmin > ratio_cap:
        return K_RATIO

    total = 0.0
    for v in range(n):
        total += chi[v]
    shift = total / n if total != 0.0 else 0.0
    b = np.empty(n)
    nrm2 = 0.0
    for v in range(n):
        bv = chi[v] - shift
        b[v] = bv
        nrm2 += bv * bv
    chi_norm = math.sqrt(nrm2)
    if chi_norm == 0.0:
        return K_OK

    invd = np.zeros(n)
    for e in range(m):
        ce = 1.0 / r[e]
        invd[tail[e]] += ce
        invd[head[e]] += ce
    for v in range(n):
        if v != s and invd[v] != 0.0:
            invd[v] = 1.0 / invd[v]
    invd[s] = 0.0

    x = np.zeros(n)
    res = np.empty(n)
    z = np.empty(n)
    for v in range(n):
        res[v] = 0.0 if v == s else b[v]
        z[v] = invd[v] * res[v]
    p = z.copy()
    rz = 0.0
    for v in range(n):
        rz += res[v] * z[v]
    Ap = np.empty(n)
    target = tol * chi_norm
    cap = ITER_CAP_MULT * n

    converged = False
    for _ in range(cap):
        rn2 = 0.0
        for v in range(n):
            rn2 += res[v] * res[v]
        if math.sqrt(rn2) <= target:
            converged = True
            break
        for v in range(n):
            Ap[v] = 0.0
        for e in range(m):
            d = (p[head[e]] - p[tail[e]]) / r[e]
            Ap[head[e]] += d
            Ap[tail[e]] -= d
        Ap[s] = 0.0
        pap = 0.0
        for v in range(n):
            pap += p[v] * Ap[v]
        alpha = rz / pap
        for v in range(n):
            x[v] += alpha * p[v]
            res[v] -= alpha * Ap[v]
        rz_new = 0.0
        for v in range(n):
            z[v] = invd[v] * res[v]
            rz_new += res[v] * z[v]
        beta = rz_new / rz
        for v in range(n):
            p[v] = z[v] + beta * p[v]
        rz = rz_new
    if not converged:
        return K_CG_FAIL
    for v in range(n):
        phi[v] = x[v]
    return K_OK


@njit(cache=True)
def _project(tail, head, n, s, r, vec, dem, tol, ratio_cap, out, phi):
    """r-weighted projection of vec onto {f : B'f = dem}; fills out.

    Mirrors laplacian.project_to_demand including the short-circuit when the
    demand already holds to tolerance.  Returns a _cg status.
    """
    m = tail.shape[0]
    excess = np.zeros(n)
    for e in range(m):
        excess[head[e]] += vec[e]
        excess[tail[e]] -= vec[e]
    vn2 = 0.0
    for e in range(m):
        vn2 += vec[e] * vec[e]
    en2 = 0.0
    for v in range(n):
        excess[v] -= dem[v]
        en2 += excess[v] * excess[v]
    scale = math.sqrt(vn2)
    if scale < 1.0:
        scale = 1.0
    if math.sqrt(en2) <= tol * scale:
        for e in range(m):
            out[e] = vec[e]
        return K_OK
    st = _cg(tail, head, n, s, r, excess, tol, ratio_cap, phi)
    if st != K_OK:
        return st
    for e in range(m):
        out[e] = vec[e] - (phi[head[e]] - phi[tail[e]]) / r[e]
    return K_OK


@njit(cache=True)
def _decrement_eval(up, um, wp, wm, grad0, ell, x, grad):
    """Extended Bregman decrement at step x: value returned, gradient filled.

    Per-edge base term and its quadratic continuation exactly as in
    barrier.decrement_terms.
    """
    m = up.shape[0]
    total = 0.0
    for e in range(m):
        le = ell[e]
        xe = x[e]
        c = xe
        if c > le:
            c = le
        elif c < -le:
            c = -le
        dx = xe - c
        a1 = up[e] - c
        a2 = um[e] + c
        v = (-wp[e] * math.log1p(-c / up[e]) - wm[e] * math.log1p(c / um[e])
             - c * grad0[e])
        d1 = wp[e] / a1 - wm[e] / a2 - grad0[e]
        d2 = wp[e] / (a1 * a1) + wm[e] / (a2 * a2)
        total += v + d1 * dx + 0.5 * d2 * dx * dx
        grad[e] = d1 + d2 * dx
    return total


@njit(cache=True)
def _dec_g_full(up, um, wp, wm, grad0, ell, x, dgrad, dhess, gv, g1v, g2v):
    """Decrement terms and oriented g terms at x, with derivatives.

    One fused pass over barrier.decrement_terms and barrier._g_eval: fills
    the decrement gradient/Hessian diagonal and the g values with their first
    and second derivatives in the original edge orientation; returns the
    summed decrement value.
    """
    m = up.shape[0]
    total = 0.0
    for e in range(m):
        le = ell[e]
        xe = x[e]
        upe = up[e]
        ume = um[e]
        c = xe
        if c > le:
            c = le
        elif c < -le:
            c = -le
        dx = xe - c
        a1 = upe - c
        a2 = ume + c
        v = (-wp[e] * math.log1p(-c / upe) - wm[e] * math.log1p(c / ume)
             - c * grad0[e])
        d1 = wp[e] / a1 - wm[e] / a2 - grad0[e]
        d2 = wp[e] / (a1 * a1) + wm[e] / (a2 * a2)
        total += v + d1 * dx + 0.5 * d2 * dx * dx
        dgrad[e] = d1 + d2 * dx
        dhess[e] = d2

        if upe <= ume:
            a = upe
            b = ume
            sg = 1.0
        else:
            a = ume
            b = upe
            sg = -1.0
        z = sg * xe
        cz = z
        if cz > le:
            cz = le
        elif cz < -le:
            cz = -le
        dz = z - cz
        b1 = a - cz
        b2 = b + cz
        hv = a * a * math.log1p(-cz / a) + a * b * math.log1p(cz / b)
        h1 = -a * a / b1 + a * b / b2
        h2 = -a * a / (b1 * b1) - a * b / (b2 * b2)
        gv[e] = -(hv + h1 * dz + 0.5 * h2 * dz * dz)
        g1v[e] = -sg * (h1 + h2 * dz)
        g2v[e] = -h2
    return total


@njit(cache=True)
def _composite_full(up, um, wp, wm, grad0, ell, x, W, p,
                    dgrad, dhess, gv, g1v, g2v, alpha, q):
    """Composite value at x; gradient into alpha, positive curvature into q.

    Mirrors weighted_step._composite_full including the p-th-power surrogate
    below the norm floor and the max(., 0) on the p-norm curvature.
    """
    m = up.shape[0]
    dec = _dec_g_full(up, um, wp, wm, grad0, ell, x, dgrad, dhess, gv, g1v, g2v)
    norm_p = 0.0
    for e in range(m):
        norm_p += gv[e] ** p
    norm = norm_p ** (1.0 / p)
    if norm < NORM_FLOOR:
        scale = W / NORM_FLOOR ** (p - 1)
        nval = scale * norm_p
        for e in range(m):
            ge = gv[e]
            ng = scale * p * ge ** (p - 1) * g1v[e]
            nh = scale * p * ((p - 1) * ge ** (p - 2) * g1v[e] * g1v[e]
                              + ge ** (p - 1) * g2v[e])
            alpha[e] = dgrad[e] + ng
            q[e] = dhess[e] + (nh if nh > 0.0 else 0.0)
        return dec + nval
    for e in range(m):
        tt = gv[e] / norm
        tp1 = tt ** (p - 1)
        ng = W * tp1 * g1v[e]
        nh = W * ((p - 1) * tt ** (p - 2) * g1v[e] * g1v[e] / norm
                  + tp1 * g2v[e])
        alpha[e] = dgrad[e] + ng
        q[e] = dhess[e] + (nh if nh > 0.0 else 0.0)
    return dec + W * norm


@njit(cache=True)
def _agd(tail, head, n, s, up, um, wp, wm, grad0, ell, D, x0,
         kappa, tol, project_tol, ratio_cap, out):
    """Nesterov descent on the decrement in the D metric over circulations.

    Mirrors potential_step.agd_minimize: every step direction is projected
    onto zero demand with resistances D, the criterion is kappa times the
    D-norm of the projected step (with the same stall detector for the
    float-noise floor), and momentum restarts on uphill steps.
    Fills out; returns (status, iterations).
    """
    m = up.shape[0]
    x = x0.copy()
    x_prev = x0.copy()
    y = x0.copy()
    grad = np.empty(m)
    raw = np.empty(m)
    step = np.empty(m)
    x_new = np.empty(m)
    phi = np.empty(n)
    zero_dem = np.zeros(n)
    beta = (math.sqrt(kappa) - 1.0) / (math.sqrt(kappa) + 1.0)
    crit0 = -1.0
    crit_best = np.inf
    stall = 0
    for it in range(AGD_MAX_ITER):
        _decrement_eval(up, um, wp, wm, grad0, ell, y, grad)
        for e in range(m):
            raw[e] = -grad[e] / (kappa * D[e])
        st = _project(tail, head, n, s, D, raw, zero_dem, project_tol,
                      ratio_cap, step, phi)
        if st != K_OK:
            return st, it
        acc = 0.0
        for e in range(m):
            acc += step[e] * step[e] * D[e]
        crit = kappa * math.sqrt(acc)
        if crit0 < 0.0:
            crit0 = crit
            if crit0 == 0.0:
                for e in range(m):
                    out[e] = x[e]
                return K_OK, 0
        if crit <= tol * crit0:
            for e in range(m):
                out[e] = y[e] + step[e]
            return K_OK, it + 1
        if crit < 0.9 * crit_best:
            crit_best = crit
            stall = 0
        else:
            stall += 1
            if crit < crit_best:
                crit_best = crit
            if stall >= AGD_STALL_WINDOW and crit <= AGD_STALL_RATIO * crit0:
                for e in range(m):
                    out[e] = y[e] + step[e]
                return K_OK, it + 1
        uphill = 0.0
        for e in range(m):
            xn = y[e] + step[e]
            x_new[e] = xn
            uphill += grad[e] * (xn - x_prev[e])
        if uphill > 0.0:
            for e in range(m):
                y[e] = x_new[e]
        else:
            for e in range(m):
                y[e] = x_new[e] + beta * (x_new[e] - x_prev[e])
        for e in range(m):
            x_prev[e] = x[e]
            x[e] = x_new[e]
    return K_AGD_FAIL, AGD_MAX_ITER


@njit(cache=True)
def _post_advance_stats(tail, head, cap_fwd, cap_bwd, is_precond, f, y,
                        wp, wm, rvec):
    """Fused post-advance pass shared by both chunks.

    Stores the signed coupling residual into rvec and returns
    (ok, coup, dual_gap, pot_bar, u_min, has_prec); ok is False when the
    iterate left the capacity interior.
    """
    m = tail.shape[0]
    coup = 0.0
    pot_bar = 0.0
    dual_gap = 0.0
    u_min = np.inf
    has_prec = False
    for e in range(m):
        a = cap_fwd[e] - f[e]
        b = cap_bwd[e] + f[e]
        if a <= 0.0 or b <= 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, False
        ge = wp[e] / a - wm[e] / b
        re = (y[head[e]] - y[tail[e]]) - ge
        rvec[e] = re
        ce = abs(re)
        if ce > coup:
            coup = ce
        dual_gap += f[e] * ge
        pot_bar -= wp[e] * math.log(a) + wm[e] * math.log(b)
        if is_precond[e]:
            has_prec = True
            mn = a if a < b else b
            if mn < u_min:
                u_min = mn
    return True, coup, dual_gap, pot_bar, u_min, has_prec


@njit(cache=True)
def _repair_coupling(tail, head, n, s, cap_fwd, cap_bwd, f, y, wp, wm,
                     rvec, lap_tol, ratio_cap):
    """Drift recentering shared by both chunks; mirrors driver._maybe_repair.

    With H the barrier Hessian diagonal and rvec the signed coupling
    residual, solves L_H z = -B'(rvec / H), then applies the circulation
    df = (rvec + Bz) / H and dual shift z, cancelling the residual to second
    order in ||rvec||.  Skips harmlessly when df would leave the interior;
    the caller recomputes its stats afterwards.
    """
    m = tail.shape[0]
    H = np.empty(m)
    rhs = np.zeros(n)
    z = np.empty(n)
    for e in range(m):
        a = cap_fwd[e] - f[e]
        b = cap_bwd[e] + f[e]
        H[e] = wp[e] / (a * a) + wm[e] / (b * b)
        hr = rvec[e] / H[e]
        rhs[head[e]] -= hr
        rhs[tail[e]] += hr
    st = _cg(tail, head, n, s, H, rhs, lap_tol, ratio_cap, z)
    if st != K_OK:
        return st
    for e in range(m):
        df = (rvec[e] + z[head[e]] - z[tail[e]]) / H[e]
        if cap_fwd[e] - (f[e] + df) <= 0.0 or cap_bwd[e] + f[e] + df <= 0.0:
            return K_OK   # would leave the interior; keep the drift
    for e in range(m):
        f[e] += (rvec[e] + z[head[e]] - z[tail[e]]) / H[e]
    for v in range(n):
        y[v] += z[v]
    return K_OK


@njit(cache=True)
def warmup_chunk(tail, head, n, s, t, cap_fwd, cap_bwd, is_precond,
                 f, y, wp, wm, scal, per_unit, threshold,
                 kappa, step_tol, lap_tol, cons_tol, coup_base, ratio_cap,
                 max_halvings, budget, stats, detail):
    """Up to `budget` warm-up iterations; mirrors driver.run_warmup's body.

    scal = [F, F_star] is advanced in place along with f and y (wp/wm are
    read-only in this phase).  One stat row per accepted iteration.  Returns
    (status, accepted) with status K_DONE / K_RUNNING or a failure code; on
    failure detail[0:2] carry the offending value and its bound.
    """
    m = tail.shape[0]
    wsum = 0.0
    for e in range(m):
        wsum += wp[e] + wm[e]
    coup_tol = coup_base * (1.0 + wsum / m)
    kprec = 0
    for e in range(m):
        if is_precond[e]:
            kprec += 1

    up = np.empty(m)
    um = np.empty(m)
    ell = np.empty(m)
    grad0 = np.empty(m)
    D = np.empty(m)
    x0 = np.empty(m)
    fhat = np.empty(m)
    dvec = np.empty(m)
    ones = np.ones(m)
    rhs = np.empty(n)
    phi = np.empty(n)
    dem = np.empty(n)

    iters = 0
    while True:
        gap = scal[1] - scal[0]
        if gap <= threshold:
            return K_DONE, iters
        if iters >= budget:
            return K_RUNNING, iters

        ok = True
        for e in range(m):
            a = cap_fwd[e] - f[e]
            b = cap_bwd[e] + f[e]
            up[e] = a
            um[e] = b
            if a <= 0.0 or b <= 0.0:
                ok = False
        if not ok:
            return K_INTERIOR, iters
        for e in range(m):
            mn = up[e] if up[e] < um[e] else um[e]
            ell[e] = mn / BOX_DIVISOR
            grad0[e] = wp[e] / up[e] - wm[e] / um[e]
            D[e] = wp[e] / (up[e] * up[e]) + wm[e] / (um[e] * um[e])

        delta = gap / per_unit
        accepted = False
        agd_iters = 0
        rho = 0.0
        for _attempt in range(max_halvings + 1):
            for v in range(n):
                dem[v] = 0.0
            dem[s] = -delta
            dem[t] = delta
            share = delta / kprec if kprec > 0 else 0.0
            for e in range(m):
                x0[e] = share if is_precond[e] else 0.0
            st, agd_iters = _agd(tail, head, n, s, up, um, wp, wm, grad0,
                                 ell, D, x0, kappa, step_tol, lap_tol,
                                 ratio_cap, fhat)
            if st != K_OK:
                return st, iters
            for v in range(n):
                rhs[v] = 0.0
            for e in range(m):
                rhs[head[e]] += fhat[e]
                rhs[tail[e]] -= fhat[e]
            maxres = 0.0
            for v in range(n):
                rv = abs(rhs[v] - dem[v])
                if rv > maxres:
                    maxres = rv
            dscale = abs(delta)
            if dscale < 1.0:
                dscale = 1.0
            bound = cons_tol if cons_tol > 1e-9 * dscale else 1e-9 * dscale
            if maxres > bound:
                detail[0] = maxres
                detail[1] = bound
                return K_CONSTRAINT, iters
            rho = 0.0
            for e in range(m):
                ax = abs(fhat[e])
                r1 = ax / up[e]
                r2 = ax / um[e]
                if r1 > rho:
                    rho = r1
                if r2 > rho:
                    rho = r2
            if rho > CONGESTION_BOUND * (1.0 + 1e-9):
                delta *= 0.5
                continue
            accepted = True
            break
        if not accepted:
            detail[0] = gap
            return K_CONGESTION, iters

        # dual fit: target is the barrier-gradient difference of the step
        for e in range(m):
            dvec[e] = wp[e] / (up[e] - fhat[e]) - wm[e] / (um[e] + fhat[e]) \
                - grad0[e]
        for v in range(n):
            rhs[v] = 0.0
        for e in range(m):
            rhs[head[e]] += dvec[e]
            rhs[tail[e]] -= dvec[e]
        st = _cg(tail, head, n, s, ones, rhs, lap_tol, ratio_cap, phi)
        if st != K_OK:
            return st, iters
        fit = 0.0
        for e in range(m):
            rme = abs(phi[head[e]] - phi[tail[e]] - dvec[e])
            if rme > fit:
                fit = rme
        if fit > coup_tol:
            detail[0] = fit
            detail[1] = coup_tol
            return K_POOR_FIT, iters

        # advance and re-check the coupling under the unchanged weights
        fhat_inf = 0.0
        for e in range(m):
            f[e] += fhat[e]
            ax = abs(fhat[e])
            if ax > fhat_inf:
                fhat_inf = ax
        for v in range(n):
            y[v] += phi[v]
        ok, coup, dual_gap, pot_bar, u_min, has_prec = _post_advance_stats(
            tail, head, cap_fwd, cap_bwd, is_precond, f, y, wp, wm, dvec)
        if not ok:
            return K_INTERIOR, iters
        if coup > coup_tol:
            detail[0] = coup
            detail[1] = coup_tol
            return K_COUPLING, iters
        if coup > REPAIR_FRACTION * coup_tol:
            st = _repair_coupling(tail, head, n, s, cap_fwd, cap_bwd,
                                  f, y, wp, wm, dvec, lap_tol, ratio_cap)
            if st != K_OK:
                return st, iters
            ok, coup, dual_gap, pot_bar, u_min, has_prec = \
                _post_advance_stats(tail, head, cap_fwd, cap_bwd, is_precond,
                                    f, y, wp, wm, dvec)
            if not ok:
                return K_INTERIOR, iters
        scal[0] += delta

        mfl = float(m) if m > 1 else 1.0
        if dual_gap < -1e-9 * mfl:
            detail[0] = dual_gap
            return K_NEG_GAP, iters
        dg = dual_gap if dual_gap > 0.0 else 0.0
        stats[iters, STAT_F] = scal[0]
        stats[iters, STAT_GAP] = scal[1] - scal[0]
        stats[iters, STAT_DELTA] = delta
        stats[iters, STAT_POTENTIAL] = m * math.log1p(dg / m) + pot_bar
        stats[iters, STAT_RHO] = rho
        stats[iters, STAT_WNORM] = wsum
        stats[iters, STAT_WINC] = 0.0
        stats[iters, STAT_COUPLING] = coup
        stats[iters, STAT_INNER] = agd_iters
        stats[iters, STAT_UHAT] = u_min if has_prec else np.nan
        stats[iters, STAT_FHAT] = fhat_inf
        iters += 1


@njit(cache=True)
def _inner_solve(tail, head, n, s, alpha, q, W, p, lap_tol, ratio_cap, d):
    """Projected-Newton circulation minimizer of the separable residual model.

    Mirrors weighted_step._inner_residual_solve: linear term alpha, quadratic
    coefficients q, p-th-power tail; for p = 2 a single projected solve is
    exact and the loop exits after its line search.  Fills d.
    """
    m = alpha.shape[0]
    for e in range(m):
        d[e] = 0.0
    grad = np.empty(m)
    hess = np.empty(m)
    raw = np.empty(m)
    step = np.empty(m)
    cand = np.empty(m)
    phi = np.empty(n)
    zero_dem = np.zeros(n)
    for _ in range(INNER_NEWTON_ITERS):
        for e in range(m):
            de = d[e]
            grad[e] = alpha[e] + 2.0 * q[e] * de + W * p * de ** (p - 1)
            if p > 2:
                hess[e] = 2.0 * q[e] + W * p * (p - 1) * de ** (p - 2)
            else:
                hess[e] = 2.0 * (q[e] + W)
            raw[e] = grad[e] / hess[e]
        st = _project(tail, head, n, s, hess, raw, zero_dem, lap_tol,
                      ratio_cap, step, phi)
        if st != K_OK:
            return st
        smax = 0.0
        dmax = 0.0
        for e in range(m):
            step[e] = -step[e]
            ax = abs(step[e])
            if ax > smax:
                smax = ax
            ax = abs(d[e])
            if ax > dmax:
                dmax = ax
        if smax <= 1e-16 * (1.0 + dmax):
            break
        value = 0.0
        for e in range(m):
            de = d[e]
            value += alpha[e] * de + q[e] * de * de + W * de ** p
        tau = 1.0
        moved = False
        for _ls in range(ARMIJO_INNER):
            cv = 0.0
            for e in range(m):
                ce = d[e] + tau * step[e]
                cand[e] = ce
                cv += alpha[e] * ce + q[e] * ce * ce + W * ce ** p
            if cv <= value + 1e-14 * abs(value):
                for e in range(m):
                    d[e] = cand[e]
                moved = True
                break
            tau *= 0.5
        if not moved or p == 2:
            break
    return K_OK


@njit(cache=True)
def _solve_composite(tail, head, n, s, t, is_precond, kprec,
                     up, um, wp, wm, grad0, ell, delta, W, p,
                     step_tol, lap_tol, ratio_cap, max_outer,
                     warm, warm_valid, x):
    """Constrained composite minimization; mirrors weighted_step.solve_composite.

    Fills x with the accepted step.  Returns (status, outer_iters, rho) where
    rho is the step's congestion; K_CONGESTION signals the 0.1 bound so the
    chunk can back delta off.
    """
    m = up.shape[0]
    dem = np.zeros(n)
    dem[s] = -delta
    dem[t] = delta
    dgrad = np.empty(m)
    dhess = np.empty(m)
    gv = np.empty(m)
    g1v = np.empty(m)
    g2v = np.empty(m)
    alpha = np.empty(m)
    q = np.empty(m)
    d = np.empty(m)
    cand = np.empty(m)
    raw = np.empty(m)
    phi = np.empty(n)

    for e in range(m):
        raw[e] = 0.0
    _composite_full(up, um, wp, wm, grad0, ell, raw, W, p,
                    dgrad, dhess, gv, g1v, g2v, alpha, q)
    # q now holds the curvature at zero, the metric for the start projection
    if warm_valid != 0:
        st = _project(tail, head, n, s, q, warm, dem, lap_tol, ratio_cap,
                      x, phi)
    else:
        share = delta / kprec if kprec > 0 else 0.0
        for e in range(m):
            raw[e] = share if is_precond[e] else 0.0
        st = _project(tail, head, n, s, q, raw, dem, lap_tol, ratio_cap,
                      x, phi)
    if st != K_OK:
        return st, 0, 0.0

    crit0 = -1.0
    prev_crit = np.inf
    outer_done = 0
    finished = False
    for outer in range(1, max_outer + 1):
        outer_done = outer
        value = _composite_full(up, um, wp, wm, grad0, ell, x, W, p,
                                dgrad, dhess, gv, g1v, g2v, alpha, q)
        st = _inner_solve(tail, head, n, s, alpha, q, W, p, lap_tol,
                          ratio_cap, d)
        if st != K_OK:
            return st, outer_done, 0.0
        lam = 0.0
        for e in range(m):
            lam -= alpha[e] * d[e]
        crit = math.sqrt(lam) if lam > 0.0 else 0.0
        if crit0 < 0.0:
            crit0 = crit
            if crit0 == 0.0:
                finished = True
                break
        if crit <= step_tol * crit0 + 1e-30:
            finished = True
            break
        if lam <= 1e-14 * (1.0 + abs(value)):
            # predicted decrease below the objective's float noise: the line
            # search cannot arbitrate, but a full step still contracts
            if crit > 0.9 * prev_crit:
                finished = True
                break
            for e in range(m):
                x[e] += d[e]
            prev_crit = crit
            continue
        prev_crit = crit
        tau = 1.0
        accepted = False
        for _ls in range(ARMIJO_OUTER):
            for e in range(m):
                cand[e] = x[e] + tau * d[e]
            cval = _composite_full(up, um, wp, wm, grad0, ell, cand, W, p,
                                   dgrad, dhess, gv, g1v, g2v, alpha, q)
            if cval <= value - 0.25 * tau * lam:
                for e in range(m):
                    x[e] = cand[e]
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            finished = True  # step below float resolution: stationary
            break
    if not finished:
        return K_COMPOSITE_FAIL, outer_done, 0.0

    rho = 0.0
    for e in range(m):
        ax = abs(x[e])
        r1 = ax / up[e]
        r2 = ax / um[e]
        if r1 > rho:
            rho = r1
        if r2 > rho:
            rho = r2
    if rho > CONGESTION_BOUND * (1.0 + 1e-9):
        return K_CONGESTION, outer_done, rho
    return K_OK, outer_done, rho


@njit(cache=True)
def weighted_chunk(tail, head, n, s, t, cap_fwd, cap_bwd, is_precond,
                   f, y, wp, wm, scal, warm, wstate,
                   per_unit, threshold, W, p, step_bound, budget_iter,
                   budget_total, step_tol, lap_tol, coup_base, ratio_cap,
                   max_outer, max_halvings, budget, stats, detail):
    """Up to `budget` weighted iterations; mirrors driver.run_weighted's body.

    f, y, wp, wm, scal = [F, F_star], warm, and wstate = [warm_valid] are all
    advanced in place so the chunk can resume.  Congestion rejections (either
    the 0.1 bound or the step-magnitude bound) halve the delta scale and drop
    the warm start, exactly like the python loop; weight-budget, dual-fit,
    and coupling failures abort with their status.
    """
    m = tail.shape[0]
    kprec = 0
    for e in range(m):
        if is_precond[e]:
            kprec += 1

    up = np.empty(m)
    um = np.empty(m)
    ell = np.empty(m)
    grad0 = np.empty(m)
    fhat = np.empty(m)
    dvec = np.empty(m)
    sc_h = np.empty(m)
    gv = np.empty(m)
    g1v = np.empty(m)
    g2v = np.empty(m)
    wnf = np.empty(m)
    wnb = np.empty(m)
    ones = np.ones(m)
    rhs = np.empty(n)
    phi = np.empty(n)

    iters = 0
    while True:
        gap = scal[1] - scal[0]
        if gap < threshold:
            return K_DONE, iters
        if iters >= budget:
            return K_RUNNING, iters

        ok = True
        for e in range(m):
            a = cap_fwd[e] - f[e]
            b = cap_bwd[e] + f[e]
            up[e] = a
            um[e] = b
            if a <= 0.0 or b <= 0.0:
                ok = False
        if not ok:
            return K_INTERIOR, iters
        for e in range(m):
            mn = up[e] if up[e] < um[e] else um[e]
            ell[e] = mn / BOX_DIVISOR
            grad0[e] = wp[e] / up[e] - wm[e] / um[e]

        scale = 1.0
        accepted = False
        outer_iters = 0
        rho = 0.0
        delta = 0.0
        fhat_inf = 0.0
        for _attempt in range(max_halvings + 1):
            delta = gap / per_unit * scale
            st, outer_iters, rho = _solve_composite(
                tail, head, n, s, t, is_precond, kprec, up, um, wp, wm,
                grad0, ell, delta, W, p, step_tol, lap_tol, ratio_cap,
                max_outer, warm, wstate[0], fhat)
            if st == K_CONGESTION:
                scale *= 0.5
                wstate[0] = 0
                continue
            if st != K_OK:
                return st, iters
            fhat_inf = 0.0
            for e in range(m):
                ax = abs(fhat[e])
                if ax > fhat_inf:
                    fhat_inf = ax
            if fhat_inf > step_bound:
                scale *= 0.5
                wstate[0] = 0
                continue
            accepted = True
            break
        if not accepted:
            detail[0] = gap
            return K_CONGESTION, iters

        # weight extraction and closed-form reduction at f + fhat
        _dec_g_full(up, um, wp, wm, grad0, ell, fhat,
                    dvec, sc_h, gv, g1v, g2v)
        norm_p = 0.0
        for e in range(m):
            norm_p += gv[e] ** p
        norm = norm_p ** (1.0 / p)
        if norm == 0.0:
            return K_DEGENERATE, iters
        inc_mass = 0.0
        wsum_new = 0.0
        for e in range(m):
            rp = W * (gv[e] / norm) ** (p - 1)
            umin = up[e] if up[e] < um[e] else um[e]
            wpf = rp * umin * up[e]
            wpb = rp * umin * um[e]
            uf = up[e] - fhat[e]
            ub = um[e] + fhat[e]
            dq = wpf / uf - wpb / ub
            if dq >= 0.0:
                rf = dq * uf
                rb = 0.0
            else:
                rf = 0.0
                rb = -dq * ub
            wnf[e] = wp[e] + rf
            wnb[e] = wm[e] + rb
            inc_mass += rf + rb
            wsum_new += wnf[e] + wnb[e]
        if inc_mass > budget_iter:
            detail[0] = inc_mass
            detail[1] = budget_iter
            return K_BUDGET_ITER, iters
        coup_tol = coup_base * (1.0 + wsum_new / m)

        # dual fit against the gradient difference under the new weights
        for e in range(m):
            dvec[e] = wnf[e] / (up[e] - fhat[e]) - wnb[e] / (um[e] + fhat[e]) \
                - grad0[e]
        for v in range(n):
            rhs[v] = 0.0
        for e in range(m):
            rhs[head[e]] += dvec[e]
            rhs[tail[e]] -= dvec[e]
        st = _cg(tail, head, n, s, ones, rhs, lap_tol, ratio_cap, phi)
        if st != K_OK:
            return st, iters
        fit = 0.0
        for e in range(m):
            rme = abs(phi[head[e]] - phi[tail[e]] - dvec[e])
            if rme > fit:
                fit = rme
        if fit > coup_tol:
            detail[0] = fit
            detail[1] = coup_tol
            return K_POOR_FIT, iters

        # advance, coupling check under the new weights, commit
        for e in range(m):
            f[e] += fhat[e]
        for v in range(n):
            y[v] += phi[v]
        ok, coup, dual_gap, pot_bar, u_min, has_prec = _post_advance_stats(
            tail, head, cap_fwd, cap_bwd, is_precond, f, y, wnf, wnb, dvec)
        if not ok:
            return K_INTERIOR, iters
        if coup > coup_tol:
            detail[0] = coup
            detail[1] = coup_tol
            return K_COUPLING, iters
        if coup > REPAIR_FRACTION * coup_tol:
            st = _repair_coupling(tail, head, n, s, cap_fwd, cap_bwd,
                                  f, y, wnf, wnb, dvec, lap_tol, ratio_cap)
            if st != K_OK:
                return st, iters
            ok, coup, dual_gap, pot_bar, u_min, has_prec = \
                _post_advance_stats(tail, head, cap_fwd, cap_bwd, is_precond,
                                    f, y, wnf, wnb, dvec)
            if not ok:
                return K_INTERIOR, iters
        scal[0] += delta
        for e in range(m):
            wp[e] = wnf[e]
            wm[e] = wnb[e]
        if wsum_new > budget_total:
            detail[0] = wsum_new
            detail[1] = budget_total
            return K_BUDGET_TOTAL, iters
        for e in range(m):
            warm[e] = fhat[e]
        wstate[0] = 1

        mfl = float(m) if m > 1 else 1.0
        if dual_gap < -1e-9 * mfl:
            detail[0] = dual_gap
            return K_NEG_GAP, iters
        dg = dual_gap if dual_gap > 0.0 else 0.0
        stats[iters, STAT_F] = scal[0]
        stats[iters, STAT_GAP] = scal[1] - scal[0]
        stats[iters, STAT_DELTA] = delta
        stats[iters, STAT_POTENTIAL] = m * math.log1p(dg / m) + pot_bar
        stats[iters, STAT_RHO] = rho
        stats[iters, STAT_WNORM] = wsum_new
        stats[iters, STAT_WINC] = inc_mass
        stats[iters, STAT_COUPLING] = coup
        stats[iters, STAT_INNER] = outer_iters
        stats[iters, STAT_UHAT] = u_min if has_prec else np.nan
        stats[iters, STAT_FHAT] = fhat_inf
        iters += 1
