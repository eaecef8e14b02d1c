"""Weighted progress step: composite objective, weight extraction, reduction.

The weighted phase augments the decrement objective with W times the p-norm
of the per-edge g terms,

    composite(fhat) = DPhi(fhat) + W * ( sum_e g_e(fhat)^p )^{1/p},

both parts quadratically extended with the shared per-edge box.  At the
constrained minimizer the p-norm gradient must be absorbed into the coupling
condition, and that is exactly what the weight extraction does: with

    r'_e = W * (g_e / ||g||_p)^{p-1},          ||r'||_q = W  (q dual to p),
    w'+_e = r'_e * u_min * u_hat+,   w'-_e = r'_e * u_min * u_hat-,

the identity grad phi_{w'}(f + fhat) = r' * g'(fhat) holds edge-wise in both
orientations, so the new triple is well-coupled under w + w''.  Weight
reduction then replaces w' by the coordinate-wise smallest non-negative w''
with the same coupling quantity at f + fhat, keeping the total weight mass
controlled.

The solver follows the spec'd outer/inner shape: an outer refinement loop
whose inner subproblem is separable (gradient-linear plus quadratic plus
p-th-power terms) and solved by projected Newton on its diagonal metric, with
a backtracking line search on the true composite.  For p = 2 the first inner
solve is a single electrical-flow step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .barrier import (
    Weights,
    _g_eval,
    box_radius,
    decrement_value,
    g_terms,
)
from .config import (
    CONGESTION_BOUND,
    FHAT_BOUND_COEFF,
    SolverConfig,
    default_eta,
    default_p,
    edge_value_constants,
    pnorm_weight_default,
    power_step_constants,
)
from .errors import (
    CongestionExceeded,
    DegenerateStep,
    NoConvergence,
    WeightBudgetExceeded,
)
from .graph import Graph, build_graph, congestion, residual_caps
from .laplacian import project_to_demand
from .potential_step import StepResult, advance, dual_update, uniform_precond_flow

NORM_FLOOR = 1e-12   # below this ||g||_p the p-th-power surrogate takes over


@dataclass(frozen=True)
class WeightChange:
    """Extraction output: multipliers, raw increases, and reduced increases."""

    r_prime: np.ndarray
    w_prime_fwd: np.ndarray
    w_prime_bwd: np.ndarray
    w_red_fwd: np.ndarray
    w_red_bwd: np.ndarray

    @property
    def raw_mass(self) -> float:
        return float(self.w_prime_fwd.sum() + self.w_prime_bwd.sum())

    @property
    def reduced_mass(self) -> float:
        return float(self.w_red_fwd.sum() + self.w_red_bwd.sum())


def _pnorm_terms(gv: np.ndarray, g1: np.ndarray, g2: np.ndarray, W: float,
                 p: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient, and diagonal curvature of W * ||g||_p at the point.

    Scaled through t = g / ||g||_p (all entries in [0, 1]) so no intermediate
    overflows for large p; when the norm degenerates the p-th-power surrogate
    with a frozen scalar scale is used instead, per the solver contract.
    """
    norm = float(np.power(gv, p).sum()) ** (1.0 / p) if gv.size else 0.0
    if norm < NORM_FLOOR:
        scale = W / NORM_FLOOR ** (p - 1)
        value = scale * float(np.power(gv, p).sum())
        grad = scale * p * np.power(gv, p - 1) * g1
        diag = scale * p * ((p - 1) * np.power(gv, p - 2) * g1 * g1
                            + np.power(gv, p - 1) * g2)
        return value, grad, diag
    t = gv / norm
    tp1 = np.power(t, p - 1)
    grad = W * tp1 * g1
    diag = W * ((p - 1) * np.power(t, p - 2) * g1 * g1 / norm + tp1 * g2)
    return W * norm, grad, diag


def composite_objective(
    g: Graph,
    w: Weights,
    f: np.ndarray,
    fhat: np.ndarray,
    W: float,
    p: int,
    ell: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Extended decrement plus W times the p-norm of the g terms, with gradient."""
    rc = residual_caps(g, f)
    if ell is None:
        ell = box_radius(rc.fwd, rc.bwd)
    dv, dg, _ = decrement_value(g, w, f, fhat, ell=ell)
    gv, g1, g2 = _g_eval(g, f, fhat, ell=ell)
    nv, ng, _ = _pnorm_terms(gv, g1, g2, W, p)
    return dv + nv, dg + ng


def _composite_full(g, w, f, fhat, W, p, ell):
    """(value, gradient, positive diagonal curvature) of the composite."""
    dv, dg, dh = decrement_value(g, w, f, fhat, ell=ell)
    gv, g1, g2 = _g_eval(g, f, fhat, ell=ell)
    nv, ng, nh = _pnorm_terms(gv, g1, g2, W, p)
    # the p-norm Hessian also has a negative semidefinite rank-one part that a
    # diagonal metric must ignore; dropping it only over-estimates curvature
    return dv + nv, dg + ng, dh + np.maximum(nh, 0.0)


def solve_composite(
    g: Graph,
    w: Weights,
    f: np.ndarray,
    delta: float,
    W: float,
    p: int,
    cfg: SolverConfig | None = None,
    warm: np.ndarray | None = None,
    stats: dict | None = None,
) -> np.ndarray:
    """Minimize the composite over {fhat : B'fhat = delta * chi}.

    Outer refinement: at the current iterate build the separable residual
    subproblem  alpha'd + sum_e q_e d^2 + W d^p  with alpha the exact
    composite gradient and q the composite's diagonal curvature, solve it by
    projected Newton over circulations, then take the largest backtracked
    step that decreases the true composite.  Warm starts are projected onto
    the demand before use.  A one-edge-dominated degenerate norm falls back
    to the p-th-power surrogate inside the evaluators.
    """
    cfg = cfg or SolverConfig()
    if delta == 0.0:
        return np.zeros(g.m)
    rc = residual_caps(g, f)
    ell = box_radius(rc.fwd, rc.bwd)
    demand = g.st_demand(delta)

    _, _, D0 = _composite_full(g, w, f, np.zeros(g.m), W, p, ell)
    if warm is not None:
        x = project_to_demand(g, D0, warm, demand, tol=cfg.laplacian_tol)
    else:
        x = uniform_precond_flow(g, delta)
        x = project_to_demand(g, D0, x, demand, tol=cfg.laplacian_tol)

    crit0 = None
    prev_crit = np.inf
    outer = 0
    for outer in range(1, cfg.composite_max_outer + 1):
        value, alpha, q = _composite_full(g, w, f, x, W, p, ell)
        d = _inner_residual_solve(g, alpha, q, W, p, cfg)
        lam = float(-(alpha @ d))
        crit = np.sqrt(max(lam, 0.0))
        if crit0 is None:
            crit0 = crit
            if crit0 == 0.0:
                break
        if crit <= cfg.step_tol * crit0 + 1e-30:
            break
        if lam <= 1e-14 * (1.0 + abs(value)):
            # predicted decrease below the objective's float noise: line
            # search can no longer arbitrate, but the gradient is still
            # accurate, and with the 2q metric over-estimating the convex
            # objective's curvature a full step contracts on its own
            if crit > 0.9 * prev_crit:
                break  # noise floor of the gradient itself
            x = x + d
            prev_crit = crit
            continue
        prev_crit = crit
        tau = 1.0
        accepted = False
        for _ in range(60):
            cand = x + tau * d
            cand_value = composite_objective(g, w, f, cand, W, p, ell=ell)[0]
            if cand_value <= value - 0.25 * tau * lam:
                x = cand
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            break  # step below float resolution: stationary for our purposes
    else:
        raise NoConvergence(
            f"composite solve: gradient ratio {crit / crit0:.3g} after "
            f"{cfg.composite_max_outer} outer iterations")
    if stats is not None:
        stats["outer_iters"] = outer

    rho_f, rho_b = congestion(x, rc)
    rho_max = max(rho_f.max(), rho_b.max()) if g.m else 0.0
    if rho_max > CONGESTION_BOUND * (1 + 1e-9):
        raise CongestionExceeded(f"congestion {rho_max:.4f} exceeds {CONGESTION_BOUND}")
    return x


def _inner_residual_solve(g, alpha, q, W, p, cfg, newton_iters=12):
    """min over circulations of alpha'd + sum q d^2 + W sum d^p, p even.

    The residual subproblem of the outer refinement: linear term from the
    exact composite gradient, quadratic coefficients from the current
    curvature, and the p-th-power tail.  Projected Newton in its own diagonal
    metric; for p = 2 the inner objective is quadratic and one
    electrical-flow solve with resistances q + W is exact.
    """
    d = np.zeros_like(alpha)
    zero = np.zeros(g.n)
    for _ in range(newton_iters):
        grad = alpha + 2.0 * q * d + W * p * np.power(d, p - 1)
        hess = 2.0 * q + W * p * (p - 1) * np.power(d, p - 2) if p > 2 \
            else 2.0 * (q + W)
        step = -project_to_demand(g, hess, grad / hess, zero, tol=cfg.laplacian_tol)
        if float(np.abs(step).max()) <= 1e-16 * (1.0 + float(np.abs(d).max())):
            break
        value = float(alpha @ d + q @ (d * d) + W * np.power(d, p).sum())
        tau = 1.0
        moved = False
        for _ in range(40):
            cand = d + tau * step
            cand_value = float(alpha @ cand + q @ (cand * cand)
                               + W * np.power(cand, p).sum())
            if cand_value <= value + 1e-14 * abs(value):
                d = cand
                moved = True
                break
            tau *= 0.5
        if not moved or p == 2:
            break
    return d


def extract_weights(
    g: Graph,
    f: np.ndarray,
    fhat: np.ndarray,
    W: float,
    p: int,
) -> WeightChange:
    """Weight increase that absorbs the p-norm gradient into the coupling.

    r' = W * (g / ||g||_p)^{p-1} gives ||r'||_q = W identically; the raw
    increases r' * u_min * u_hat+- are orientation-free and satisfy
    w'+/u_hat+ = w'-/u_hat- (no coupling change at f itself).  Reduction to
    w'' happens at f + fhat.  Raises DegenerateStep when every g term is zero.
    """
    rc = residual_caps(g, f)
    gv = g_terms(g, f, fhat)
    norm = float(np.power(gv, p).sum()) ** (1.0 / p) if gv.size else 0.0
    if norm == 0.0:
        raise DegenerateStep("all g terms vanish; no weight direction")
    r_prime = W * np.power(gv / norm, p - 1)
    u_min = np.minimum(rc.fwd, rc.bwd)
    w_prime_fwd = r_prime * u_min * rc.fwd
    w_prime_bwd = r_prime * u_min * rc.bwd
    w_red_fwd, w_red_bwd = reduce_weights(g, f, fhat, (w_prime_fwd, w_prime_bwd))
    return WeightChange(r_prime=r_prime, w_prime_fwd=w_prime_fwd,
                        w_prime_bwd=w_prime_bwd, w_red_fwd=w_red_fwd,
                        w_red_bwd=w_red_bwd)


def reduce_weights(
    g: Graph,
    f: np.ndarray,
    fhat: np.ndarray,
    w_prime: tuple[np.ndarray, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Smallest non-negative weights with the same coupling quantity at f+fhat.

    With a+ = w'+/(u_hat+ - fhat), a- = w'-/(u_hat- + fhat) and d = a+ - a-,
    the closed form puts all mass on one side: (d*(u_hat+ - fhat), 0) when
    d >= 0, else (0, -d*(u_hat- + fhat)).
    """
    wp, wm = w_prime
    rc = residual_caps(g, f)
    uf = rc.fwd - fhat
    ub = rc.bwd + fhat
    d = wp / uf - wm / ub
    w_red_fwd = np.where(d >= 0.0, d * uf, 0.0)
    w_red_bwd = np.where(d >= 0.0, 0.0, -d * ub)
    return w_red_fwd, w_red_bwd


def weighted_progress_step(state, cfg: SolverConfig, warm: np.ndarray | None = None,
                           delta_scale: float = 1.0):
    """One accepted weighted iteration: solve, extract, reduce, advance.

    delta = (F* - F) / (5000 * m^{1/2 - eta}), times delta_scale when the
    driver is backing off after a congestion failure; validates the
    congestion bound 0.1, the step-size bound 9 m^{-2 eta}, and the
    per-iteration weight budget before committing.  Returns
    (new_state, WeightChange, StepResult).
    """
    g: Graph = state.g
    m = g.m
    eta = cfg.eta if cfg.eta is not None else default_eta(m, 1.0)
    p = cfg.p if cfg.p is not None else default_p(m)
    W = cfg.pnorm_weight if cfg.pnorm_weight is not None \
        else pnorm_weight_default(m, eta, p)
    gap = state.F_star - state.F
    delta = gap / (5000.0 * m ** (0.5 - eta)) * delta_scale

    stats: dict = {}
    fhat = solve_composite(g, state.w, state.f, delta, W, p, cfg, warm=warm,
                           stats=stats)

    rc = residual_caps(g, state.f)
    rho_f, rho_b = congestion(fhat, rc)
    step_bound = FHAT_BOUND_COEFF * m ** (-2.0 * eta)
    if float(np.abs(fhat).max()) > step_bound:
        raise CongestionExceeded(
            f"step magnitude {np.abs(fhat).max():.3g} exceeds {step_bound:.3g}")

    change = extract_weights(g, state.f, fhat, W, p)
    budget = cfg.weight_budget_per_iter(m, eta, g.cap_bound)
    if change.reduced_mass > budget:
        raise WeightBudgetExceeded(
            f"weight increase {change.reduced_mass:.3g} exceeds {budget:.3g}")

    w_new = Weights(state.w.fwd + change.w_red_fwd,
                    state.w.bwd + change.w_red_bwd)
    yhat, fit_residual = dual_update(g, state.w, state.f, fhat, w_new=w_new,
                                     lap_tol=cfg.laplacian_tol)
    objective = composite_objective(g, state.w, state.f, fhat, W, p)[0]
    step = StepResult(fhat=fhat, yhat=yhat, rho_fwd=rho_f, rho_bwd=rho_b,
                      objective=objective,
                      solver_iters=stats.get("outer_iters", 0), grad_norm=0.0,
                      delta=delta, fit_residual=fit_residual, w_new=w_new)
    return advance(state, step), change, step


# ---- verification helpers for the two Taylor sandwich lemmas ----

class EdgeState(NamedTuple):
    """Residual capacities and weights of a single edge, as scalars."""

    u_hat_fwd: float
    u_hat_bwd: float
    w_fwd: float
    w_bwd: float


def _mini(edge: EdgeState) -> tuple[Graph, Weights]:
    cap = max(edge.u_hat_fwd, edge.u_hat_bwd)
    g1 = build_graph(2, [(0, 1, edge.u_hat_fwd, edge.u_hat_bwd)], 0, 1, cap)
    return g1, Weights(np.array([edge.w_fwd]), np.array([edge.w_bwd]))


def edge_value(edge: EdgeState, x: float, p: int) -> float:
    """Per-edge composite term: extended decrement plus g^p at step x."""
    g1, w = _mini(edge)
    zero = np.zeros(1)
    xv = np.array([float(x)])
    dv = decrement_value(g1, w, zero, xv)[0]
    gv = float(g_terms(g1, zero, xv)[0])
    return dv + gv ** p


def sandwich_bounds(
    edge: EdgeState,
    fpos: float,
    delta: float,
    p: int,
    constants: tuple[float, float] | None = None,
) -> tuple[float, float, float]:
    """Two-sided Taylor bound on the per-edge composite term.

    Both bounds share value and slope at fpos; the lower one uses (9/10)^2
    times the barrier curvature plus c_lo * (|fpos|^{2p-4} delta^2 + delta^p),
    the upper one (11/10)^2 and c_hi.  The constants are calibrated by
    scripts/calibrate_sandwich.py and frozen in config.  Returns
    (lower, upper, actual value at fpos + delta).
    """
    if constants is None:
        constants = edge_value_constants(p)
    c_lo, c_hi = constants
    g1, w = _mini(edge)
    zero = np.zeros(1)
    xv = np.array([float(fpos)])
    dv, dg, _ = decrement_value(g1, w, zero, xv)
    gv, g1d, _ = _g_eval(g1, zero, xv)
    value = dv + float(gv[0]) ** p
    slope = float(dg[0]) + p * float(gv[0]) ** (p - 1) * float(g1d[0])
    r = (edge.w_fwd / (edge.u_hat_fwd - fpos) ** 2
         + edge.w_bwd / (edge.u_hat_bwd + fpos) ** 2)
    power = abs(fpos) ** (2 * p - 4) * delta ** 2 + delta ** p
    base = value + delta * slope
    lower = base + 0.81 * delta ** 2 * r + c_lo * power
    upper = base + 1.21 * delta ** 2 * r + c_hi * power
    actual = edge_value(edge, fpos + delta, p)
    return lower, upper, actual


def power_step_bounds(
    x: float,
    delta: float,
    p: int,
    constants: tuple[float, float] | None = None,
) -> tuple[float, float, float]:
    """Two-sided bound on (x + delta)^p around x, p even.

    lower/upper = x^p + p x^{p-1} delta + c * (|x|^{p-2} delta^2 + |delta|^p)
    with calibrated (c_lo, c_hi); returns (lower, upper, actual).
    """
    if constants is None:
        constants = power_step_constants(p)
    c_lo, c_hi = constants
    lin = x ** p + p * x ** (p - 1) * delta
    h = abs(x) ** (p - 2) * delta ** 2 + abs(delta) ** p
    return lin + c_lo * h, lin + c_hi * h, (x + delta) ** p
