"""Warm-up progress step: constrained minimization of the potential decrement.

One step routes an extra delta units of s-t flow by minimizing the
quadratically extended decrement over {fhat : B' fhat = delta * chi}.  Because
the extended objective's Hessian diagonal never leaves [0.81, 1.24] times its
value D at fhat = 0, accelerated gradient descent in the D-metric with a fixed
condition number kappa = 1.9 converges in a few dozen iterations; every
iterate is kept on the constraint subspace by D-weighted projection (a
Laplacian solve with resistances D).

After the primal step the dual update is recovered by least squares: the step
is optimal exactly when the per-edge gradient difference d is a potential
difference B yhat, so fitting yhat to d and measuring the fit residual turns
the optimality condition into a checkable quantity.  Steps whose congestion
|fhat| / u_hat exceeds 0.1 are rejected with CongestionExceeded so the driver
can back off delta.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .barrier import (
    Weights,
    barrier_gradient,
    box_radius,
    coupling_residual,
    coupling_tolerance,
    decrement_value,
)
from .config import CONGESTION_BOUND, SolverConfig
from .errors import CongestionExceeded, CouplingLost, NoConvergence, PoorDualFit
from .graph import Graph, congestion, residual_caps
from .laplacian import project_to_demand, solve_laplacian

# Stall detector backing the AGD stop rule: float rounding in the gradient
# and in its projection puts an absolute floor under the step-norm criterion,
# and a relative target below that floor would spin to the iteration cap on
# an iterate that is already a machine-precision minimizer.  A stop is
# declared when the criterion has not improved by 10% for a full window of
# iterations while already AGD_STALL_RATIO-converged (far below any window a
# healthy run at kappa ~ 2 needs between 10% improvements).
AGD_STALL_WINDOW = 50
AGD_STALL_RATIO = 1e-6


@dataclass(frozen=True)
class StepResult:
    """Accepted primal/dual step with its congestion and termination data."""

    fhat: np.ndarray
    yhat: np.ndarray
    rho_fwd: np.ndarray
    rho_bwd: np.ndarray
    objective: float
    solver_iters: int
    grad_norm: float
    delta: float
    fit_residual: float
    w_new: Weights | None = None


def agd_minimize(
    value_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    g: Graph | None,
    demand: np.ndarray | None,
    x0: np.ndarray,
    D: np.ndarray,
    kappa: float,
    tol: float = 1e-10,
    max_iter: int = 2000,
    project_tol: float = 1e-12,
) -> tuple[np.ndarray, int, float]:
    """Nesterov's method in the D-metric for D <= Hessian <= kappa * D.

    Minimizes over {x : B'x = demand} when a graph is given (x0 must already
    satisfy the constraint), otherwise unconstrained.  Terminates when the
    projected gradient, measured in the D-norm through the identity
    proj_grad(y) = -kappa * (x_next - y), has fallen by the factor tol from
    its starting value, or when it stalls at its float-noise floor after
    falling by AGD_STALL_RATIO (rounding in the gradient and its projection
    bounds the criterion away from zero; a relative target below that floor
    is unreachable).  Momentum restarts whenever the step turns uphill.
    Returns (minimizer, iterations, final-to-initial gradient ratio).
    """
    def proj(vec: np.ndarray, dem: np.ndarray) -> np.ndarray:
        if g is None:
            return vec
        return project_to_demand(g, D, vec, dem, tol=project_tol)

    zero_dem = None if g is None else np.zeros(g.n)
    x = x0.astype(np.float64).copy()
    x_prev = x.copy()
    y = x.copy()
    beta = (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)
    crit0 = None
    crit = np.inf
    crit_best = np.inf
    stall = 0

    for it in range(max_iter):
        _, grad = value_grad(y)
        step = proj(-grad / (kappa * D), zero_dem)
        crit = kappa * float(np.sqrt((step * step) @ D))
        if crit0 is None:
            crit0 = crit
            if crit0 == 0.0:
                return x, 0, 0.0
        if crit <= tol * crit0:
            x = y + step
            return x, it + 1, crit / crit0
        if crit < 0.9 * crit_best:
            crit_best = crit
            stall = 0
        else:
            stall += 1
            if crit < crit_best:
                crit_best = crit
            if stall >= AGD_STALL_WINDOW and crit <= AGD_STALL_RATIO * crit0:
                x = y + step
                return x, it + 1, crit / crit0
        x_new = y + step
        if float(grad @ (x_new - x_prev)) > 0.0:
            y = x_new  # uphill momentum: restart
        else:
            y = x_new + beta * (x_new - x_prev)
        x_prev = x
        x = x_new

    raise NoConvergence(f"agd: gradient ratio {crit / crit0:.3g} above {tol:g} "
                        f"after {max_iter} iterations")


def uniform_precond_flow(g: Graph, delta: float) -> np.ndarray:
    """delta spread evenly over the preconditioner edges; satisfies the demand."""
    k = int(g.is_precond.sum())
    x0 = np.zeros(g.m)
    if k and delta != 0.0:
        x0[g.is_precond] = delta / k
    return x0


def dual_update(
    g: Graph,
    w: Weights,
    f: np.ndarray,
    fhat: np.ndarray,
    w_new: Weights | None = None,
    lap_tol: float = 1e-12,
    fit_bound: float | None = None,
) -> tuple[np.ndarray, float]:
    """Least-squares dual step: fit B yhat to the barrier-gradient difference.

    The target is d = grad phi_{w'}(f + fhat) - grad phi_w(f) with w' = w by
    default; at an exact constrained minimizer d is exactly a potential
    difference.  Solves the unit-resistance normal equations and returns
    (yhat, ||B yhat - d||_inf).  Raises PoorDualFit when the residual exceeds
    fit_bound (default: the coupling tolerance for w').
    """
    w_eff = w if w_new is None else w_new
    d = barrier_gradient(g, w_eff, f + fhat) - barrier_gradient(g, w, f)
    yhat = solve_laplacian(g, np.ones(g.m), g.vertex_residual(d), tol=lap_tol)
    residual = float(np.abs(g.edge_difference(yhat) - d).max()) if g.m else 0.0
    if fit_bound is None:
        fit_bound = coupling_tolerance(w_eff, g.m)
    if residual > fit_bound:
        raise PoorDualFit(f"dual fit residual {residual:.3g} exceeds {fit_bound:.3g}")
    return yhat, residual


def potential_decrement_step(
    g: Graph,
    w: Weights,
    f: np.ndarray,
    y: np.ndarray,
    delta: float,
    cfg: SolverConfig | None = None,
) -> StepResult:
    """Minimize the extended decrement over B'fhat = delta*chi and recover duals.

    Starts from the uniform preconditioner-edge flow (strictly interior,
    constraint-exact), runs agd_minimize with D equal to the decrement's
    Hessian diagonal at zero and kappa = 1.9, then validates congestion
    against the 0.1 bound and fits the dual update.
    """
    cfg = cfg or SolverConfig()
    if delta == 0.0:
        hess0 = decrement_value(g, w, f, np.zeros(g.m))[2]
        return StepResult(fhat=np.zeros(g.m), yhat=np.zeros(g.n),
                          rho_fwd=np.zeros(g.m), rho_bwd=np.zeros(g.m),
                          objective=0.0, solver_iters=0, grad_norm=0.0,
                          delta=0.0, fit_residual=0.0)

    rc = residual_caps(g, f)
    ell = box_radius(rc.fwd, rc.bwd)
    D = w.fwd / rc.fwd**2 + w.bwd / rc.bwd**2

    def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
        value, grad, _ = decrement_value(g, w, f, x, ell=ell)
        return value, grad

    demand = g.st_demand(delta)
    x0 = uniform_precond_flow(g, delta)
    fhat, iters, ratio = agd_minimize(objective, g, demand, x0, D,
                                      kappa=cfg.agd_kappa, tol=cfg.step_tol,
                                      project_tol=cfg.laplacian_tol)

    residual = np.abs(g.vertex_residual(fhat) - demand).max()
    if residual > max(cfg.conservation_tol, 1e-9 * max(1.0, abs(delta))):
        raise NoConvergence(f"constraint residual {residual:.3g} after projection")

    rho_f, rho_b = congestion(fhat, rc)
    rho_max = max(rho_f.max(), rho_b.max()) if g.m else 0.0
    if rho_max > CONGESTION_BOUND * (1 + 1e-9):
        raise CongestionExceeded(f"congestion {rho_max:.4f} exceeds {CONGESTION_BOUND}")

    yhat, fit_residual = dual_update(g, w, f, fhat, lap_tol=cfg.laplacian_tol)
    objective_value = decrement_value(g, w, f, fhat, ell=ell)[0]
    return StepResult(fhat=fhat, yhat=yhat, rho_fwd=rho_f, rho_bwd=rho_b,
                      objective=objective_value, solver_iters=iters,
                      grad_norm=ratio, delta=delta, fit_residual=fit_residual)


def advance(state, step: StepResult):
    """Apply an accepted step: f += fhat, y += yhat, F += delta.

    Recomputes the coupling residual under the step's weights (the existing
    ones unless the step carries a weight change) and raises CouplingLost if
    it exceeds tolerance.  Returns a new state object of the same type.
    """
    f_new = state.f + step.fhat
    y_new = state.y + step.yhat
    w_eff = step.w_new if step.w_new is not None else state.w
    res = coupling_residual(state.g, w_eff, f_new, y_new)
    bound = coupling_tolerance(w_eff, state.g.m)
    worst = float(np.abs(res).max()) if res.size else 0.0
    if worst > bound:
        raise CouplingLost(f"coupling residual {worst:.3g} exceeds {bound:.3g}")
    return dataclasses.replace(
        state, f=f_new, y=y_new, w=w_eff,
        F=state.F + step.delta, iteration=state.iteration + 1,
    )
