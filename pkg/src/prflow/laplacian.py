"""Resistances, graph Laplacian solves, electrical flows, and demand projection.

The Laplacian is L = B' R^{-1} B for the incidence operator fixed in graph.py,
applied matrix-free.  Solves pin the potential at the source vertex and run
preconditioned conjugate gradient on the reduced (source-deleted) system with
a Jacobi preconditioner; that is deterministic and entirely adequate at the
instance sizes this package targets.  Stronger preconditioners can be swapped
in behind solve_laplacian without touching callers.

All entry points enforce two guards: demands must be balanced (sum to zero
within tolerance, then re-centered exactly), and the resistance ratio
max(r)/min(r) must stay below a configured cap so conditioning stays
quasi-polynomial.
"""

from __future__ import annotations

import numpy as np

from .errors import NoConvergence, NotBalanced, ResistanceRatioExceeded
from .graph import Flow, Graph

DEFAULT_TOL = 1e-10
ITER_CAP_MULT = 50
RATIO_CAP = 1e30


def check_resistances(r: np.ndarray, ratio_cap: float = RATIO_CAP) -> None:
    """Reject non-positive resistances and ratios beyond the conditioning cap."""
    if r.size == 0:
        return
    lo = float(r.min())
    if lo <= 0.0:
        raise ResistanceRatioExceeded(f"non-positive resistance {lo:g}")
    ratio = float(r.max()) / lo
    if ratio > ratio_cap:
        raise ResistanceRatioExceeded(f"resistance ratio {ratio:.3g} exceeds cap {ratio_cap:g}")


def laplacian_apply(g: Graph, r: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """L phi with L = B' R^{-1} B, computed edge-wise without forming L."""
    return g.vertex_residual(g.edge_difference(phi) / r)


def _balance(chi: np.ndarray, tol: float) -> np.ndarray:
    total = float(chi.sum())
    scale = max(1.0, float(np.abs(chi).sum()))
    if abs(total) > max(tol, 1e-12) * scale:
        raise NotBalanced(f"demand sums to {total:g}")
    if total != 0.0:
        chi = chi - total / chi.shape[0]
    return chi


def solve_laplacian(
    g: Graph,
    r: np.ndarray,
    chi: np.ndarray,
    tol: float = DEFAULT_TOL,
    ratio_cap: float = RATIO_CAP,
) -> np.ndarray:
    """Potentials phi with L phi = chi and phi normalized to phi_s = 0.

    Jacobi-preconditioned CG on the source-deleted system; converged when
    the full residual satisfies ||L phi - chi||_2 <= tol * ||chi||_2.
    Raises NotBalanced for unbalanced demands and NoConvergence past the
    iteration cap of ITER_CAP_MULT * n.
    """
    check_resistances(np.asarray(r, dtype=np.float64), ratio_cap)
    chi = _balance(np.asarray(chi, dtype=np.float64), tol)
    n, s = g.n, g.s
    chi_norm = float(np.linalg.norm(chi))
    if chi_norm == 0.0:
        return np.zeros(n)

    free = np.arange(n) != s
    conductance = 1.0 / r
    diag = np.zeros(n)
    np.add.at(diag, g.tail, conductance)
    np.add.at(diag, g.head, conductance)
    inv_diag = 1.0 / diag[free]

    def apply_reduced(x_free: np.ndarray) -> np.ndarray:
        full = np.zeros(n)
        full[free] = x_free
        return laplacian_apply(g, r, full)[free]

    b = chi[free]
    x = np.zeros(n - 1)
    res = b.copy()
    z = inv_diag * res
    p = z.copy()
    rz = float(res @ z)
    cap = ITER_CAP_MULT * n
    target = tol * chi_norm

    for _ in range(cap):
        if np.linalg.norm(res) <= target:
            break
        Ap = apply_reduced(p)
        alpha = rz / float(p @ Ap)
        x += alpha * p
        res -= alpha * Ap
        z = inv_diag * res
        rz_new = float(res @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        raise NoConvergence(f"laplacian solve: residual {np.linalg.norm(res):.3g} "
                            f"above {target:.3g} after {cap} iterations")

    phi = np.zeros(n)
    phi[free] = x
    return phi


def electrical_flow(
    g: Graph,
    r: np.ndarray,
    chi: np.ndarray,
    tol: float = DEFAULT_TOL,
    ratio_cap: float = RATIO_CAP,
) -> Flow:
    """Energy-minimal flow routing chi: f_e = (phi_head - phi_tail) / r_e.

    The reported value is the demand at the sink, which for an s-t demand is
    the routed flow value.
    """
    phi = solve_laplacian(g, r, chi, tol=tol, ratio_cap=ratio_cap)
    f = g.edge_difference(phi) / r
    return Flow(values=f, value=float(np.asarray(chi)[g.t]))


def project_to_demand(
    g: Graph,
    r: np.ndarray,
    f_raw: np.ndarray,
    chi: np.ndarray,
    tol: float = DEFAULT_TOL,
    ratio_cap: float = RATIO_CAP,
) -> np.ndarray:
    """r-weighted least-squares projection of f_raw onto {f : B'f = chi}.

    Solves L phi = B' f_raw - chi and returns f_raw - R^{-1} B phi, which
    restores the demand while moving f_raw as little as possible in the
    r-weighted norm; circulations (cycle space) pass through untouched.
    """
    chi = _balance(np.asarray(chi, dtype=np.float64), tol)
    excess = g.vertex_residual(f_raw) - chi
    if float(np.linalg.norm(excess)) <= tol * max(1.0, float(np.linalg.norm(f_raw))):
        return f_raw.copy()
    phi = solve_laplacian(g, r, excess, tol=tol, ratio_cap=ratio_cap)
    return f_raw - g.edge_difference(phi) / r
