"""Outer solve pipeline: target search, progress phases, rounding, augmenting.

The interior phases cannot run on the raw instance: they need strictly
positive capacity on both sides of every edge and slack that survives all the
way to the rounding threshold.  `solve` therefore

  1. relaxes every zero capacity side to a small interior width (0.5, chosen
     below any integer so rounding pulls such edges back to legal values),
  2. preconditions the relaxed graph with m undirected s-t edges of capacity
     2U, which raises the target to F* + 2mU and guarantees residual slack on
     the added edges at every well-coupled iterate,
  3. runs the warm-up or the weighted schedule until the remaining gap drops
     below the rounding threshold,
  4. restricts the fractional iterate to the original edges, cancels the
     fractional mass along cycles and s-t paths into an integral feasible
     flow, and
  5. finishes with BFS augmenting paths, which lands on the exact maximum
     flow regardless of the claimed target; a mismatch between the claim and
     the exact value flags the claim as faulty and triggers a binary-search
     correction.

F* itself comes from (in priority order) an explicit override, the built-in
combinatorial oracle, or a binary search whose feasibility probe is the
pipeline itself.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np

from .barrier import (
    COUPLING_TOL_BASE,
    Weights,
    coupling_residual,
    coupling_tolerance,
    potential_value,
)
from .config import (
    FHAT_BOUND_COEFF,
    REPAIR_FRACTION,
    WARMUP_DELTA_DIVISOR,
    WEIGHT_BUDGET_FACTOR,
    WEIGHTED_DELTA_DIVISOR,
    SolverConfig,
    default_eta,
    default_p,
    pnorm_weight_default,
)
from .errors import (
    CongestionExceeded,
    CouplingLost,
    DegenerateStep,
    InfeasibleFlow,
    InvalidParams,
    IterationCapExceeded,
    NoConvergence,
    PoorDualFit,
    ResistanceRatioExceeded,
    SolverError,
    WeightBudgetExceeded,
)
from .graph import Flow, Graph, check_flow, precondition, residual_caps
from .laplacian import solve_laplacian
from .oracle import _residual_arcs, dinic_on_arcs
from .potential_step import advance, potential_decrement_step
from .trace import TraceRecord, TraceWriter
from .weighted_step import weighted_progress_step

# Interior width given to a zero capacity side for the duration of the
# interior phases.  Any value in (0, 1) works for correctness (rounding only
# ever returns such an edge to 0); 0.5 keeps the barrier terms well scaled.
RELAX_WIDTH = 0.5

# Entries this close to an integer are treated as that integer by rounding.
SNAP_TOL = 1e-9

# Threshold separating genuine fractional mass from accumulated float dust
# in the cancellation walk.
FRAC_TOL = 1e-7

# Headroom multiplier on the nominal iteration counts before the phase loops
# give up; nominal counts already over-estimate (each step removes slightly
# more than the continuous approximation), so hitting the cap means the
# target is infeasible or something is genuinely wrong.
ITER_CAP_SLACK = 1.1
ITER_CAP_PAD = 16

# Iterations per compiled-kernel call; bounds the stat buffer and how often
# the trace is flushed.
KERNEL_CHUNK = 2048


@dataclass(frozen=True)
class IterateState:
    """One interior iterate: graph it lives on, primal/dual point, progress."""

    g: Graph
    f: np.ndarray
    y: np.ndarray
    w: Weights
    F: float
    F_star: float
    iteration: int


@dataclass(frozen=True)
class SolveReport:
    """Everything `solve` certifies about one run."""

    flow: Flow                    # integral, on the original graph
    value: float
    f_star: int                   # certified original-graph optimum
    f_star_corrected: bool        # initial claim was wrong and got re-derived
    warmup_iterations: int
    weighted_iterations: int
    augmenting_paths: int
    oracle_agreement: bool | None
    trace_path: str | None
    config: SolverConfig


# ---- initialization ----

def relax_zero_sides(g: Graph, width: float = RELAX_WIDTH) -> Graph:
    """Give every zero capacity side a small interior width.

    The barrier needs strictly positive capacity in both directions of every
    edge; the sub-integer width keeps every relaxed direction incapable of
    carrying integral flow, so rounding against the original capacities
    undoes the relaxation exactly.
    """
    if g.m == 0 or (g.cap_fwd.min() > 0 and g.cap_bwd.min() > 0):
        return g
    cf = np.where(g.cap_fwd == 0.0, width, g.cap_fwd)
    cb = np.where(g.cap_bwd == 0.0, width, g.cap_bwd)
    return Graph(n=g.n, tail=g.tail, head=g.head, cap_fwd=cf, cap_bwd=cb,
                 s=g.s, t=g.t, cap_bound=g.cap_bound, is_precond=g.is_precond)


def initialize(g_pre: Graph, F_star: float) -> IterateState:
    """Starting iterate: zero flow and duals, weights proportional to capacity.

    w+- = c * u+- with c = 2m / sum(u+ + u-) makes the coupling residual
    exactly zero at f = 0 for any capacities (the two barrier terms cancel
    edge-wise) and fixes ||w||_1 = 2m.
    """
    m = g_pre.m
    total = float(g_pre.cap_fwd.sum() + g_pre.cap_bwd.sum())
    c = 2.0 * m / total
    w = Weights(fwd=c * g_pre.cap_fwd, bwd=c * g_pre.cap_bwd)
    return IterateState(g=g_pre, f=np.zeros(m), y=np.zeros(g_pre.n), w=w,
                        F=0.0, F_star=float(F_star), iteration=0)


# ---- trace plumbing ----

def _emit(trace: TraceWriter | None, state: IterateState, step, mode: str,
          w_inc: float, t0: float) -> None:
    if trace is None:
        return
    g = state.g
    rho = float(max(step.rho_fwd.max(), step.rho_bwd.max())) if g.m else 0.0
    coup = coupling_residual(g, state.w, state.f, state.y)
    rc = residual_caps(g, state.f)
    if g.is_precond.any():
        u_min = float(np.minimum(rc.fwd, rc.bwd)[g.is_precond].min())
    else:
        u_min = None
    trace.record(TraceRecord(
        iteration=state.iteration, mode=mode, F=state.F,
        gap=state.F_star - state.F, delta=step.delta,
        potential=potential_value(g, state.w, state.f),
        rho_inf=rho, w_norm1=state.w.norm1, w_inc_norm1=w_inc,
        coupling_inf=float(np.abs(coup).max()) if g.m else 0.0,
        fhat_inf=float(np.abs(step.fhat).max()) if g.m else 0.0,
        inner_iters=step.solver_iters, u_hat_precond_min=u_min,
        wall_time=time.monotonic() - t0))


# ---- progress phases ----

def _maybe_repair(state: IterateState, cfg: SolverConfig) -> IterateState:
    """Recenter the iterate when accumulated coupling drift nears tolerance.

    Every accepted step leaves the dual fit's irreducible residual in the
    coupling; that residual is divergence free, so further dual fitting
    cannot remove it, and it accumulates linearly with the iteration count
    against a fixed tolerance.  With H the barrier Hessian diagonal and
    r = By - grad(phi_w), the dual shift z solving L_H z = -B'(r / H) and the
    circulation df = (r + Bz) / H cancel r to second order in ||r|| while
    leaving F, conservation, and the step schedule untouched.
    """
    g = state.g
    if g.m == 0:
        return state
    r = coupling_residual(g, state.w, state.f, state.y)
    if np.abs(r).max() <= REPAIR_FRACTION * coupling_tolerance(state.w, g.m):
        return state
    rc = residual_caps(g, state.f)
    H = state.w.fwd / rc.fwd ** 2 + state.w.bwd / rc.bwd ** 2
    z = solve_laplacian(g, H, -g.vertex_residual(r / H),
                        tol=cfg.laplacian_tol,
                        ratio_cap=cfg.resistance_ratio_cap)
    df = (r + g.edge_difference(z)) / H
    if (rc.fwd - df).min() <= 0.0 or (rc.bwd + df).min() <= 0.0:
        return state   # correction would leave the interior; keep the drift
    return dataclasses.replace(state, f=state.f + df, y=state.y + z)


def _phase_cap(cfg: SolverConfig, per_unit: float, gap0: float,
               threshold: float) -> int:
    if cfg.max_iterations is not None:
        return cfg.max_iterations
    nominal = per_unit * math.log(max(gap0 / threshold, 1.0))
    return int(math.ceil(ITER_CAP_SLACK * nominal)) + ITER_CAP_PAD


_KERNELS = None
_KERNELS_ERROR: Exception | None = None


def _kernels_module():
    """Import the compiled kernels once; None when numba is unavailable."""
    global _KERNELS, _KERNELS_ERROR
    if _KERNELS is None and _KERNELS_ERROR is None:
        try:
            from . import _kernels
            _KERNELS = _kernels
        except ImportError as exc:   # no numba in this environment
            _KERNELS_ERROR = exc
    return _KERNELS


def resolve_backend(cfg: SolverConfig) -> str:
    """Which phase-loop implementation a config will actually run."""
    if cfg.backend == "python":
        return "python"
    if _kernels_module() is not None:
        return "numba"
    if cfg.backend == "numba":
        raise InvalidParams(f"backend 'numba' requested but unavailable: "
                            f"{_KERNELS_ERROR}")
    return "python"


def _raise_kernel_status(ker, status: int, detail: np.ndarray, mode: str,
                         gap: float, max_halvings: int) -> None:
    if status == ker.K_CONGESTION:
        raise CongestionExceeded(
            f"{mode}: congested even after {max_halvings} delta halvings "
            f"at gap {gap:.4g}")
    if status in (ker.K_CG_FAIL, ker.K_AGD_FAIL, ker.K_COMPOSITE_FAIL):
        raise NoConvergence(f"{mode}: inner solver failed to converge "
                            f"(kernel status {status})")
    if status == ker.K_CONSTRAINT:
        raise NoConvergence(f"constraint residual {detail[0]:.3g} after "
                            f"projection")
    if status == ker.K_RATIO:
        raise ResistanceRatioExceeded("resistance ratio beyond cap in a "
                                      "kernel solve")
    if status == ker.K_POOR_FIT:
        raise PoorDualFit(f"dual fit residual {detail[0]:.3g} exceeds "
                          f"{detail[1]:.3g}")
    if status == ker.K_COUPLING:
        raise CouplingLost(f"coupling residual {detail[0]:.3g} exceeds "
                           f"{detail[1]:.3g}")
    if status == ker.K_DEGENERATE:
        raise DegenerateStep("all g terms vanish; no weight direction")
    if status == ker.K_BUDGET_ITER:
        raise WeightBudgetExceeded(f"weight increase {detail[0]:.3g} exceeds "
                                   f"{detail[1]:.3g}")
    if status == ker.K_BUDGET_TOTAL:
        raise WeightBudgetExceeded(f"||w||_1 = {detail[0]:.4g} exceeds "
                                   f"{detail[1]:.4g}")
    if status == ker.K_INTERIOR:
        raise InfeasibleFlow("iterate left the capacity interior")
    if status == ker.K_NEG_GAP:
        raise InvalidParams(f"negative duality gap {detail[0]:g}")
    raise SolverError(f"unexpected kernel status {status}")


def _run_phase_kernel(state: IterateState, cfg: SolverConfig, mode: str,
                      threshold: float, per_unit: float, cap: int,
                      trace: TraceWriter | None, t0: float,
                      weighted_scalars: tuple | None) -> IterateState:
    """Chunked kernel loop shared by both phases; mirrors the python loops."""
    ker = _kernels_module()
    g = state.g
    m, n = g.m, g.n
    tail = np.ascontiguousarray(g.tail, dtype=np.int64)
    head = np.ascontiguousarray(g.head, dtype=np.int64)
    f = state.f.astype(np.float64).copy()
    y = state.y.astype(np.float64).copy()
    wp = state.w.fwd.copy()
    wm = state.w.bwd.copy()
    scal = np.array([state.F, state.F_star], dtype=np.float64)
    warm = np.zeros(m)
    wstate = np.zeros(1, dtype=np.int64)
    stats = np.empty((KERNEL_CHUNK, ker.STAT_COLS))
    detail = np.zeros(4)
    iteration = state.iteration
    accepted = 0

    while True:
        budget = min(KERNEL_CHUNK, cap - accepted)
        if budget <= 0:
            raise IterationCapExceeded(
                f"{'warm-up' if mode == 'warmup' else mode}: gap "
                f"{scal[1] - scal[0]:.4g} still above {threshold:.4g} "
                f"after {accepted} iterations")
        if mode == "warmup":
            status, k = ker.warmup_chunk(
                tail, head, n, g.s, g.t, g.cap_fwd, g.cap_bwd, g.is_precond,
                f, y, wp, wm, scal, per_unit, threshold,
                cfg.agd_kappa, cfg.step_tol, cfg.laplacian_tol,
                cfg.conservation_tol, COUPLING_TOL_BASE,
                cfg.resistance_ratio_cap, cfg.max_delta_halvings,
                budget, stats, detail)
        else:
            W, p, step_bound, budget_iter = weighted_scalars
            status, k = ker.weighted_chunk(
                tail, head, n, g.s, g.t, g.cap_fwd, g.cap_bwd, g.is_precond,
                f, y, wp, wm, scal, warm, wstate,
                per_unit, threshold, W, p, step_bound, budget_iter,
                WEIGHT_BUDGET_FACTOR * m, cfg.step_tol, cfg.laplacian_tol,
                COUPLING_TOL_BASE, cfg.resistance_ratio_cap,
                cfg.composite_max_outer, cfg.max_delta_halvings,
                budget, stats, detail)
        if trace is not None:
            now = time.monotonic() - t0
            for i in range(int(k)):
                row = stats[i]
                u_hat = row[ker.STAT_UHAT]
                trace.record(TraceRecord(
                    iteration=iteration + i + 1, mode=mode,
                    F=float(row[ker.STAT_F]), gap=float(row[ker.STAT_GAP]),
                    delta=float(row[ker.STAT_DELTA]),
                    potential=float(row[ker.STAT_POTENTIAL]),
                    rho_inf=float(row[ker.STAT_RHO]),
                    w_norm1=float(row[ker.STAT_WNORM]),
                    w_inc_norm1=float(row[ker.STAT_WINC]),
                    coupling_inf=float(row[ker.STAT_COUPLING]),
                    fhat_inf=float(row[ker.STAT_FHAT]),
                    inner_iters=int(row[ker.STAT_INNER]),
                    u_hat_precond_min=None if math.isnan(u_hat)
                    else float(u_hat),
                    wall_time=now))
        iteration += int(k)
        accepted += int(k)
        if status == ker.K_DONE:
            break
        if status == ker.K_RUNNING:
            continue
        _raise_kernel_status(ker, status, detail,
                             "warm-up" if mode == "warmup" else mode,
                             float(detail[0]), cfg.max_delta_halvings)

    return dataclasses.replace(state, f=f, y=y, w=Weights(fwd=wp, bwd=wm),
                               F=float(scal[0]), iteration=iteration)


def run_warmup(state: IterateState, cfg: SolverConfig,
               trace: TraceWriter | None = None,
               t0: float | None = None) -> IterateState:
    """Potential-decrement steps with delta = gap / (1000 sqrt(m)).

    Runs until the remaining gap F* - F is at or below the rounding
    threshold (default sqrt(m)).  A congestion rejection halves delta for the
    retry, up to cfg.max_delta_halvings times; the per-iteration delta always
    restarts from the schedule value.
    """
    g = state.g
    m = g.m
    threshold = cfg.round_threshold if cfg.round_threshold is not None \
        else math.sqrt(m)
    per_unit = WARMUP_DELTA_DIVISOR * math.sqrt(m)
    cap = _phase_cap(cfg, per_unit, state.F_star - state.F, threshold)
    t0 = time.monotonic() if t0 is None else t0
    if resolve_backend(cfg) == "numba":
        return _run_phase_kernel(state, cfg, "warmup", threshold, per_unit,
                                 cap, trace, t0, None)

    accepted = 0
    while state.F_star - state.F > threshold:
        if accepted >= cap:
            raise IterationCapExceeded(
                f"warm-up: gap {state.F_star - state.F:.4g} still above "
                f"{threshold:.4g} after {accepted} iterations")
        delta = (state.F_star - state.F) / per_unit
        for _ in range(cfg.max_delta_halvings + 1):
            try:
                step = potential_decrement_step(g, state.w, state.f, state.y,
                                                delta, cfg)
                break
            except CongestionExceeded:
                delta *= 0.5
        else:
            raise CongestionExceeded(
                f"warm-up: congested even after {cfg.max_delta_halvings} "
                f"delta halvings at gap {state.F_star - state.F:.4g}")
        state = advance(state, step)
        accepted += 1
        state = _maybe_repair(state, cfg)
        _emit(trace, state, step, "warmup", 0.0, t0)
    return state


def run_weighted(state: IterateState, cfg: SolverConfig,
                 trace: TraceWriter | None = None,
                 t0: float | None = None) -> IterateState:
    """Weighted progress steps while the gap stays at or above m^(1/2 - eta).

    Maintains the total weight budget ||w||_1 <= 3m, warm-starts each
    composite solve from the previous step direction, and backs delta off by
    halving (via delta_scale) on congestion rejections.
    """
    g = state.g
    m = g.m
    eta = cfg.eta if cfg.eta is not None else default_eta(m, g.cap_bound)
    p = cfg.p if cfg.p is not None else default_p(m)
    W = cfg.pnorm_weight if cfg.pnorm_weight is not None \
        else pnorm_weight_default(m, eta, p)
    cfg = cfg.replace(eta=eta, p=p, pnorm_weight=W)
    threshold = cfg.round_threshold if cfg.round_threshold is not None \
        else m ** (0.5 - eta)
    per_unit = WEIGHTED_DELTA_DIVISOR * m ** (0.5 - eta)
    cap = _phase_cap(cfg, per_unit, state.F_star - state.F, threshold)
    t0 = time.monotonic() if t0 is None else t0
    if resolve_backend(cfg) == "numba":
        step_bound = FHAT_BOUND_COEFF * m ** (-2.0 * eta)
        budget_iter = cfg.weight_budget_per_iter(m, eta, g.cap_bound)
        return _run_phase_kernel(state, cfg, "weighted", threshold, per_unit,
                                 cap, trace, t0,
                                 (W, int(p), step_bound, budget_iter))

    accepted = 0
    warm = None
    while state.F_star - state.F >= threshold:
        if accepted >= cap:
            raise IterationCapExceeded(
                f"weighted: gap {state.F_star - state.F:.4g} still above "
                f"{threshold:.4g} after {accepted} iterations")
        scale = 1.0
        for _ in range(cfg.max_delta_halvings + 1):
            try:
                state_new, change, step = weighted_progress_step(
                    state, cfg, warm=warm, delta_scale=scale)
                break
            except CongestionExceeded:
                scale *= 0.5
                warm = None
        else:
            raise CongestionExceeded(
                f"weighted: congested even after {cfg.max_delta_halvings} "
                f"delta halvings at gap {state.F_star - state.F:.4g}")
        state = state_new
        accepted += 1
        if state.w.norm1 > WEIGHT_BUDGET_FACTOR * m:
            raise WeightBudgetExceeded(
                f"||w||_1 = {state.w.norm1:.4g} exceeds "
                f"{WEIGHT_BUDGET_FACTOR * m:.4g} after {accepted} iterations")
        state = _maybe_repair(state, cfg)
        warm = step.fhat
        _emit(trace, state, step, "weighted", change.reduced_mass, t0)
    return state


# ---- combinatorial oracle with flow extraction ----

def dinic_max_flow(g: Graph, s: int, t: int) -> tuple[float, Flow]:
    """Exact max flow between arbitrary endpoints, with the per-edge flow.

    One-sided arc semantics: edge e contributes a forward arc of capacity u+
    and a backward arc of capacity u-; the net edge flow is recovered from
    how much forward-arc capacity the blocking flows consumed.
    """
    adj, to, cap = _residual_arcs(g)
    cap0 = g.cap_fwd.copy()
    value = dinic_on_arcs(adj, to, cap, s, t, g.n)
    f = cap0 - np.asarray(cap[0::2], dtype=np.float64)
    return value, Flow(values=f, value=value)


def binary_search_flow(g: Graph, s: int, t: int, solve_fn) -> int:
    """Largest integer F with solve_fn(F) true, assuming monotone feasibility.

    The window is [0, degree bound + 2mU]: the degree bound caps the original
    optimum and the 2mU term covers targets quoted against a preconditioned
    copy.  F = 0 (route nothing) is taken as trivially feasible.
    """
    out_s = float(g.cap_fwd[g.tail == s].sum() + g.cap_bwd[g.head == s].sum())
    in_t = float(g.cap_fwd[g.head == t].sum() + g.cap_bwd[g.tail == t].sum())
    bound = int(math.floor(min(out_s, in_t))) + int(math.ceil(2 * g.m * g.cap_bound))
    lo, hi = 0, bound + 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if solve_fn(mid):
            lo = mid
        else:
            hi = mid
    return lo


# ---- rounding ----

def _snap_near_integers(f: np.ndarray, idx=None) -> None:
    view = f if idx is None else f[idx]
    r = np.round(view)
    mask = np.abs(view - r) <= SNAP_TOL * np.maximum(1.0, np.abs(r))
    view[mask] = r[mask]
    if idx is not None:
        f[idx] = view


def _strip_illegal_directions(g: Graph, f: np.ndarray) -> np.ndarray:
    """Keep only the s-t path components that respect the original capacities.

    Decomposes the arc view of f (positive part on forward arcs, negative
    part on backward arcs) into s-t paths and cycles by deterministic greedy
    walks, then reassembles the paths that avoid arcs whose original capacity
    is zero.  Cycles never contribute value and are dropped along with the
    illegal paths; the result is a feasible fractional s-t flow.
    """
    tiny = 1e-9
    arc_flow: dict[tuple[int, int], float] = {}
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(g.n)]
    tails = g.tail.tolist()
    heads = g.head.tolist()
    for e in range(g.m):
        if f[e] > tiny:
            arc_flow[(e, +1)] = float(f[e])
            adj[tails[e]].append((e, +1, heads[e]))
        elif f[e] < -tiny:
            arc_flow[(e, -1)] = float(-f[e])
            adj[heads[e]].append((e, -1, tails[e]))
    for lst in adj:
        lst.sort()
    legal_fwd = g.cap_fwd > 0
    legal_bwd = g.cap_bwd > 0

    out = np.zeros(g.m)
    t_in = g.head == g.t
    t_out = g.tail == g.t
    value_left = float(f[t_in].sum() - f[t_out].sum())

    def next_arc(v: int):
        for e, sgn, w in adj[v]:
            if arc_flow.get((e, sgn), 0.0) > tiny:
                return e, sgn, w
        return None

    def consume(chain: list[tuple[int, int, int]], keep: bool) -> None:
        nonlocal value_left
        theta = min(arc_flow[(e, sgn)] for e, sgn, _ in chain)
        if keep:
            # an s-t path may ride arcs that a cycle component also needs in
            # the opposite net direction; its mass beyond the remaining value
            # belongs to those cycles, so cap the subtraction there
            theta = min(theta, value_left)
            value_left -= theta
        if theta <= 0.0:
            return
        for e, sgn, _ in chain:
            arc_flow[(e, sgn)] -= theta
        if keep:
            for e, sgn, _ in chain:
                legal = legal_fwd[e] if sgn > 0 else legal_bwd[e]
                if not legal:
                    keep = False
                    break
        if keep:
            for e, sgn, _ in chain:
                out[e] += sgn * theta

    def walk(start: int, to_sink: bool) -> bool:
        """One greedy walk from start; consumes s-t paths (to_sink mode) and
        cycles as they close.  Returns False once start is exhausted."""
        chain: list[tuple[int, int, int]] = []
        pos = {start: 0}   # vertex -> chain index of the arc leaving it
        v = start
        while True:
            arc = next_arc(v)
            if arc is None:
                if not chain:
                    return False
                # conservation dust: drop the dangling arc's remaining mass
                e, sgn, _ = chain.pop()
                arc_flow[(e, sgn)] = 0.0
                del pos[v]
                v = chain[-1][2] if chain else start
                continue
            e, sgn, w = arc
            chain.append((e, sgn, w))
            if to_sink and w == g.t:
                consume(chain, keep=True)
                return True
            if w in pos:
                k = pos[w]
                consume(chain[k:], keep=False)
                del chain[k:]
                for key in [x for x, i in pos.items() if i > k]:
                    del pos[key]
                v = w
                continue
            pos[w] = len(chain)
            v = w

    # paths from the source first, then leftover circulation from anywhere
    while value_left > tiny and walk(g.s, to_sink=True):
        pass
    for v0 in range(g.n):
        walk(v0, to_sink=False)
    return out


def round_to_integral(g: Graph, f_fractional: np.ndarray) -> Flow:
    """Integral feasible flow on the original graph by fractional cancellation.

    Entries beyond g.m (preconditioner edges of an augmented copy) are
    dropped first.  Directions the original graph cannot carry (relaxed zero
    capacity sides) are stripped by path filtering, then the fractional mass
    is cancelled: with an artificial return edge closing the s-t value into a
    circulation, repeatedly walk the fractional support (lowest vertex, then
    lowest edge index, never reversing the arriving edge) until a vertex
    repeats, and push the smaller of the floor/ceiling rooms around the
    cycle.  Every push lands at least one edge on an integer, so at most
    m + 1 pushes remain; the final flow is exactly integral and feasible.
    """
    m0 = g.m
    f = np.asarray(f_fractional, dtype=np.float64)[:m0].copy()
    _snap_near_integers(f)
    illegal = ((f > 0) & (g.cap_fwd == 0)) | ((f < 0) & (g.cap_bwd == 0))
    if illegal.any():
        f = _strip_illegal_directions(g, f)
        _snap_near_integers(f)

    t_in = g.head == g.t
    t_out = g.tail == g.t
    value = float(f[t_in].sum() - f[t_out].sum())
    tails = g.tail.tolist()
    heads = g.head.tolist()
    PI = m0  # artificial t -> s return edge carrying the routed value

    def frac_part(x: float) -> float:
        return min(x - math.floor(x), math.ceil(x) - x)

    ignore_pi = False
    for _ in range(4 * (m0 + 2)):
        frac_edges = [e for e in range(m0) if frac_part(float(f[e])) > FRAC_TOL]
        pi_frac = (not ignore_pi) and frac_part(value) > FRAC_TOL
        if not frac_edges and not pi_frac:
            break

        leaving: dict[int, list[tuple[int, int]]] = {}
        for e in frac_edges:
            leaving.setdefault(tails[e], []).append((e, +1))
            leaving.setdefault(heads[e], []).append((e, -1))
        if pi_frac:
            leaving.setdefault(g.t, []).append((PI, +1))
            leaving.setdefault(g.s, []).append((PI, -1))
        for lst in leaving.values():
            lst.sort()

        v0 = min(leaving)
        chain: list[tuple[int, int, int]] = []   # (from_vertex, edge, dir)
        pos = {v0: 0}
        v = v0
        prev_edge = -1
        stuck = False
        while True:
            options = [(e, d) for e, d in leaving.get(v, []) if e != prev_edge]
            if not options:
                # conservation dust: the arriving edge is only nominally
                # fractional; snap it and restart the outer scan
                if prev_edge == PI:
                    ignore_pi = True
                elif prev_edge >= 0:
                    f[prev_edge] = round(float(f[prev_edge]))
                stuck = True
                break
            e, d = options[0]
            chain.append((v, e, d))
            if e == PI:
                w = g.s if d > 0 else g.t
            else:
                w = heads[e] if d > 0 else tails[e]
            if w in pos:
                cycle = chain[pos[w]:]
                break
            pos[w] = len(chain)
            prev_edge = e
            v = w
        if stuck:
            continue

        rooms = []
        for _, e, d in cycle:
            x = value if e == PI else float(f[e])
            rooms.append((math.ceil(x) - x) if d > 0 else (x - math.floor(x)))
        theta = min(rooms)
        k_min = rooms.index(theta)
        for i, (_, e, d) in enumerate(cycle):
            if e == PI:
                target = value + d * theta
                value = float(round(target)) if i == k_min else target
            elif i == k_min:
                x = float(f[e])
                f[e] = float(math.ceil(x)) if d > 0 else float(math.floor(x))
            else:
                f[e] += d * theta
        _snap_near_integers(f)
        if frac_part(value) <= SNAP_TOL:
            value = float(round(value))
    else:
        raise InfeasibleFlow("rounding walk failed to terminate")

    f = np.round(f)
    f[f == 0.0] = 0.0  # normalize -0.0
    final_value = float(f[t_in].sum() - f[t_out].sum())
    res = g.vertex_residual(f) - g.st_demand(final_value)
    if np.abs(res).max() > 0.0:
        raise InfeasibleFlow("rounded flow is not conserving")
    if np.any(f > g.cap_fwd) or np.any(f < -g.cap_bwd):
        raise InfeasibleFlow("rounded flow violates an original capacity")
    return Flow(values=f, value=final_value)


# ---- augmenting-path finish ----

def augment_to_optimal(g: Graph, flow: Flow, F_star: float | None = None,
                       stats: dict | None = None) -> Flow:
    """BFS augmenting paths from an integral flow until F_star or exhaustion.

    With F_star = None this lands on the exact maximum flow; with an integer
    F_star it stops as soon as that value is reached (used by feasibility
    probes).  Integral input gives integral augmentations throughout.
    """
    f = flow.values.copy()
    value = float(flow.value)
    n, m = g.n, g.m
    tails = g.tail.tolist()
    heads = g.head.tolist()
    adj: list[list[int]] = [[] for _ in range(n)]
    for e in range(m):
        adj[tails[e]].append(2 * e)       # forward arc: room u+ - f
        adj[heads[e]].append(2 * e + 1)   # backward arc: room u- + f
    paths = 0

    while F_star is None or value < F_star:
        room_f = g.cap_fwd - f
        room_b = g.cap_bwd + f
        parent = [-1] * n
        parent[g.s] = -2
        queue = [g.s]
        qi = 0
        while qi < len(queue) and parent[g.t] == -1:
            v = queue[qi]
            qi += 1
            for a in adj[v]:
                e = a >> 1
                room = room_f[e] if a % 2 == 0 else room_b[e]
                w = heads[e] if a % 2 == 0 else tails[e]
                if room > 0 and parent[w] == -1:
                    parent[w] = a
                    queue.append(w)
        if parent[g.t] == -1:
            break
        # bottleneck and application
        theta = math.inf if F_star is None else F_star - value
        v = g.t
        while v != g.s:
            a = parent[v]
            e = a >> 1
            theta = min(theta, room_f[e] if a % 2 == 0 else room_b[e])
            v = tails[e] if a % 2 == 0 else heads[e]
        v = g.t
        while v != g.s:
            a = parent[v]
            e = a >> 1
            f[e] += theta if a % 2 == 0 else -theta
            v = tails[e] if a % 2 == 0 else heads[e]
        value += theta
        paths += 1

    if stats is not None:
        stats["paths"] = paths
    return Flow(values=f, value=value)


# ---- full pipeline ----

def _resolve_cfg(cfg: SolverConfig, m_pre: int, cap_bound: float) -> SolverConfig:
    """Freeze derived parameters so every layer sees the same values."""
    if cfg.mode != "weighted":
        return cfg
    eta = cfg.eta if cfg.eta is not None else default_eta(m_pre, cap_bound)
    p = cfg.p if cfg.p is not None else default_p(m_pre)
    W = cfg.pnorm_weight if cfg.pnorm_weight is not None \
        else pnorm_weight_default(m_pre, eta, p)
    return cfg.replace(eta=eta, p=p, pnorm_weight=W)


def _pipeline_once(g: Graph, cfg: SolverConfig, f_star_claim: int,
                   trace_path: str | None) -> dict:
    """One end-to-end run against a claimed original-graph target."""
    U = g.cap_bound
    g_pre = precondition(relax_zero_sides(g))
    f_pre_target = float(f_star_claim) + 2.0 * g.m * U
    cfg_run = _resolve_cfg(cfg, g_pre.m, U)
    state = initialize(g_pre, f_pre_target)

    trace = None
    if trace_path is not None:
        header = {
            "format": "prflow-trace-1",
            "config": dataclasses.asdict(cfg),
            "resolved": {
                "mode": cfg_run.mode,
                "backend": resolve_backend(cfg_run),
                "eta": cfg_run.eta,
                "p": cfg_run.p,
                "pnorm_weight": cfg_run.pnorm_weight,
                "f_star_claim": f_star_claim,
                "f_star_preconditioned": f_pre_target,
            },
            "instance": {
                "n": g.n, "m": g.m, "m_preconditioned": g_pre.m,
                "s": g.s, "t": g.t, "cap_bound": U,
            },
        }
        trace = TraceWriter(trace_path, header)

    t0 = time.monotonic()
    try:
        if cfg.mode == "warmup":
            state = run_warmup(state, cfg_run, trace=trace, t0=t0)
            warm_iters, weighted_iters = state.iteration, 0
        else:
            state = run_weighted(state, cfg_run, trace=trace, t0=t0)
            warm_iters, weighted_iters = 0, state.iteration
    finally:
        if trace is not None:
            trace.close()

    rounded = round_to_integral(g, state.f)
    stats: dict = {}
    final = augment_to_optimal(g, rounded, F_star=None, stats=stats)
    check_flow(g, final)
    return {
        "flow": final,
        "value": int(round(final.value)),
        "warmup_iterations": warm_iters,
        "weighted_iterations": weighted_iters,
        "augmenting_paths": stats["paths"],
    }


def _feasibility_probe(g: Graph, cfg: SolverConfig):
    """solve_fn for binary_search_flow: can the pipeline route F units?"""
    def probe(F: int) -> bool:
        try:
            result = _pipeline_once(g, cfg, F, trace_path=None)
        except (CongestionExceeded, IterationCapExceeded,
                WeightBudgetExceeded, NoConvergence):
            return False
        return result["value"] >= F
    return probe


def solve(g: Graph, cfg: SolverConfig | None = None) -> SolveReport:
    """Full solve: target, interior phases, rounding, augmenting, verification.

    The claimed target comes from cfg.f_star_override when set, else the
    combinatorial oracle when cfg.oracle_check is on, else a binary search
    probing with the pipeline itself.  The finishing phase computes the exact
    optimum regardless of the claim; when they disagree (or the phases reject
    the claim outright) the target is re-derived by binary search, the
    pipeline reruns, and the report carries f_star_corrected=True.
    """
    cfg = cfg or SolverConfig()
    if g.m == 0:
        raise InvalidParams("graph has no edges")
    if np.any(np.round(g.cap_fwd) != g.cap_fwd) or \
            np.any(np.round(g.cap_bwd) != g.cap_bwd):
        raise InvalidParams("solve requires integral capacities")

    oracle_value = None
    if cfg.oracle_check:
        oracle_value, _ = dinic_max_flow(g, g.s, g.t)

    if cfg.f_star_override is not None:
        claim = int(cfg.f_star_override)
    elif oracle_value is not None:
        claim = int(round(oracle_value))
    else:
        claim = binary_search_flow(g, g.s, g.t, _feasibility_probe(g, cfg))

    corrected = False
    try:
        result = _pipeline_once(g, cfg, claim, cfg.trace_path)
        if result["value"] != claim:
            corrected = True
    except (CongestionExceeded, IterationCapExceeded, WeightBudgetExceeded,
            NoConvergence):
        corrected = True

    if corrected:
        true_star = binary_search_flow(g, g.s, g.t, _feasibility_probe(g, cfg))
        result = _pipeline_once(g, cfg, true_star, cfg.trace_path)
        if result["value"] != true_star:
            raise InfeasibleFlow(
                f"pipeline value {result['value']} disagrees with the "
                f"search-certified target {true_star}")
        claim = true_star

    agreement = None
    if oracle_value is not None:
        agreement = result["value"] == int(round(oracle_value))
        if not agreement:
            raise InfeasibleFlow(
                f"final value {result['value']} disagrees with the "
                f"combinatorial oracle {int(round(oracle_value))}")

    return SolveReport(
        flow=result["flow"], value=float(result["value"]), f_star=claim,
        f_star_corrected=corrected,
        warmup_iterations=result["warmup_iterations"],
        weighted_iterations=result["weighted_iterations"],
        augmenting_paths=result["augmenting_paths"],
        oracle_agreement=agreement, trace_path=cfg.trace_path, config=cfg)
