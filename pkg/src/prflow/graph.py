"""Graph, flow, and demand containers plus the core structural operations.

Conventions, fixed once and used everywhere:

* Edge e = (tail u, head v); a positive flow value on e moves mass tail -> head.
* The incidence operator B maps vertex potentials to edge differences,
  (B y)_e = y_head - y_tail; its transpose maps edge flows to vertex
  residuals, (B' f)_v = inflow(v) - outflow(v).
* An s-t flow of value F satisfies B' f = F * chi with chi = -1 at s, +1 at t.
* Forward residual capacity u+ - f and backward residual capacity u- + f must
  stay strictly positive for any flow handled by the interior phase.

Graphs are immutable after construction (arrays are marked read-only); all
mutation happens by building new Graph objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DisconnectedGraph,
    InfeasibleFlow,
    InvalidCapacity,
    InvalidEdge,
    NotBalanced,
    SourceEqualsSink,
)


@dataclass(frozen=True)
class Graph:
    """Directed multigraph with two-sided edge capacities and s-t endpoints."""

    n: int
    tail: np.ndarray          # int64[m]
    head: np.ndarray          # int64[m]
    cap_fwd: np.ndarray       # float64[m], u+ >= 0
    cap_bwd: np.ndarray       # float64[m], u- >= 0
    s: int
    t: int
    cap_bound: float          # U; all capacities <= U
    is_precond: np.ndarray = field(default=None)  # bool[m], preconditioner edges

    def __post_init__(self):
        if self.is_precond is None:
            object.__setattr__(self, "is_precond", np.zeros(self.m, dtype=bool))
        for name in ("tail", "head", "cap_fwd", "cap_bwd", "is_precond"):
            arr = getattr(self, name)
            if arr.flags.writeable:
                arr = arr.copy()
                arr.flags.writeable = False
                object.__setattr__(self, name, arr)

    @property
    def m(self) -> int:
        return self.tail.shape[0]

    def edge_difference(self, y: np.ndarray) -> np.ndarray:
        """(B y)_e = y_head - y_tail."""
        return y[self.head] - y[self.tail]

    def vertex_residual(self, f: np.ndarray) -> np.ndarray:
        """(B' f)_v = inflow - outflow at each vertex."""
        out = np.zeros(self.n)
        np.add.at(out, self.head, f)
        np.subtract.at(out, self.tail, f)
        return out

    def st_demand(self, value: float) -> np.ndarray:
        """Demand vector F * chi with chi = -1 at s, +1 at t."""
        chi = np.zeros(self.n)
        chi[self.s] = -value
        chi[self.t] = value
        return chi


@dataclass(frozen=True)
class Flow:
    """Per-edge flow values together with the routed s-t value."""

    values: np.ndarray
    value: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.flags.writeable:
            v = v.copy()
            v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Demand:
    """Per-vertex demand; entries must sum to zero within tolerance."""

    values: np.ndarray
    tol: float = 1e-9

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        total = float(v.sum())
        scale = max(1.0, float(np.abs(v).sum()))
        if abs(total) > self.tol * scale:
            raise NotBalanced(f"demand sums to {total:g}")
        if abs(total) > 0.0:
            # re-center tiny float drift so downstream solves see an exact zero sum
            v = v - total / v.shape[0]
        if v.flags.writeable:
            v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class ResidualCaps:
    """Strictly positive residual capacities at a given flow: u+ - f, u- + f."""

    fwd: np.ndarray
    bwd: np.ndarray

    @property
    def smaller(self) -> np.ndarray:
        """Per-edge min(u_hat+, u_hat-); sets the step box radius."""
        return np.minimum(self.fwd, self.bwd)


# ---- construction and validation ----

def _check_connected(n: int, tail: np.ndarray, head: np.ndarray) -> None:
    """Undirected connectivity via BFS over the edge list."""
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in zip(tail.tolist(), head.tolist()):
        adj[u].append(v)
        adj[v].append(u)
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    if not seen.all():
        missing = int(np.flatnonzero(~seen)[0])
        raise DisconnectedGraph(f"vertex {missing} unreachable in the undirected sense")


def build_graph(
    n: int,
    edges: Sequence[tuple[int, int, float, float]] | Iterable,
    s: int,
    t: int,
    cap_bound: float,
) -> Graph:
    """Validated Graph from an edge list of (tail, head, cap_fwd, cap_bwd).

    Parallel edges are allowed; self-loops are not.  Every capacity must lie
    in [0, cap_bound] and each edge needs cap_fwd + cap_bwd > 0.
    """
    edges = list(edges)
    if n < 2:
        raise InvalidEdge(f"need at least 2 vertices, got {n}")
    if not (0 <= s < n and 0 <= t < n):
        raise InvalidEdge(f"s={s} or t={t} out of range for n={n}")
    if s == t:
        raise SourceEqualsSink(f"s == t == {s}")
    if cap_bound <= 0:
        raise InvalidCapacity(f"capacity bound must be positive, got {cap_bound}")

    m = len(edges)
    tail = np.empty(m, dtype=np.int64)
    head = np.empty(m, dtype=np.int64)
    cf = np.empty(m, dtype=np.float64)
    cb = np.empty(m, dtype=np.float64)
    for i, (u, v, up, um) in enumerate(edges):
        if not (0 <= u < n and 0 <= v < n):
            raise InvalidEdge(f"edge {i}: endpoint out of range ({u}, {v})")
        if u == v:
            raise InvalidEdge(f"edge {i}: self-loop at vertex {u}")
        if up < 0 or um < 0:
            raise InvalidCapacity(f"edge {i}: negative capacity ({up}, {um})")
        if up > cap_bound or um > cap_bound:
            raise InvalidCapacity(f"edge {i}: capacity above bound {cap_bound}")
        if up + um <= 0:
            raise InvalidCapacity(f"edge {i}: zero capacity in both directions")
        tail[i], head[i], cf[i], cb[i] = u, v, up, um

    _check_connected(n, tail, head)
    return Graph(n=n, tail=tail, head=head, cap_fwd=cf, cap_bwd=cb,
                 s=s, t=t, cap_bound=float(cap_bound))


def precondition(g: Graph, cap_bound: float | None = None) -> Graph:
    """Append m undirected s-t edges of capacity 2U each, flagged as such.

    Doubles the edge count and raises the max-flow value by exactly 2 m U;
    the added edges guarantee the residual-capacity slack the interior phase
    relies on.  A graph with zero edges is returned unchanged.
    """
    if g.m == 0:
        return g
    U = float(cap_bound if cap_bound is not None else g.cap_bound)
    m = g.m
    tail = np.concatenate([g.tail, np.full(m, g.s, dtype=np.int64)])
    head = np.concatenate([g.head, np.full(m, g.t, dtype=np.int64)])
    cf = np.concatenate([g.cap_fwd, np.full(m, 2.0 * U)])
    cb = np.concatenate([g.cap_bwd, np.full(m, 2.0 * U)])
    mask = np.concatenate([g.is_precond, np.ones(m, dtype=bool)])
    return Graph(n=g.n, tail=tail, head=head, cap_fwd=cf, cap_bwd=cb,
                 s=g.s, t=g.t, cap_bound=max(g.cap_bound, 2.0 * U), is_precond=mask)


# ---- state queries ----

def residual_caps(g: Graph, f: np.ndarray) -> ResidualCaps:
    """Residual capacities at flow f; raises InfeasibleFlow if any is <= 0."""
    fwd = g.cap_fwd - f
    bwd = g.cap_bwd + f
    if fwd.size and (fwd.min() <= 0.0 or bwd.min() <= 0.0):
        bad = int(np.argmin(np.minimum(fwd, bwd)))
        raise InfeasibleFlow(
            f"edge {bad}: residual capacities ({fwd[bad]:g}, {bwd[bad]:g}) not strictly positive"
        )
    return ResidualCaps(fwd=fwd, bwd=bwd)


def congestion(fhat: np.ndarray, rc: ResidualCaps) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge congestion of a step: rho+ = |fhat|/u_hat+, rho- = |fhat|/u_hat-."""
    a = np.abs(fhat)
    return a / rc.fwd, a / rc.bwd


def congestion_inf(fhat: np.ndarray, rc: ResidualCaps) -> float:
    rp, rm = congestion(fhat, rc)
    if rp.size == 0:
        return 0.0
    return float(max(rp.max(), rm.max()))


def conservation_residual(g: Graph, f: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """B' f - demand; zero (within tolerance) for a feasible routing."""
    return g.vertex_residual(f) - demand


def check_flow(g: Graph, flow: Flow, tol: float = 1e-9) -> None:
    """Raise InfeasibleFlow unless flow respects capacities and conservation."""
    f = flow.values
    if np.any(f > g.cap_fwd + tol) or np.any(f < -g.cap_bwd - tol):
        raise InfeasibleFlow("flow violates a capacity")
    res = conservation_residual(g, f, g.st_demand(flow.value))
    scale = max(1.0, abs(flow.value))
    if np.abs(res).max() > tol * scale:
        raise InfeasibleFlow(f"conservation residual {np.abs(res).max():g}")
