"""Combinatorial max-flow oracles used to certify the interior-point result.

Two deliberately independent implementations are kept side by side so they
can cross-check each other: dinic_max_flow (level graph + blocking flow,
adjacency arrays) and edmonds_karp (shortest augmenting paths over a merged
capacity map).  Both treat an edge with positive backward capacity as an
antiparallel arc pair.  At the sizes this library targets the asymptotic
difference between them is irrelevant; redundancy is the point.
"""

from __future__ import annotations

from collections import deque

from .graph import Graph


def _residual_arcs(g: Graph) -> tuple[list[list[int]], list[int], list[float]]:
    """Adjacency structure: arcs stored as flat lists, arc i's reverse is i^1."""
    adj: list[list[int]] = [[] for _ in range(g.n)]
    to: list[int] = []
    cap: list[float] = []

    def add(u: int, v: int, c_uv: float, c_vu: float) -> None:
        adj[u].append(len(to)); to.append(v); cap.append(c_uv)
        adj[v].append(len(to)); to.append(u); cap.append(c_vu)

    for u, v, cf, cb in zip(g.tail.tolist(), g.head.tolist(),
                            g.cap_fwd.tolist(), g.cap_bwd.tolist()):
        add(u, v, cf, cb)
    return adj, to, cap


def dinic_max_flow(g: Graph) -> float:
    """Max s-t flow value by repeated blocking flows on the level graph."""
    adj, to, cap = _residual_arcs(g)
    return dinic_on_arcs(adj, to, cap, g.s, g.t, g.n)


def dinic_on_arcs(adj: list[list[int]], to: list[int], cap: list[float],
                  s: int, t: int, n: int) -> float:
    """Dinic core over a prebuilt arc structure; mutates cap in place."""
    total = 0.0

    while True:
        level = [-1] * n
        level[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for a in adj[u]:
                v = to[a]
                if cap[a] > 0 and level[v] < 0:
                    level[v] = level[u] + 1
                    q.append(v)
        if level[t] < 0:
            return total

        it = [0] * n

        def dfs(u: int, pushed: float) -> float:
            if u == t:
                return pushed
            while it[u] < len(adj[u]):
                a = adj[u][it[u]]
                v = to[a]
                if cap[a] > 0 and level[v] == level[u] + 1:
                    got = dfs(v, min(pushed, cap[a]))
                    if got > 0:
                        cap[a] -= got
                        cap[a ^ 1] += got
                        return got
                it[u] += 1
            return 0.0

        while True:
            pushed = dfs(s, float("inf"))
            if pushed <= 0:
                break
            total += pushed


def edmonds_karp(g: Graph) -> float:
    """Max s-t flow value by BFS augmenting paths; parallel arcs merged."""
    n, s, t = g.n, g.s, g.t
    cap: list[dict[int, float]] = [dict() for _ in range(n)]
    for u, v, cf, cb in zip(g.tail.tolist(), g.head.tolist(),
                            g.cap_fwd.tolist(), g.cap_bwd.tolist()):
        cap[u][v] = cap[u].get(v, 0.0) + cf
        cap[v][u] = cap[v].get(u, 0.0) + cb

    total = 0.0
    while True:
        parent = [-1] * n
        parent[s] = s
        q = deque([s])
        while q and parent[t] < 0:
            u = q.popleft()
            for v, c in cap[u].items():
                if c > 0 and parent[v] < 0:
                    parent[v] = u
                    q.append(v)
        if parent[t] < 0:
            return total

        bottleneck = float("inf")
        v = t
        while v != s:
            u = parent[v]
            bottleneck = min(bottleneck, cap[u][v])
            v = u
        v = t
        while v != s:
            u = parent[v]
            cap[u][v] -= bottleneck
            cap[v][u] = cap[v].get(u, 0.0) + bottleneck
            v = u
        total += bottleneck
