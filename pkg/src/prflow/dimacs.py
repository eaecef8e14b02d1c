"""DIMACS max-flow file format, reader and writer.

Format recap: comment lines start with 'c', the problem line is
'p max <n> <m>', node designators are 'n <id> s' / 'n <id> t', and arcs are
'a <tail> <head> <capacity>' with 1-indexed vertex ids.  Arcs are one-way, so
the reader produces edges with forward capacity only (backward capacity 0);
zero-capacity arcs carry nothing and are dropped.  The writer emits one arc
per positive capacity direction, so a two-sided edge becomes an antiparallel
pair.
"""

from __future__ import annotations

import io
from typing import TextIO

from .errors import DimacsFormatError
from .graph import Graph, build_graph


def read_dimacs(source: str | TextIO) -> Graph:
    """Parse a DIMACS max-flow problem into a Graph.

    `source` is a path or an open text stream.  Raises DimacsFormatError on
    any structural problem: missing or duplicate problem line, missing or
    duplicate source/sink designators, arc count mismatch, malformed fields.
    """
    if isinstance(source, str):
        with open(source, "r") as fh:
            return read_dimacs(fh)

    n = None
    m_declared = None
    s = None
    t = None
    edges: list[tuple[int, int, float, float]] = []

    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        parts = line.split()
        kind = parts[0]
        if kind == "p":
            if n is not None:
                raise DimacsFormatError(f"line {lineno}: duplicate problem line")
            if len(parts) != 4 or parts[1] != "max":
                raise DimacsFormatError(f"line {lineno}: expected 'p max <n> <m>'")
            try:
                n, m_declared = int(parts[2]), int(parts[3])
            except ValueError:
                raise DimacsFormatError(f"line {lineno}: non-integer sizes") from None
            if n < 2 or m_declared < 0:
                raise DimacsFormatError(f"line {lineno}: bad sizes n={n} m={m_declared}")
        elif kind == "n":
            if n is None:
                raise DimacsFormatError(f"line {lineno}: node line before problem line")
            if len(parts) != 3 or parts[2] not in ("s", "t"):
                raise DimacsFormatError(f"line {lineno}: expected 'n <id> s|t'")
            try:
                vid = int(parts[1])
            except ValueError:
                raise DimacsFormatError(f"line {lineno}: non-integer node id") from None
            if not (1 <= vid <= n):
                raise DimacsFormatError(f"line {lineno}: node id {vid} out of range")
            if parts[2] == "s":
                if s is not None:
                    raise DimacsFormatError(f"line {lineno}: duplicate source designator")
                s = vid - 1
            else:
                if t is not None:
                    raise DimacsFormatError(f"line {lineno}: duplicate sink designator")
                t = vid - 1
        elif kind == "a":
            if n is None:
                raise DimacsFormatError(f"line {lineno}: arc line before problem line")
            if len(parts) != 4:
                raise DimacsFormatError(f"line {lineno}: expected 'a <tail> <head> <cap>'")
            try:
                u, v = int(parts[1]), int(parts[2])
                cap = float(parts[3])
            except ValueError:
                raise DimacsFormatError(f"line {lineno}: malformed arc fields") from None
            if not (1 <= u <= n and 1 <= v <= n):
                raise DimacsFormatError(f"line {lineno}: arc endpoint out of range")
            if cap < 0:
                raise DimacsFormatError(f"line {lineno}: negative arc capacity")
            if cap > 0:
                edges.append((u - 1, v - 1, cap, 0.0))
        else:
            raise DimacsFormatError(f"line {lineno}: unknown line type {kind!r}")

    if n is None:
        raise DimacsFormatError("missing problem line")
    if s is None or t is None:
        raise DimacsFormatError("missing source or sink designator")
    declared_positive = sum(1 for e in edges)
    if m_declared is not None and declared_positive > m_declared:
        raise DimacsFormatError(
            f"arc count {declared_positive} exceeds declared {m_declared}"
        )
    cap_bound = max((e[2] for e in edges), default=1.0)
    return build_graph(n, edges, s, t, cap_bound=max(1.0, cap_bound))


def write_dimacs(g: Graph, dest: str | TextIO, comment: str | None = None) -> None:
    """Write a Graph in DIMACS max-flow form.

    Each edge contributes an arc per positive capacity direction; capacities
    are written as integers when they are integral, otherwise as decimals.
    """
    if isinstance(dest, str):
        with open(dest, "w") as fh:
            write_dimacs(g, fh, comment=comment)
        return

    arcs: list[tuple[int, int, float]] = []
    for u, v, cf, cb in zip(g.tail.tolist(), g.head.tolist(),
                            g.cap_fwd.tolist(), g.cap_bwd.tolist()):
        if cf > 0:
            arcs.append((u + 1, v + 1, cf))
        if cb > 0:
            arcs.append((v + 1, u + 1, cb))

    if comment:
        for line in comment.splitlines():
            dest.write(f"c {line}\n")
    dest.write(f"p max {g.n} {len(arcs)}\n")
    dest.write(f"n {g.s + 1} s\n")
    dest.write(f"n {g.t + 1} t\n")
    for u, v, cap in arcs:
        if float(cap).is_integer():
            dest.write(f"a {u} {v} {int(cap)}\n")
        else:
            dest.write(f"a {u} {v} {cap!r}\n")


def dumps(g: Graph, comment: str | None = None) -> str:
    buf = io.StringIO()
    write_dimacs(g, buf, comment=comment)
    return buf.getvalue()


def loads(text: str) -> Graph:
    return read_dimacs(io.StringIO(text))
