"""Exception hierarchy for the flow solver.

Every failure mode the solver can signal deliberately gets its own class so
callers (driver, harness, CLI) can react to specific conditions instead of
string-matching messages.
"""

from __future__ import annotations


class SolverError(Exception):
    """Base class for all deliberate solver failures."""


# ---- graph construction / input validation ----

class DisconnectedGraph(SolverError):
    """The underlying undirected graph is not connected."""


class InvalidCapacity(SolverError):
    """An edge capacity is negative, zero in both directions, or above the bound."""


class InvalidEdge(SolverError):
    """An edge endpoint is out of range or the edge is a self-loop."""


class SourceEqualsSink(SolverError):
    """Source and sink coincide."""


class InvalidParams(SolverError):
    """Parameters out of range (generator sizes, p not even, eta out of band, ...)."""


class DimacsFormatError(SolverError):
    """Malformed DIMACS input."""


# ---- numerical state ----

class InfeasibleFlow(SolverError):
    """A flow violates capacity or conservation beyond tolerance."""


class NotBalanced(SolverError):
    """A demand vector does not sum to zero beyond tolerance."""


class ResistanceRatioExceeded(SolverError):
    """max(r)/min(r) above the configured guard; the linear solve would be untrustworthy."""


# ---- iteration failures ----

class NoConvergence(SolverError):
    """An inner optimizer failed to reach its tolerance within its iteration cap."""


class CongestionExceeded(SolverError):
    """A step's congestion exceeded the 0.1 bound; treated by the driver as a back-off signal."""


class PoorDualFit(SolverError):
    """The least-squares dual fit left a residual above the coupling tolerance."""


class CouplingLost(SolverError):
    """Primal-dual coupling residual exceeded tolerance after an accepted step."""


class WeightBudgetExceeded(SolverError):
    """Weight growth broke the per-iteration or total budget."""


class IterationCapExceeded(SolverError):
    """The outer loop hit its iteration cap before reaching its threshold."""


class DegenerateStep(SolverError):
    """A step was exactly zero where a direction was required (e.g. all g_e = 0)."""
