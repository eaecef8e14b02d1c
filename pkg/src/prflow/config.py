"""Solver configuration and fixed numeric constants.

All tunables live in one frozen dataclass so a run's full parameterization can
be embedded verbatim in its trace header and reproduced later.  The module
also holds the calibrated envelope constants for the per-edge curvature
sandwich checks (see scripts/calibrate_sandwich.py for how they were swept).
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass

from .errors import InvalidParams

# Environment variable naming a JSON file with config overrides.
CONFIG_ENV_VAR = "PRFLOW_CONFIG"

# Schedule constants of the two progress regimes: a step routes
# delta = gap / (WARMUP_DELTA_DIVISOR * sqrt(m)) in warm-up mode and
# delta = gap / (WEIGHTED_DELTA_DIVISOR * m^(1/2 - eta)) in weighted mode.
WARMUP_DELTA_DIVISOR = 1000.0
WEIGHTED_DELTA_DIVISOR = 5000.0

# Hard congestion bound per step; exceeding it raises CongestionExceeded.
CONGESTION_BOUND = 0.1

# Per-edge step box is [-ell, ell] with ell = u_hat / BOX_DIVISOR; outside it
# every barrier term continues as its second-order Taylor polynomial.
BOX_DIVISOR = 10.0

# Total weight budget: the solver asserts ||w||_1 <= WEIGHT_BUDGET_FACTOR * m.
WEIGHT_BUDGET_FACTOR = 3.0

# Preconditioner edges keep residual capacity >= gap / PRECOND_SLACK_DIVISOR / m.
PRECOND_SLACK_DIVISOR = 21.0

# Step-size bound asserted for weighted steps: |fhat_e| <= FHAT_BOUND_COEFF * m^(-2 eta).
FHAT_BOUND_COEFF = 9.0

# Every accepted step leaves the dual fit's irreducible (divergence-free)
# residual in the coupling, a drift linear in iteration count against a fixed
# tolerance.  When the residual passes this fraction of the tolerance the
# driver recenters: one laplacian solve under the barrier Hessian cancels the
# drift to second order without moving F or the step schedule.
REPAIR_FRACTION = 0.5

# In-box envelope of the per-edge decrement Hessian relative to its value at 0.
HESSIAN_ENVELOPE = (0.81, 1.24)

# In-box envelope of g_e relative to fhat^2 (lower constant calibrated; the
# nominal [1, 2] claim fails for asymmetric residual capacities).
G_ENVELOPE = (0.45, 2.0)


def default_eta(m: int, capacity_bound: float) -> float:
    """Step-schedule exponent: 1/6, corrected by -(1/3) log_m U when U > 1."""
    if m < 2:
        raise InvalidParams(f"need at least 2 edges, got {m}")
    eta = 1.0 / 6.0
    if capacity_bound > 1.0:
        eta -= math.log(capacity_bound, m) / 3.0
    return eta


def default_p(m: int) -> int:
    """Even norm degree closest to sqrt(log2 m), never below 2.

    Ties at odd integers resolve by banker's rounding of sqrt(log2 m)/2.
    """
    if m < 2:
        raise InvalidParams(f"need at least 2 edges, got {m}")
    return max(2, 2 * round(math.sqrt(math.log2(m)) / 2.0))


def pnorm_weight_nominal(m: int, eta: float) -> float:
    """Nominal coefficient of the p-norm penalty: m^(6 eta)."""
    return float(m) ** (6.0 * eta)


# Cap coefficient for the runtime default of the p-norm penalty weight; see
# pnorm_weight_default.  Calibrated so a full weighted run keeps the total
# weight norm within budget (the asymptotic exponent hides a correction term
# that is load-bearing at finite m).
PNORM_WEIGHT_CAP_COEFF = 0.125


def pnorm_weight_default(m: int, eta: float, p: int) -> float:
    """Runtime default for the p-norm penalty weight.

    The nominal value m^(6 eta) is capped at c * m^(1 - 1/p): per unit of
    routed flow the weight-extraction step adds ~4 W m^(1/p - 1) to ||w||_1,
    so the cap is what keeps a full run inside the 3m budget.  The cap is the
    finite-m realization of the asymptotic o(1) correction to eta.
    """
    nominal = pnorm_weight_nominal(m, eta)
    cap = PNORM_WEIGHT_CAP_COEFF * float(m) ** (1.0 - 1.0 / p)
    return min(nominal, cap)


# ---- calibrated curvature-sandwich constants ----
#
# Envelope constants (c_lo, c_hi) per even p for two per-edge inequalities,
# swept over the documented sampling domain by scripts/calibrate_sandwich.py
# and frozen here with safety margins.
#
# power_step: f^p + p f^(p-1) d + c_lo h <= (f+d)^p <= f^p + p f^(p-1) d + c_hi h
#             with h = |f|^(p-2) d^2 + |d|^p.  The slack ratio is scale
#             invariant, so these come from a dense 1-d sweep (2% margins);
#             for p = 2 the ratio is identically 1/2.
# edge_value: first-order expansion of the per-edge barrier + g^p value with
#             middle coefficients (9/10)^2 / (11/10)^2 and slack term
#             c * (|f|^(2p-4) d^2 + d^p).  Sampling domain: u_hat in [0.3, 4],
#             w in [0.1, 4], f in +-0.8 ell, d in [1e-3 u_min, ell - f].  The
#             middle coefficient (9/10)^2 exceeds the true local Taylor
#             coefficient 1/2, so c_lo must absorb the difference and grows
#             like -(d floor)^(2-p); the lower envelope is correspondingly
#             loose away from the floor but ordering never fails on the
#             domain (15% + 1.0 margins).

POWER_STEP_CONSTANTS: dict[int, tuple[float, float]] = {
    2: (0.49, 0.51),
    4: (0.292469, 6.83559),
    6: (0.0972735, 31.9942),
    8: (0.0285386, 133.126),
}

EDGE_VALUE_CONSTANTS: dict[int, tuple[float, float]] = {
    2: (-17.4774, 1.41868),
    4: (-3.52098e+08, 3.93767),
    6: (-3.91221e+15, 0.971436),
    8: (-4.34689e+22, 0.944324),
}


def power_step_constants(p: int) -> tuple[float, float]:
    try:
        return POWER_STEP_CONSTANTS[p]
    except KeyError:
        raise InvalidParams(f"no calibrated power-step constants for p={p}") from None


def edge_value_constants(p: int) -> tuple[float, float]:
    try:
        return EDGE_VALUE_CONSTANTS[p]
    except KeyError:
        raise InvalidParams(f"no calibrated edge-value constants for p={p}") from None


# ---- run configuration ----

@dataclass(frozen=True)
class SolverConfig:
    """Full parameterization of one solver run.

    ``None`` for eta / p / pnorm_weight / round_threshold / max_iterations
    means "derive the default from the instance at run time"; the derived
    values are recorded in the trace header.
    """

    mode: str = "warmup"                     # "warmup" | "weighted"
    eta: float | None = None
    p: int | None = None
    pnorm_weight: float | None = None        # override for the p-norm coefficient W
    round_threshold: float | None = None     # gap at which rounding takes over
    laplacian_tol: float = 1e-10
    step_tol: float = 1e-10
    coupling_tol: float = 1e-8               # scaled by (1 + ||w||_1/m) at use sites
    agd_kappa: float = 1.9
    max_delta_halvings: int = 30
    max_iterations: int | None = None
    composite_max_outer: int = 100           # outer refinement cap in solve_composite
    weight_budget_coeff: float = 0.01        # per-iteration ||w''||_1 cap coefficient
    resistance_ratio_cap: float = 1e30
    conservation_tol: float = 1e-9
    seed: int = 0
    oracle_check: bool = False
    f_star_override: int | None = None
    trace_path: str | None = None
    backend: str = "auto"                    # "auto" | "python" | "numba"

    def __post_init__(self) -> None:
        if self.mode not in ("warmup", "weighted"):
            raise InvalidParams(f"unknown mode {self.mode!r}")
        if self.backend not in ("auto", "python", "numba"):
            raise InvalidParams(f"unknown backend {self.backend!r}")
        if self.p is not None and (self.p < 2 or self.p % 2 != 0):
            raise InvalidParams(f"p must be an even integer >= 2, got {self.p}")
        if self.eta is not None and not (0.0 < self.eta <= 0.5):
            raise InvalidParams(f"eta must lie in (0, 1/2], got {self.eta}")
        for name in ("laplacian_tol", "step_tol", "coupling_tol"):
            if getattr(self, name) <= 0.0:
                raise InvalidParams(f"{name} must be positive")
        if self.agd_kappa <= 1.0:
            raise InvalidParams("agd_kappa must exceed 1")

    def weight_budget_per_iter(self, m: int, eta: float,
                               capacity_bound: float) -> float:
        """Per-iteration cap on ||w''||_1: coeff * m^(4 eta) * capacity bound."""
        return self.weight_budget_coeff * float(m) ** (4.0 * eta) * capacity_bound

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SolverConfig":
        return cls(**json.loads(text))

    def replace(self, **kw) -> "SolverConfig":
        return dataclasses.replace(self, **kw)


def load_default_config() -> SolverConfig:
    """Config from the JSON file named by PRFLOW_CONFIG, else built-in defaults."""
    path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return SolverConfig()
    with open(path, "r", encoding="utf-8") as fh:
        return SolverConfig.from_json(fh.read())
