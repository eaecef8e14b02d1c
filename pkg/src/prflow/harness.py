"""Instance generation and the acceptance-check engine.

Everything here is experiment plumbing: deterministic graph families for the
test ladder and the checks the test suite and `verify` subcommand share.
All randomness flows through one numpy Generator seeded explicitly, so a
(family, n, m, U, seed) tuple always produces the identical instance.
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
import tempfile
import time

import numpy as np

from .errors import InvalidParams, SolverError
from .graph import Graph, build_graph

FAMILIES = ("unit-random", "parallel-paths", "grid")


def generate_instance(family: str, n: int, m: int, U: float = 1.0,
                      seed: int = 0) -> Graph:
    """Deterministic connected instance with s=0 and t=n-1.

    Families:
      unit-random     random spanning tree plus random extra edges, symmetric
                      capacities drawn from {1..U} (all ones when U=1)
      parallel-paths  k = m - n + 2 edge-disjoint s-t paths covering all
                      vertices, symmetric unit-times-U capacities; max flow k*U
      grid            square lattice with rightward and downward edges,
                      n must be a perfect square and m must be 2r(r-1)
    """
    if family not in FAMILIES:
        raise InvalidParams(f"unknown family {family!r}")
    if n < 2:
        raise InvalidParams(f"need n >= 2, got {n}")
    if U < 1:
        raise InvalidParams(f"need U >= 1, got {U}")
    rng = np.random.default_rng(seed)

    if family == "unit-random":
        return _unit_random(n, m, U, rng)
    if family == "parallel-paths":
        return _parallel_paths(n, m, U)
    return _grid(n, m, U, rng)


def _caps(rng: np.random.Generator, count: int, U: float) -> np.ndarray:
    if U <= 1:
        return np.ones(count)
    return rng.integers(1, int(U) + 1, size=count).astype(np.float64)


def _unit_random(n: int, m: int, U: float, rng: np.random.Generator) -> Graph:
    if m < n - 1:
        raise InvalidParams(f"unit-random needs m >= n-1, got m={m} n={n}")
    edges = []
    # random spanning tree: attach each vertex to a uniformly chosen earlier one
    order = rng.permutation(n)
    for i in range(1, n):
        j = int(rng.integers(0, i))
        u, v = int(order[j]), int(order[i])
        edges.append([u, v])
    for _ in range(m - (n - 1)):
        while True:
            u, v = (int(x) for x in rng.integers(0, n, size=2))
            if u != v:
                edges.append([u, v])
                break
    caps = _caps(rng, m, U)
    elist = [(u, v, float(c), float(c)) for (u, v), c in zip(edges, caps)]
    return build_graph(n, elist, s=0, t=n - 1, cap_bound=max(1.0, float(U)))


def _parallel_paths(n: int, m: int, U: float) -> Graph:
    k = m - n + 2
    if k < 1:
        raise InvalidParams(f"parallel-paths needs m >= n-1, got m={m} n={n}")
    inner = n - 2
    # spread the inner vertices over the k paths as evenly as possible
    lengths = [inner // k + (1 if i < inner % k else 0) for i in range(k)]
    s, t = 0, n - 1
    edges = []
    nxt = 1
    for L in lengths:
        prev = s
        for _ in range(L):
            edges.append((prev, nxt, float(U), float(U)))
            prev = nxt
            nxt += 1
        edges.append((prev, t, float(U), float(U)))
    return build_graph(n, edges, s=s, t=t, cap_bound=max(1.0, float(U)))


def _grid(n: int, m: int, U: float, rng: np.random.Generator) -> Graph:
    r = int(round(np.sqrt(n)))
    if r * r != n or r < 2:
        raise InvalidParams(f"grid needs a perfect-square n >= 4, got {n}")
    expected = 2 * r * (r - 1)
    if m != expected:
        raise InvalidParams(f"grid with n={n} has m={expected}, got {m}")
    edges_uv = []
    for i in range(r):
        for j in range(r):
            v = i * r + j
            if j + 1 < r:
                edges_uv.append((v, v + 1))
            if i + 1 < r:
                edges_uv.append((v, v + r))
    caps = _caps(rng, len(edges_uv), U)
    elist = [(u, v, float(c), float(c)) for (u, v), c in zip(edges_uv, caps)]
    return build_graph(n, elist, s=0, t=n - 1, cap_bound=max(1.0, float(U)))


# ---- acceptance engine ----
#
# Ten checks shared between tests/test_acceptance.py and
# `prflow verify --suite acceptance`.  The exactness battery (criterion 1)
# runs once per engine; its traces feed the iterate-level criteria (2, 3,
# part of 4, 5, and the warm-up accounting half of 10).

@dataclasses.dataclass(frozen=True)
class EngineProfile:
    """How much work each criterion does; `full` is the acceptance gate."""

    name: str
    runs_per_family: int
    time_budget: float | None      # criterion 1 wall-clock bound, seconds
    fd_samples: int                # per target function in criterion 7
    knot_samples: int              # quadratic-extension knot states
    sandwich_samples: int          # per lemma suite in criterion 8
    electrical_graphs: int
    composite_instances: int
    extraction_runs: int           # python-path weighted runs audited in 4
    trend_sizes: tuple[int, ...]   # weighted-count report sizes, criterion 10


FULL_PROFILE = EngineProfile(
    name="full", runs_per_family=50, time_budget=300.0, fd_samples=1000,
    knot_samples=200, sandwich_samples=10_000, electrical_graphs=100,
    composite_instances=20, extraction_runs=6, trend_sizes=(64, 128, 256))

# reduced battery for `verify --suite invariants`: same checks, desk dosage
QUICK_PROFILE = EngineProfile(
    name="quick", runs_per_family=4, time_budget=None, fd_samples=120,
    knot_samples=40, sandwich_samples=1500, electrical_graphs=15,
    composite_instances=4, extraction_runs=2, trend_sizes=())


@dataclasses.dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return (f"ACCEPTANCE {self.number}: "
                f"{'PASS' if self.passed else 'FAIL'} - {self.detail}")


@dataclasses.dataclass
class SuiteRun:
    """One solve of the exactness battery plus everything its checks need."""

    family: str
    mode: str
    n: int
    m: int
    seed: int
    oracle: int
    value: int | None
    integral: bool
    feasible: bool
    error: str | None
    header: dict
    records: list[dict]
    warmup_iterations: int
    weighted_iterations: int
    elapsed: float


# (n, m) shape pools per family, ordered small to large.  The battery leans
# small so 50 instances x 3 families x 2 modes of full interior-point solves
# fit the five-minute budget; the large rungs still push past 10^4 weighted
# iterations per run.
_SHAPES = {
    "unit-random": {
        "small": [(2, 1), (3, 2), (3, 3), (4, 4), (4, 5), (5, 6), (5, 7),
                  (6, 8)],
        "mid": [(6, 9), (7, 10), (8, 12), (9, 14)],
        "big": [(10, 16), (12, 20), (14, 24)],
    },
    "parallel-paths": {
        "small": [(2, 1), (3, 2), (3, 3), (4, 4), (4, 5), (5, 6), (6, 7),
                  (6, 8)],
        "mid": [(7, 9), (8, 10), (9, 12), (10, 14)],
        "big": [(11, 16), (12, 18), (14, 22)],
    },
    "grid": {
        "small": [(4, 4)],
        "mid": [(9, 12)],
        "big": [(16, 24)],
    },
}


def suite_ladder(runs_per_family: int) -> list[tuple[str, int, int, int]]:
    """(family, n, m, seed) entries of the exactness battery."""
    entries = []
    for family in FAMILIES:
        pools = _SHAPES[family]
        for i in range(runs_per_family):
            r = i % 10
            pool = pools["small"] if r < 7 else \
                pools["mid"] if r < 9 else pools["big"]
            n, m = pool[i % len(pool)]
            entries.append((family, n, m, 1000 + i))
    return entries


def _qnorm(x: np.ndarray, q: float) -> float:
    return float(np.power(np.abs(x), q).sum() ** (1.0 / q))


class AcceptanceEngine:
    """Runs the acceptance criteria and caches the shared battery."""

    def __init__(self, profile: EngineProfile = FULL_PROFILE,
                 workdir: str | None = None):
        self.profile = profile
        self._workdir = workdir or tempfile.mkdtemp(prefix="prflow-verify-")
        self._suite: list[SuiteRun] | None = None

    # -- criterion 1 battery, shared downstream --

    def suite_runs(self) -> list[SuiteRun]:
        if self._suite is None:
            self._suite = []
            for family, n, m, seed in suite_ladder(self.profile.runs_per_family):
                for mode in ("warmup", "weighted"):
                    self._suite.append(self._one_run(family, n, m, seed, mode))
        return self._suite

    def _one_run(self, family: str, n: int, m: int, seed: int,
                 mode: str) -> SuiteRun:
        from .config import SolverConfig
        from .driver import solve
        from .graph import check_flow
        from .oracle import dinic_max_flow

        g = generate_instance(family, n, m, seed=seed)
        oracle = int(round(dinic_max_flow(g)))
        path = os.path.join(self._workdir, "run.jsonl")
        cfg = SolverConfig(mode=mode, oracle_check=True, trace_path=path,
                           seed=seed)
        value = None
        integral = feasible = False
        error = None
        header: dict = {}
        records: list[dict] = []
        warm_iters = weighted_iters = 0
        t0 = time.monotonic()
        try:
            rep = solve(g, cfg)
            value = int(round(rep.value))
            warm_iters = rep.warmup_iterations
            weighted_iters = rep.weighted_iterations
            integral = bool(np.all(rep.flow.values == np.round(rep.flow.values)))
            check_flow(g, rep.flow)
            feasible = True
        except SolverError as exc:
            error = f"{type(exc).__name__}: {exc}"
        elapsed = time.monotonic() - t0
        if os.path.exists(path):
            from .trace import read_trace
            header, records = read_trace(path)
            os.unlink(path)
        return SuiteRun(family=family, mode=mode, n=n, m=m, seed=seed,
                        oracle=oracle, value=value, integral=integral,
                        feasible=feasible, error=error, header=header,
                        records=records, warmup_iterations=warm_iters,
                        weighted_iterations=weighted_iters, elapsed=elapsed)

    # -- criteria --

    def criterion_1(self) -> CriterionResult:
        runs = self.suite_runs()
        bad = [r for r in runs
               if r.error is not None or r.value != r.oracle
               or not r.integral or not r.feasible]
        total = sum(r.elapsed for r in runs)
        ok = not bad and (self.profile.time_budget is None
                          or total <= self.profile.time_budget)
        detail = (f"{len(runs)} solves ({self.profile.runs_per_family} per "
                  f"family, both modes), {len(bad)} mismatches, "
                  f"total {total:.1f}s")
        if bad:
            r = bad[0]
            detail += (f"; first: {r.family} n={r.n} m={r.m} {r.mode} -> "
                       f"{r.error or f'value {r.value} vs oracle {r.oracle}'}")
        return CriterionResult(1, "exactness vs oracle", ok, detail)

    def criterion_2(self) -> CriterionResult:
        from .config import CONGESTION_BOUND, FHAT_BOUND_COEFF
        runs = self.suite_runs()
        rho_bad = steps = 0
        rho_max = 0.0
        fhat_bad = 0
        fhat_margin = math.inf
        for r in runs:
            m_pre = r.header.get("instance", {}).get("m_preconditioned", 0)
            eta = r.header.get("resolved", {}).get("eta")
            for rec in r.records:
                steps += 1
                rho_max = max(rho_max, rec["rho_inf"])
                if rec["rho_inf"] > CONGESTION_BOUND * (1 + 1e-9):
                    rho_bad += 1
                if r.mode == "weighted":
                    bound = FHAT_BOUND_COEFF * m_pre ** (-2.0 * eta)
                    fhat_margin = min(fhat_margin, bound - rec["fhat_inf"])
                    if rec["fhat_inf"] > bound * (1 + 1e-12):
                        fhat_bad += 1
        ok = rho_bad == 0 and fhat_bad == 0 and steps > 0
        return CriterionResult(
            2, "congestion and step-size bounds", ok,
            f"{steps} accepted iterations: max rho {rho_max:.4f} "
            f"({rho_bad} violations), weighted step-bound margin "
            f"{fhat_margin:.3g} ({fhat_bad} violations)")

    def criterion_3(self) -> CriterionResult:
        from .barrier import COUPLING_TOL_BASE
        runs = self.suite_runs()
        bad = steps = 0
        worst = 0.0
        for r in runs:
            m_pre = r.header.get("instance", {}).get("m_preconditioned", 1)
            for rec in r.records:
                steps += 1
                bound = COUPLING_TOL_BASE * (1.0 + rec["w_norm1"] / m_pre)
                worst = max(worst, rec["coupling_inf"] / bound)
                if rec["coupling_inf"] > bound:
                    bad += 1
        ok = bad == 0 and steps > 0
        return CriterionResult(
            3, "coupling after every advance", ok,
            f"{steps} advances: worst residual at {worst:.3f} of tolerance, "
            f"{bad} violations")

    def criterion_4(self) -> CriterionResult:
        from .config import WEIGHT_BUDGET_FACTOR
        runs = self.suite_runs()
        bad = steps = 0
        worst_ratio = 0.0
        for r in runs:
            if r.mode != "weighted":
                continue
            m_pre = r.header.get("instance", {}).get("m_preconditioned", 1)
            for rec in r.records:
                steps += 1
                ratio = rec["w_norm1"] / (WEIGHT_BUDGET_FACTOR * m_pre)
                worst_ratio = max(worst_ratio, ratio)
                if ratio > 1.0:
                    bad += 1
        extractions, worst_q = self._extraction_audit()
        ok = bad == 0 and steps > 0 and extractions > 0 and worst_q <= 1e-10
        return CriterionResult(
            4, "weight budget and extraction norm", ok,
            f"{steps} weighted iterations: max ||w||_1 at "
            f"{worst_ratio:.3f} of 3m ({bad} violations); {extractions} "
            f"extractions: max |  ||r'||_q - W  | = {worst_q:.2e}")

    def _extraction_audit(self) -> tuple[int, float]:
        """Python-path weighted runs, q-norm identity checked per extraction."""
        from .config import (SolverConfig, default_eta, default_p,
                             pnorm_weight_default)
        from .driver import initialize, precondition_target, relax_zero_sides
        from .graph import precondition
        from .oracle import dinic_max_flow
        from .weighted_step import weighted_progress_step

        worst = 0.0
        count = 0
        for i in range(self.profile.extraction_runs):
            g0 = generate_instance("unit-random", 3 + i, 4 + 2 * i, seed=40 + i)
            gp = precondition(relax_zero_sides(g0))
            f_star = dinic_max_flow(g0) + 2.0 * g0.m * g0.cap_bound
            eta = default_eta(gp.m, g0.cap_bound)
            p = default_p(gp.m)
            W = pnorm_weight_default(gp.m, eta, p)
            q = p / (p - 1.0)
            cfg = SolverConfig(mode="weighted", eta=eta, p=p, pnorm_weight=W)
            state = initialize(gp, f_star)
            # stop early: the audit wants every extraction of a real run
            # prefix, not phase completion (the kernel path covers full runs)
            threshold = max(gp.m ** (0.5 - eta), 0.93 * f_star)
            warm = None
            while state.F_star - state.F >= threshold:
                state, change, step = weighted_progress_step(state, cfg,
                                                             warm=warm)
                worst = max(worst, abs(_qnorm(change.r_prime, q) - W))
                count += 1
                warm = step.fhat
        return count, worst

    def criterion_5(self) -> CriterionResult:
        from .config import PRECOND_SLACK_DIVISOR
        runs = self.suite_runs()
        bad = steps = 0
        worst = math.inf
        for r in runs:
            m_pre = r.header.get("instance", {}).get("m_preconditioned", 1)
            for rec in r.records:
                u_min = rec["u_hat_precond_min"]
                if u_min is None:
                    continue
                steps += 1
                floor = rec["gap"] / (PRECOND_SLACK_DIVISOR * m_pre)
                worst = min(worst, u_min / floor if floor > 0 else math.inf)
                if u_min < floor:
                    bad += 1
        ok = bad == 0 and steps > 0
        return CriterionResult(
            5, "preconditioner slack", ok,
            f"{steps} iterates: slack at worst {worst:.2f}x the "
            f"(F*-F)/(21m) floor, {bad} violations")

    def criterion_6(self) -> CriterionResult:
        from .laplacian import electrical_flow
        worst_energy = worst_edge = 0.0
        k = self.profile.electrical_graphs
        for i in range(k):
            rng = np.random.default_rng(7000 + i)
            n = int(rng.integers(4, 51))
            m = n - 1 + int(rng.integers(1, 40))
            g = generate_instance("unit-random", n, m, seed=7000 + i)
            r = rng.uniform(0.1, 10.0, size=g.m)
            chi = g.st_demand(1.0)
            f = electrical_flow(g, r, chi).values

            B = np.zeros((g.m, g.n))
            B[np.arange(g.m), g.head] = 1.0
            B[np.arange(g.m), g.tail] = -1.0
            L = B.T @ (B / r[:, None])
            f_ref = (B @ (np.linalg.pinv(L) @ chi)) / r

            e, e_ref = float(r @ (f * f)), float(r @ (f_ref * f_ref))
            worst_energy = max(worst_energy, abs(e - e_ref) / e_ref)
            scale = max(1.0, float(np.abs(f_ref).max()))
            worst_edge = max(worst_edge,
                             float(np.abs(f - f_ref).max()) / scale)
        ok = worst_energy <= 1e-8 and worst_edge <= 1e-6
        return CriterionResult(
            6, "electrical flow vs dense reference", ok,
            f"{k} graphs: worst relative energy gap {worst_energy:.2e}, "
            f"worst per-edge gap {worst_edge:.2e}")

    def _fd_pool(self) -> list:
        pool = []
        for i in range(12):
            pool.append(generate_instance("unit-random", 4 + i % 4,
                                          5 + i, seed=300 + i))
        return pool

    def criterion_7(self) -> CriterionResult:
        from .barrier import Weights, _g_eval, decrement_value
        from .weighted_step import composite_objective

        pool = self._fd_pool()
        rng = np.random.default_rng(31)
        h = 1e-6
        worst = {"decrement": 0.0, "g": 0.0, "composite": 0.0}
        samples = self.profile.fd_samples

        def rel_gap(fd, an, floor):
            return abs(fd - an) / max(floor, abs(an))

        for _ in range(samples):
            g = pool[int(rng.integers(len(pool)))]
            w = Weights(rng.uniform(0.5, 2.0, g.m), rng.uniform(0.5, 2.0, g.m))
            f = rng.uniform(-0.2, 0.2, g.m)
            x = rng.uniform(-0.3, 0.3, g.m)
            e = int(rng.integers(g.m))
            de = np.zeros(g.m)
            de[e] = h

            # value/gradient/Hessian-diagonal of the extended decrement:
            # central differences of the value for the gradient, of the
            # gradient for the Hessian diagonal
            v0, g0, h0 = decrement_value(g, w, f, x)
            vp, gp, _ = decrement_value(g, w, f, x + de)
            vm, gm, _ = decrement_value(g, w, f, x - de)
            worst["decrement"] = max(
                worst["decrement"],
                rel_gap((vp - vm) / (2 * h), g0[e], 1e-4),
                rel_gap((gp[e] - gm[e]) / (2 * h), h0[e], 1e-2))

            gv0, gg0, gh0 = _g_eval(g, f, x)
            gvp, ggp, _ = _g_eval(g, f, x + de)
            gvm, ggm, _ = _g_eval(g, f, x - de)
            worst["g"] = max(
                worst["g"],
                rel_gap((gvp[e] - gvm[e]) / (2 * h), gg0[e], 1e-4),
                rel_gap((ggp[e] - ggm[e]) / (2 * h), gh0[e], 1e-2))

            W = float(rng.uniform(0.2, 2.0))
            p = int(rng.choice([2, 4, 6]))
            cv0, cg0 = composite_objective(g, w, f, x, W, p)
            cvp, _ = composite_objective(g, w, f, x + de, W, p)
            cvm, _ = composite_objective(g, w, f, x - de, W, p)
            worst["composite"] = max(
                worst["composite"],
                rel_gap((cvp - cvm) / (2 * h), cg0[e], 1e-4))

        knots_worst = self._knot_check()
        ok = all(v <= 1e-5 for v in worst.values()) and knots_worst <= 1e-6
        return CriterionResult(
            7, "derivative and smoothness checks", ok,
            f"{samples} samples per function, worst relative gaps: "
            f"decrement {worst['decrement']:.2e}, g {worst['g']:.2e}, "
            f"composite {worst['composite']:.2e}; C2 knot mismatch "
            f"{knots_worst:.2e}")

    def _knot_check(self) -> float:
        """Continuity of value/gradient/curvature across the box knots.

        Evaluates each per-edge term a relative 1e-9 inside and outside both
        knots +-ell; a C2 extension leaves all three discrepancies O(1e-9),
        three orders under the 1e-6 acceptance line.
        """
        from .barrier import Weights, _g_eval, box_radius, decrement_terms
        from .graph import residual_caps

        rng = np.random.default_rng(97)
        worst = 0.0
        for _ in range(self.profile.knot_samples):
            g = build_graph(2, [(0, 1, float(rng.uniform(0.3, 4.0)),
                                 float(rng.uniform(0.3, 4.0)))], 0, 1, 4.0)
            w = Weights(rng.uniform(0.1, 4.0, 1), rng.uniform(0.1, 4.0, 1))
            f = np.zeros(1)
            rc = residual_caps(g, f)
            ell = float(box_radius(rc.fwd, rc.bwd)[0])
            for sign in (1.0, -1.0):
                knot = sign * ell
                lo = np.array([knot * (1 - sign * 1e-9)])
                hi = np.array([knot * (1 + sign * 1e-9)])
                for fn in (lambda x: decrement_terms(g, w, f, x),
                           lambda x: _g_eval(g, f, x)):
                    vl, gl, hl = (a[0] for a in fn(lo))
                    vh, gh, hh = (a[0] for a in fn(hi))
                    worst = max(
                        worst,
                        abs(vh - vl) / max(1e-6, abs(vl)),
                        abs(gh - gl) / max(1e-4, abs(gl)),
                        abs(hh - hl) / max(1e-2, abs(hl)))
        return worst

    def criterion_8(self) -> CriterionResult:
        from .weighted_step import EdgeState, power_step_bounds, sandwich_bounds

        rng = np.random.default_rng(53)
        k = self.profile.sandwich_samples
        power_bad = edge_bad = 0
        for _ in range(k):
            p = int(rng.choice([2, 4, 6, 8]))
            x = float(rng.uniform(-2.0, 2.0))
            d = float(rng.uniform(-1.0, 1.0))
            lo, up, act = power_step_bounds(x, d, p)
            s = 1.0 + abs(act)
            if lo > act + 1e-12 * s or act > up + 1e-12 * s:
                power_bad += 1

            # the edge-value sweep's documented in-box domain
            uf, ub = np.exp(rng.uniform(np.log(0.3), np.log(4.0), 2))
            wf, wb = np.exp(rng.uniform(np.log(0.1), np.log(4.0), 2))
            ell = min(uf, ub) / 10.0
            fpos = float(rng.uniform(-0.8, 0.8) * ell)
            floor = 1e-3 * min(uf, ub)
            delta = floor + float(rng.uniform(0.0, 1.0) ** 3) \
                * (ell - fpos - floor)
            es = EdgeState(float(uf), float(ub), float(wf), float(wb))
            lo, up, act = sandwich_bounds(es, fpos, delta, p)
            s = 1.0 + abs(act)
            if lo > act + 1e-11 * s or act > up + 1e-11 * s:
                edge_bad += 1
        script = os.path.join(os.path.dirname(os.path.dirname(
            os.path.dirname(os.path.abspath(__file__)))),
            "scripts", "calibrate_sandwich.py")
        has_script = os.path.exists(script)
        ok = power_bad == 0 and edge_bad == 0 and has_script
        return CriterionResult(
            8, "Taylor sandwich suites", ok,
            f"{k} samples per suite: power-step violations {power_bad}, "
            f"edge-value violations {edge_bad}; calibration script "
            f"{'present' if has_script else 'missing'}")

    def criterion_9(self) -> CriterionResult:
        from .barrier import Weights
        from .config import (default_eta, default_p, pnorm_weight_default,
                             WEIGHTED_DELTA_DIVISOR)
        from .graph import precondition
        from .laplacian import project_to_demand
        from .oracle import dinic_max_flow
        from .potential_step import uniform_precond_flow
        from .weighted_step import composite_objective, solve_composite

        worst = 0.0
        k = self.profile.composite_instances
        for i in range(k):
            rng = np.random.default_rng(500 + i)
            n = 3 + i % 6
            g = precondition(generate_instance("unit-random", n,
                                               n + 1 + i % 5, seed=500 + i))
            c = 2.0 * g.m / float(g.cap_fwd.sum() + g.cap_bwd.sum())
            w = Weights(c * g.cap_fwd, c * g.cap_bwd)
            f = np.zeros(g.m)
            eta = default_eta(g.m, g.cap_bound)
            p = default_p(g.m) if i % 2 == 0 else 2
            W = pnorm_weight_default(g.m, eta, p)
            gap = dinic_max_flow(g)
            delta = gap / (WEIGHTED_DELTA_DIVISOR * g.m ** (0.5 - eta))

            fhat = solve_composite(g, w, f, delta, W, p)
            val = composite_objective(g, w, f, fhat, W, p)[0]
            ref = self._pgd_reference(g, w, f, delta, W, p)
            scale = max(1e-9, abs(ref))
            worst = max(worst, abs(val - ref) / scale)
        ok = worst <= 1e-6
        return CriterionResult(
            9, "composite solver vs projected gradient", ok,
            f"{k} instances (m <= {100}): worst relative objective gap "
            f"{worst:.2e}")

    @staticmethod
    def _pgd_reference(g, w, f, delta, W, p, iters=6000) -> float:
        """Metric-free projected gradient with backtracking, run long."""
        from .laplacian import project_to_demand
        from .potential_step import uniform_precond_flow
        from .weighted_step import composite_objective

        ones = np.ones(g.m)
        demand = g.st_demand(delta)
        x = project_to_demand(g, ones, uniform_precond_flow(g, delta), demand)
        val, grad = composite_objective(g, w, f, x, W, p)
        step = 0.5
        for _ in range(iters):
            d = -project_to_demand(g, ones, grad, np.zeros(g.n))
            while step > 1e-18:
                cand = x + step * d
                cval, cgrad = composite_objective(g, w, f, cand, W, p)
                if cval <= val + 1e-15 * abs(val):
                    x, val, grad = cand, cval, cgrad
                    step *= 1.3
                    break
                step *= 0.5
            else:
                break
        return val

    def criterion_10(self) -> CriterionResult:
        runs = self.suite_runs()
        bad = checked = 0
        worst = 0.0
        for r in runs:
            if r.mode != "warmup" or r.error is not None:
                continue
            m_pre = r.header.get("instance", {}).get("m_preconditioned", 1)
            f_star_pre = r.header.get("resolved", {}).get(
                "f_star_preconditioned", 0.0)
            threshold = math.sqrt(m_pre)
            if f_star_pre <= threshold:
                continue
            checked += 1
            bound = 1.1 * 1000.0 * math.sqrt(m_pre) \
                * math.log(f_star_pre / threshold)
            worst = max(worst, r.warmup_iterations / bound)
            if r.warmup_iterations > bound:
                bad += 1
        trend = self.weighted_trend()
        trend_txt = ", ".join(f"m={m}: {it}" for m, it in trend) or "skipped"
        ok = bad == 0 and checked > 0
        return CriterionResult(
            10, "iteration accounting", ok,
            f"{checked} warm-up runs within 1.1x the 1000 sqrt(m) ln(F*/sqrt(m)) "
            f"bound (worst {worst:.3f}x, {bad} over); weighted counts "
            f"(reported, not asserted): {trend_txt}; larger sizes via "
            f"scripts/iteration_trend.py")

    def weighted_trend(self) -> list[tuple[int, int]]:
        """Weighted-mode iteration counts over doubling m, for inspection."""
        from .config import SolverConfig
        from .driver import solve

        out = []
        for m in self.profile.trend_sizes:
            n = max(2, m // 2)
            g = generate_instance("unit-random", n, m, seed=m)
            rep = solve(g, SolverConfig(mode="weighted", oracle_check=True))
            out.append((m, rep.weighted_iterations))
        return out

    def criterion(self, number: int) -> CriterionResult:
        return getattr(self, f"criterion_{number}")()


CRITERIA = tuple(range(1, 11))


def run_acceptance(numbers=CRITERIA, out=None,
                   profile: EngineProfile = FULL_PROFILE) -> list[CriterionResult]:
    """Run acceptance criteria, printing one PASS/FAIL line per criterion."""
    engine = AcceptanceEngine(profile=profile)
    results = []
    for number in numbers:
        res = engine.criterion(number)
        results.append(res)
        if out is not None:
            print(res.line(), file=out, flush=True)
    return results


def run_invariants(out=None) -> list[CriterionResult]:
    """Reduced-dosage property battery behind `verify --suite invariants`."""
    engine = AcceptanceEngine(profile=QUICK_PROFILE)
    results = []
    for number in CRITERIA:
        res = engine.criterion(number)
        results.append(res)
        if out is not None:
            status = "PASS" if res.passed else "FAIL"
            print(f"INVARIANT {number}: {status} - {res.detail}",
                  file=out, flush=True)
    return results
