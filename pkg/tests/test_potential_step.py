import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prflow.barrier import (
    Weights,
    barrier_gradient,
    coupling_residual,
    coupling_tolerance,
    decrement_value,
)
from prflow.config import WARMUP_DELTA_DIVISOR, SolverConfig
from prflow.errors import CouplingLost, NoConvergence
from prflow.graph import build_graph, precondition, residual_caps
from prflow.harness import generate_instance
from prflow.oracle import dinic_max_flow
from prflow.potential_step import (
    AGD_STALL_RATIO,
    StepResult,
    advance,
    agd_minimize,
    dual_update,
    potential_decrement_step,
    uniform_precond_flow,
)


def two_parallel_edges():
    # B'x = demand on this graph encodes x1 + x2 = F at the sink
    return build_graph(2, [(0, 1, 1.0, 1.0), (0, 1, 1.0, 1.0)],
                       s=0, t=1, cap_bound=1.0)


def unit_weights(g):
    return Weights(np.ones(g.m), np.ones(g.m))


@dataclasses.dataclass(frozen=True)
class FakeState:
    g: object
    f: np.ndarray
    y: np.ndarray
    w: Weights
    F: float
    F_star: float
    iteration: int


def fresh_state(g):
    c = 2.0 * g.m / float(g.cap_fwd.sum() + g.cap_bwd.sum())
    w = Weights(c * g.cap_fwd, c * g.cap_bwd)
    return FakeState(g, np.zeros(g.m), np.zeros(g.n), w, 0.0,
                     dinic_max_flow(g), 0)


def warmup_delta(state):
    return (state.F_star - state.F) / (WARMUP_DELTA_DIVISOR
                                       * math.sqrt(state.g.m))


# ---- agd_minimize ----

def test_agd_symmetric_quadratic_on_sum_constraint():
    g = two_parallel_edges()

    def obj(x):
        return 0.5 * float(x @ x), x

    x, iters, ratio = agd_minimize(obj, g, g.st_demand(1.0),
                                   np.array([1.0, 0.0]), np.ones(2),
                                   kappa=2.0, tol=1e-12)
    assert np.allclose(x, [0.5, 0.5], atol=1e-10)
    assert iters >= 1


def test_agd_unconstrained_quadratic_reaches_zero():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=5)

    def obj(x):
        return 0.5 * float(x @ x), x

    x, _, ratio = agd_minimize(obj, None, None, x0, np.ones(5),
                               kappa=1.9, tol=1e-12)
    assert np.abs(x).max() <= 1e-10
    assert ratio <= 1e-12


def test_agd_diagonal_quadratic_matches_kkt():
    # min 0.5 x'Hx - b'x with H = diag(2, 8), b = (1, 2), s.t. x1 + x2 = 1.
    # Stationarity Hx - b = lam*1 and the constraint give lam = 0.4 and
    # x = (0.7, 0.3); D = diag(1, 4) brackets H within kappa = 4.
    g = two_parallel_edges()
    H = np.array([2.0, 8.0])
    b = np.array([1.0, 2.0])
    D = np.array([1.0, 4.0])

    def obj(x):
        return 0.5 * float(x @ (H * x)) - float(b @ x), H * x - b

    x0 = np.array([1.0, 0.0])
    x, _, _ = agd_minimize(obj, g, g.st_demand(1.0), x0, D,
                           kappa=4.0, tol=1e-13)
    assert np.allclose(x, [0.7, 0.3], atol=1e-9)


def test_agd_starting_at_minimizer_returns_immediately():
    def obj(x):
        return 0.5 * float(x @ x), x

    x, iters, ratio = agd_minimize(obj, None, None, np.zeros(3), np.ones(3),
                                   kappa=1.9, tol=1e-10)
    assert iters == 0
    assert ratio == 0.0
    assert np.all(x == 0.0)


def test_agd_stall_stop_terminates_below_float_floor():
    # A relative target below the float-noise floor of the criterion must not
    # spin to the iteration cap: the stall branch accepts once the criterion
    # plateaus after an AGD_STALL_RATIO decrease.
    c = np.array([0.3, 0.7, 1.1]) / 3.0

    def obj(x):
        return 0.5 * float((x - c) @ (x - c)), x - c

    x, iters, ratio = agd_minimize(obj, None, None, np.zeros(3), np.ones(3),
                                   kappa=1.9, tol=1e-30, max_iter=2000)
    assert iters < 2000
    assert ratio <= AGD_STALL_RATIO
    assert np.allclose(x, c, atol=1e-12)


def test_agd_iteration_cap_raises():
    # kappa far below the true conditioning stalls progress high above the
    # stall ratio, so the cap must surface as NoConvergence.
    H = np.array([1.0, 400.0])

    def obj(x):
        return 0.5 * float(x @ (H * x)), H * x

    with pytest.raises(NoConvergence):
        agd_minimize(obj, None, None, np.array([1.0, 1.0]), np.ones(2),
                     kappa=1.01, tol=1e-14, max_iter=8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_agd_random_diagonal_quadratics_match_closed_form(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    D = rng.uniform(0.5, 4.0, size=k)
    scale = rng.uniform(1.0, 1.8)
    H = D * scale    # D <= H <= 2D
    b = rng.normal(size=k)

    def obj(x):
        return 0.5 * float(x @ (H * x)) - float(b @ x), H * x - b

    x, _, _ = agd_minimize(obj, None, None, np.zeros(k), D,
                           kappa=2.0, tol=1e-12)
    assert np.allclose(x, b / H, atol=1e-8 * max(1.0, np.abs(b / H).max()))


# ---- potential_decrement_step ----

def test_decrement_step_zero_delta_is_identity():
    g = precondition(generate_instance("unit-random", 5, 7, seed=1))
    st_ = fresh_state(g)
    step = potential_decrement_step(g, st_.w, st_.f, st_.y, 0.0)
    assert np.all(step.fhat == 0.0)
    assert np.all(step.yhat == 0.0)
    assert step.objective == 0.0
    assert step.solver_iters == 0


def test_warmup_delta_schedule_value():
    # gap 100 on a 100-edge instance: one warm-up unit is 100/(1000*10)
    delta = (100.0 - 0.0) / (WARMUP_DELTA_DIVISOR * math.sqrt(100))
    assert delta == 0.01


def test_certificate_bound_against_uniform_comparison_flow():
    # The minimizer cannot do worse than the explicit uniform flow on the
    # preconditioner edges, which satisfies the same demand.
    g = precondition(generate_instance("parallel-paths", 6, 10, seed=3))
    st_ = fresh_state(g)
    delta = warmup_delta(st_)
    step = potential_decrement_step(g, st_.w, st_.f, st_.y, delta)
    uniform = uniform_precond_flow(g, delta)
    reference = decrement_value(g, st_.w, st_.f, uniform)[0]
    assert step.objective <= reference + 1e-12 * max(1.0, abs(reference))


def test_congestion_bound_over_random_instances():
    violations = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 9))
        m = n - 1 + int(rng.integers(1, 7))
        g = precondition(generate_instance("unit-random", n, m, seed=seed))
        st_ = fresh_state(g)
        step = potential_decrement_step(g, st_.w, st_.f, st_.y,
                                        warmup_delta(st_))
        rho = max(step.rho_fwd.max(), step.rho_bwd.max())
        if rho > 0.1:
            violations += 1
    assert violations == 0


def test_kkt_stationarity_ratio_within_step_tol():
    cfg = SolverConfig()
    for seed in range(5):
        g = precondition(generate_instance("unit-random", 6, 9, seed=seed))
        st_ = fresh_state(g)
        step = potential_decrement_step(g, st_.w, st_.f, st_.y,
                                        warmup_delta(st_), cfg)
        assert step.grad_norm <= cfg.step_tol


def test_step_satisfies_demand():
    g = precondition(generate_instance("grid", 9, 12, seed=0))
    st_ = fresh_state(g)
    delta = warmup_delta(st_)
    step = potential_decrement_step(g, st_.w, st_.f, st_.y, delta)
    residual = g.vertex_residual(step.fhat) - g.st_demand(delta)
    assert np.abs(residual).max() <= 1e-9


def test_minimizer_stays_in_box_and_matches_unextended_solve():
    # With congestion <= 0.1 the quadratic extension is inactive, so widening
    # the box must not move the computed minimizer.
    cfg = SolverConfig()
    g = precondition(generate_instance("unit-random", 6, 10, seed=4))
    st_ = fresh_state(g)
    delta = warmup_delta(st_)
    step = potential_decrement_step(g, st_.w, st_.f, st_.y, delta, cfg)

    rc = residual_caps(g, st_.f)
    wide_ell = 5.0 * np.minimum(rc.fwd, rc.bwd) / 10.0
    D = st_.w.fwd / rc.fwd**2 + st_.w.bwd / rc.bwd**2

    def objective(x):
        value, grad, _ = decrement_value(g, st_.w, st_.f, x, ell=wide_ell)
        return value, grad

    fhat_wide, _, _ = agd_minimize(objective, g, g.st_demand(delta),
                                   uniform_precond_flow(g, delta), D,
                                   kappa=cfg.agd_kappa, tol=cfg.step_tol,
                                   project_tol=cfg.laplacian_tol)
    assert np.abs(step.fhat - fhat_wide).max() <= 1e-6


# ---- dual_update ----

def test_dual_update_zero_step_is_zero():
    g = precondition(generate_instance("unit-random", 5, 8, seed=5))
    w = unit_weights(g)
    yhat, residual = dual_update(g, w, np.zeros(g.m), np.zeros(g.m))
    assert np.abs(yhat).max() <= 1e-12
    assert residual <= 1e-12


def test_dual_update_exact_on_tree():
    # On a tree every edge vector is a potential difference, so the fit
    # reproduces the gradient-difference target exactly.
    g = build_graph(3, [(0, 1, 1.0, 1.0), (1, 2, 1.0, 1.0)],
                    s=0, t=2, cap_bound=1.0)
    w = unit_weights(g)
    f = np.zeros(g.m)
    fhat = np.array([0.2, -0.1])
    yhat, residual = dual_update(g, w, f, fhat)
    assert residual <= 1e-8
    d = barrier_gradient(g, w, f + fhat) - barrier_gradient(g, w, f)
    assert np.abs(g.edge_difference(yhat) - d).max() <= 1e-8


def test_dual_update_circulation_target_is_odd_and_unfittable():
    # A uniform circulation on a symmetric 3-cycle produces a constant
    # gradient-difference target; its projection onto potential differences
    # is zero, so the fit residual equals the per-edge target magnitude.
    g = build_graph(3, [(0, 1, 1.0, 1.0), (1, 2, 1.0, 1.0), (2, 0, 1.0, 1.0)],
                    s=0, t=2, cap_bound=1.0)
    w = unit_weights(g)
    f = np.zeros(g.m)
    t = 0.15
    circ = np.full(3, t)

    d_pos = barrier_gradient(g, w, circ) - barrier_gradient(g, w, f)
    d_neg = barrier_gradient(g, w, -circ) - barrier_gradient(g, w, f)
    assert np.abs(d_pos + d_neg).max() <= 1e-12

    expected = 2.0 * t / (1.0 - t * t)
    yhat, residual = dual_update(g, w, f, circ, fit_bound=np.inf)
    assert residual == pytest.approx(expected, rel=1e-9)
    assert np.abs(g.edge_difference(yhat)).max() <= 1e-9


# ---- advance ----

def test_advance_zero_step_preserves_iterate():
    g = precondition(generate_instance("unit-random", 5, 8, seed=6))
    st_ = fresh_state(g)
    zero = StepResult(fhat=np.zeros(g.m), yhat=np.zeros(g.n),
                      rho_fwd=np.zeros(g.m), rho_bwd=np.zeros(g.m),
                      objective=0.0, solver_iters=0, grad_norm=0.0,
                      delta=0.0, fit_residual=0.0)
    out = advance(st_, zero)
    assert np.all(out.f == st_.f)
    assert np.all(out.y == st_.y)
    assert out.F == st_.F
    assert out.w is st_.w
    assert out.iteration == st_.iteration + 1


def test_advance_one_warmup_step_keeps_coupling():
    g = precondition(generate_instance("unit-random", 6, 9, seed=7))
    st_ = fresh_state(g)
    step = potential_decrement_step(g, st_.w, st_.f, st_.y, warmup_delta(st_))
    out = advance(st_, step)
    res = np.abs(coupling_residual(g, out.w, out.f, out.y)).max()
    assert res <= coupling_tolerance(out.w, g.m)
    assert out.F == pytest.approx(st_.F + step.delta)


def test_advance_rejects_perturbed_step():
    g = precondition(generate_instance("unit-random", 6, 9, seed=8))
    st_ = fresh_state(g)
    step = potential_decrement_step(g, st_.w, st_.f, st_.y, warmup_delta(st_))
    bad_fhat = step.fhat.copy()
    bad_fhat[0] += 0.05    # stays interior; breaks the dual fit by ~1e-1
    bad = dataclasses.replace(step, fhat=bad_fhat)
    with pytest.raises(CouplingLost):
        advance(st_, bad)
