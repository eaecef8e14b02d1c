import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prflow.barrier import (
    Weights,
    coupling_residual,
    coupling_tolerance,
    decrement_value,
    g_terms,
)
from prflow.config import (
    SolverConfig,
    default_eta,
    default_p,
    pnorm_weight_nominal,
)
from prflow.errors import CongestionExceeded, DegenerateStep, WeightBudgetExceeded
from prflow.graph import build_graph, congestion, precondition, residual_caps
from prflow.harness import generate_instance
from prflow.laplacian import project_to_demand
from prflow.oracle import dinic_max_flow
from prflow.potential_step import potential_decrement_step, uniform_precond_flow
from prflow.weighted_step import (
    EdgeState,
    WeightChange,
    _inner_residual_solve,
    composite_objective,
    edge_value,
    extract_weights,
    power_step_bounds,
    reduce_weights,
    sandwich_bounds,
    solve_composite,
    weighted_progress_step,
)


def one_edge(up=1.0, um=1.0):
    return build_graph(2, [(0, 1, up, um)], s=0, t=1, cap_bound=max(up, um))


def small_instance(seed=0):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 8))
    m = n - 1 + int(rng.integers(1, 8))
    g = generate_instance("unit-random", n, m, seed=seed)
    return precondition(g)


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


# ---- composite_objective ----

def test_composite_zero_step_is_zero():
    g = one_edge()
    val, grad = composite_objective(g, unit_weights(g), np.zeros(1),
                                    np.zeros(1), 1.0, 2)
    assert val == 0.0
    assert np.all(grad == 0.0)


def test_composite_single_edge_value():
    # decrement term -log(1 - 0.01) and norm term both equal 0.0100503
    g = one_edge()
    val, _ = composite_objective(g, unit_weights(g), np.zeros(1),
                                 np.array([0.1]), 1.0, 2)
    assert val == pytest.approx(-np.log(1.0 - 0.01) * 2.0, rel=1e-12)
    assert val == pytest.approx(0.0201007, abs=1e-6)


def test_composite_w_zero_is_decrement():
    g = small_instance(3)
    w = unit_weights(g)
    rng = np.random.default_rng(3)
    fhat = rng.uniform(-0.02, 0.02, g.m)
    val, grad = composite_objective(g, w, np.zeros(g.m), fhat, 0.0, 4)
    dv, dg, _ = decrement_value(g, w, np.zeros(g.m), fhat)
    assert val == pytest.approx(dv, rel=1e-12)
    np.testing.assert_allclose(grad, dg, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("p", [2, 4, 6])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_composite_gradient_finite_difference(p, seed):
    g = small_instance(seed)
    rng = np.random.default_rng(seed + 100)
    w = Weights(rng.uniform(0.5, 2.0, g.m), rng.uniform(0.5, 2.0, g.m))
    f = rng.uniform(-0.05, 0.05, g.m)
    x = rng.uniform(-0.03, 0.03, g.m)
    W = float(rng.uniform(0.5, 3.0))
    _, grad = composite_objective(g, w, f, x, W, p)
    h = 1e-7
    for i in rng.choice(g.m, size=min(6, g.m), replace=False):
        e = np.zeros(g.m)
        e[i] = h
        vp, _ = composite_objective(g, w, f, x + e, W, p)
        vm, _ = composite_objective(g, w, f, x - e, W, p)
        fd = (vp - vm) / (2.0 * h)
        assert fd == pytest.approx(grad[i], rel=1e-5, abs=1e-9)


# ---- solve_composite ----

def test_inner_subproblem_zero_gradient():
    g = small_instance(1)
    alpha = np.zeros(g.m)
    q = np.ones(g.m)
    d = _inner_residual_solve(g, alpha, q, 1.0, 4, SolverConfig())
    assert np.all(d == 0.0)


def test_solve_composite_zero_delta():
    g = small_instance(2)
    out = solve_composite(g, unit_weights(g), np.zeros(g.m), 0.0, 1.0, 2)
    assert np.all(out == 0.0)


@pytest.mark.parametrize("seed", [0, 1, 4])
@pytest.mark.parametrize("delta", [0.0005, 0.005])
def test_solve_composite_w_zero_matches_warmup(seed, delta):
    g = small_instance(seed)
    w = unit_weights(g)
    f = np.zeros(g.m)
    fhat = solve_composite(g, w, f, delta, 0.0, 2)
    step = potential_decrement_step(g, w, f, np.zeros(g.n), delta)
    assert np.abs(fhat - step.fhat).max() < 1e-8


@pytest.mark.parametrize("p", [2, 4])
def test_solve_composite_satisfies_demand(p):
    g = small_instance(5)
    w = unit_weights(g)
    delta = 0.003
    fhat = solve_composite(g, w, np.zeros(g.m), delta, 1.2, p)
    excess = g.vertex_residual(fhat) - g.st_demand(delta)
    assert np.abs(excess).max() < 1e-9


def test_solve_composite_congestion_guard():
    g = small_instance(6)
    w = unit_weights(g)
    big = 0.4 * float(np.minimum(g.cap_fwd, g.cap_bwd).min()) * g.m
    with pytest.raises(CongestionExceeded):
        solve_composite(g, w, np.zeros(g.m), big, 1.0, 2)


def _projected_gradient_reference(g, w, f, delta, W, p, iters=4000):
    """Slow first-order reference: metric-free projected gradient descent."""
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
    return x, val


@pytest.mark.parametrize("seed,p", [(0, 2), (1, 4), (2, 2)])
def test_solve_composite_matches_reference(seed, p):
    g = small_instance(seed)
    w = unit_weights(g)
    f = np.zeros(g.m)
    delta = 0.004
    W = 1.5
    fhat = solve_composite(g, w, f, delta, W, p)
    val = composite_objective(g, w, f, fhat, W, p)[0]
    _, ref = _projected_gradient_reference(g, w, f, delta, W, p)
    assert val <= ref + 1e-6 * abs(ref) + 1e-14


def test_solve_composite_warm_start_same_optimum():
    g = small_instance(7)
    w = unit_weights(g)
    delta = 0.002
    cold = solve_composite(g, w, np.zeros(g.m), delta, 1.0, 4)
    rng = np.random.default_rng(7)
    warm = cold + rng.normal(0.0, 1e-4, g.m)
    again = solve_composite(g, w, np.zeros(g.m), delta, 1.0, 4, warm=warm)
    assert np.abs(cold - again).max() < 1e-7


# ---- extract_weights ----

def test_extract_uniform_g_terms():
    # symmetric unit caps and a uniform step give equal g on every edge
    edges = [(0, 1, 1.0, 1.0), (0, 1, 1.0, 1.0), (0, 1, 1.0, 1.0)]
    g = build_graph(2, edges, 0, 1, 1.0)
    fhat = np.full(3, 0.05)
    W, p = 2.0, 4
    ch = extract_weights(g, np.zeros(3), fhat, W, p)
    q = p / (p - 1.0)
    expected = W * 3.0 ** (-1.0 / q)
    np.testing.assert_allclose(ch.r_prime, expected, rtol=1e-12)


def test_extract_single_nonzero_concentrates():
    edges = [(0, 1, 1.0, 1.0), (0, 1, 1.0, 1.0)]
    g = build_graph(2, edges, 0, 1, 1.0)
    fhat = np.array([0.05, 0.0])
    ch = extract_weights(g, np.zeros(2), fhat, 3.0, 4)
    assert ch.r_prime[0] == pytest.approx(3.0, rel=1e-12)
    assert ch.r_prime[1] == 0.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_extract_dual_norm_identity(seed):
    g = small_instance(seed)
    rng = np.random.default_rng(seed + 50)
    fhat = rng.uniform(-0.03, 0.03, g.m)
    W, p = 1.7, 4
    ch = extract_weights(g, np.zeros(g.m), fhat, W, p)
    q = p / (p - 1.0)
    norm_q = float(np.power(ch.r_prime, q).sum()) ** (1.0 / q)
    assert norm_q == pytest.approx(W, abs=1e-12)


def test_extract_coupling_preserving_form():
    g = small_instance(4)
    rng = np.random.default_rng(99)
    f = rng.uniform(-0.05, 0.05, g.m)
    fhat = rng.uniform(-0.02, 0.02, g.m)
    ch = extract_weights(g, f, fhat, 2.0, 4)
    rc = residual_caps(g, f)
    np.testing.assert_allclose(ch.w_prime_fwd / rc.fwd,
                               ch.w_prime_bwd / rc.bwd, rtol=1e-10, atol=1e-15)
    # on edges oriented u_hat+ <= u_hat- the raw increases read
    # r' * u_hat+^2 and r' * u_hat+ u_hat-
    sel = rc.fwd <= rc.bwd
    np.testing.assert_allclose(ch.w_prime_fwd[sel],
                               ch.r_prime[sel] * rc.fwd[sel] ** 2, rtol=1e-12)
    np.testing.assert_allclose(ch.w_prime_bwd[sel],
                               ch.r_prime[sel] * rc.fwd[sel] * rc.bwd[sel],
                               rtol=1e-12)


def test_extract_degenerate_zero_step():
    g = small_instance(0)
    with pytest.raises(DegenerateStep):
        extract_weights(g, np.zeros(g.m), np.zeros(g.m), 1.0, 2)


# ---- reduce_weights ----

def test_reduce_hand_example():
    # a+ = 2, a- = 0.5 with denominators 0.5 and 2: d = 1.5, w''+ = 0.75
    g = one_edge(0.5, 2.0)
    wrf, wrb = reduce_weights(g, np.zeros(1), np.zeros(1),
                              (np.array([1.0]), np.array([1.0])))
    assert wrf[0] == pytest.approx(0.75, abs=1e-15)
    assert wrb[0] == 0.0
    assert wrf[0] / 0.5 - wrb[0] / 2.0 == pytest.approx(1.5, abs=1e-15)


def test_reduce_balanced_gives_zero():
    g = one_edge(0.5, 2.0)
    wrf, wrb = reduce_weights(g, np.zeros(1), np.zeros(1),
                              (np.array([0.5]), np.array([2.0])))
    assert wrf[0] == 0.0 and wrb[0] == 0.0


def test_reduce_zero_input():
    g = one_edge()
    wrf, wrb = reduce_weights(g, np.zeros(1), np.zeros(1),
                              (np.zeros(1), np.zeros(1)))
    assert wrf[0] == 0.0 and wrb[0] == 0.0


@given(up=st.floats(0.2, 3.0), um=st.floats(0.2, 3.0),
       wp=st.floats(0.0, 5.0), wm=st.floats(0.0, 5.0),
       frac=st.floats(-0.09, 0.09))
@settings(max_examples=200, deadline=None)
def test_reduce_identity_and_minimality(up, um, wp, wm, frac):
    g = one_edge(up, um)
    fhat = np.array([frac * min(up, um)])
    w_prime = (np.array([wp]), np.array([wm]))
    wrf, wrb = reduce_weights(g, np.zeros(1), fhat, w_prime)
    uf = up - fhat[0]
    ub = um + fhat[0]
    d_raw = wp / uf - wm / ub
    d_red = wrf[0] / uf - wrb[0] / ub
    assert d_red == pytest.approx(d_raw, abs=1e-12)
    assert wrf[0] >= 0.0 and wrb[0] >= 0.0
    assert min(wrf[0], wrb[0]) == 0.0
    assert wrf[0] + wrb[0] <= wp + wm + 1e-12


# ---- weighted_progress_step ----

def test_delta_formula_example():
    # gap 100 at m = 1e4, eta = 1/6: the schedule gives ~9.283e-4
    m, eta, gap = 10_000, 1.0 / 6.0, 100.0
    delta = gap / (5000.0 * m ** (0.5 - eta))
    assert delta == pytest.approx(9.283e-4, rel=1e-4)


def test_pnorm_weight_nominal_example():
    assert pnorm_weight_nominal(64, 1.0 / 6.0) == pytest.approx(64.0, rel=1e-12)


def test_weighted_step_advances_and_stays_coupled():
    g = small_instance(11)
    st0 = fresh_state(g)
    cfg = SolverConfig(mode="weighted", weight_budget_coeff=10.0)
    st1, change, step = weighted_progress_step(st0, cfg)
    assert st1.F == pytest.approx(st0.F + step.delta, rel=1e-15)
    assert st1.iteration == 1
    assert st1.w.norm1 >= st0.w.norm1
    res = coupling_residual(g, st1.w, st1.f, st1.y)
    assert np.abs(res).max() <= coupling_tolerance(st1.w, g.m)
    eta = default_eta(g.m, 1.0)
    assert np.abs(step.fhat).max() <= 9.0 * g.m ** (-2.0 * eta)
    assert max(step.rho_fwd.max(), step.rho_bwd.max()) <= 0.1 + 1e-12


def test_weighted_step_chain_keeps_invariants():
    g = small_instance(12)
    state = fresh_state(g)
    cfg = SolverConfig(mode="weighted", weight_budget_coeff=10.0)
    warm = None
    for _ in range(8):
        state, change, step = weighted_progress_step(state, cfg, warm=warm)
        warm = step.fhat
        assert (np.minimum(change.w_red_fwd, change.w_red_bwd) == 0.0).all()
        assert state.w.norm1 <= 3.0 * g.m
        res = coupling_residual(g, state.w, state.f, state.y)
        assert np.abs(res).max() <= coupling_tolerance(state.w, g.m)


def test_weighted_step_budget_guard():
    g = small_instance(13)
    state = fresh_state(g)
    cfg = SolverConfig(mode="weighted", weight_budget_coeff=1e-12)
    with pytest.raises(WeightBudgetExceeded):
        weighted_progress_step(state, cfg)


# ---- sandwich helpers ----

def test_edge_value_zero():
    es = EdgeState(1.0, 1.0, 1.0, 1.0)
    assert edge_value(es, 0.0, 4) == 0.0


def test_sandwich_zero_displacement():
    es = EdgeState(1.0, 1.5, 0.8, 1.2)
    lo, up, act = sandwich_bounds(es, 0.02, 0.0, 4, constants=(-1.0, 1.0))
    assert lo == pytest.approx(act, abs=1e-15)
    assert up == pytest.approx(act, abs=1e-15)


def test_sandwich_unit_edge_ordering():
    # spec'd smoke point, checked with the calibrated config constants
    es = EdgeState(1.0, 1.0, 1.0, 1.0)
    lo, up, act = sandwich_bounds(es, 0.0, 0.05, 4)
    assert lo <= act <= up


@given(seed=st.integers(0, 10_000), p=st.sampled_from([2, 4, 6, 8]))
@settings(max_examples=150, deadline=None)
def test_sandwich_ordering_calibrated_constants(seed, p):
    # samples drawn from the calibration sweep's documented domain
    rng = np.random.default_rng(seed)
    uf, ub = np.exp(rng.uniform(np.log(0.3), np.log(4.0), 2))
    wf, wb = np.exp(rng.uniform(np.log(0.1), np.log(4.0), 2))
    es = EdgeState(float(uf), float(ub), float(wf), float(wb))
    ell = min(uf, ub) / 10.0
    fpos = float(rng.uniform(-0.8, 0.8) * ell)
    floor = 1e-3 * min(uf, ub)
    delta = floor + float(rng.uniform(0.0, 1.0) ** 3) * (ell - fpos - floor)
    lo, up, act = sandwich_bounds(es, fpos, delta, p)
    scale = 1.0 + abs(act)
    assert lo <= act + 1e-11 * scale
    assert act <= up + 1e-11 * scale


def test_power_step_p2_exact_constant_half():
    # (x+d)^2 - x^2 - 2xd = d^2 = 0.5 * (x^0 d^2 + d^2) identically
    for x, d in [(0.3, 0.1), (-1.2, 0.7), (0.0, 0.4)]:
        lo, up, act = power_step_bounds(x, d, 2, constants=(0.5, 0.5))
        assert lo == pytest.approx(act, rel=1e-12, abs=1e-15)
        assert up == pytest.approx(act, rel=1e-12, abs=1e-15)


@given(x=st.floats(-2.0, 2.0), d=st.floats(-1.0, 1.0),
       p=st.sampled_from([2, 4, 6, 8]))
@settings(max_examples=200, deadline=None)
def test_power_step_ordering_calibrated_constants(x, d, p):
    lo, up, act = power_step_bounds(x, d, p)
    scale = 1.0 + abs(act)
    assert lo <= act + 1e-12 * scale
    assert act <= up + 1e-12 * scale
