import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prflow.barrier import (
    PotentialState,
    Weights,
    barrier_gradient,
    barrier_value,
    box_radius,
    coupling_residual,
    coupling_tolerance,
    decrement_value,
    duality_gap,
    g_terms,
    potential_state,
    potential_value,
    quad_ext_eval,
    well_coupled,
)
from prflow.errors import InfeasibleFlow, InvalidParams
from prflow.graph import build_graph, residual_caps
from prflow.harness import generate_instance


def one_edge(up=1.0, um=1.0):
    return build_graph(2, [(0, 1, up, um)], s=0, t=1, cap_bound=max(up, um))


def unit_weights(g):
    return Weights(np.ones(g.m), np.ones(g.m))


def test_weights_reject_nonpositive():
    with pytest.raises(InvalidParams):
        Weights(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
    with pytest.raises(InvalidParams):
        Weights(np.array([1.0]), np.array([-2.0]))


def test_weights_norm1():
    w = Weights(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
    assert w.norm1 == 4.0


def test_barrier_value_zero_flow_unit_caps():
    g = one_edge()
    assert barrier_value(g, unit_weights(g), np.zeros(1)) == 0.0


def test_barrier_value_half_flow():
    g = one_edge()
    v = barrier_value(g, unit_weights(g), np.array([0.5]))
    assert v == pytest.approx(-(np.log(0.5) + np.log(1.5)), abs=1e-10)
    assert v == pytest.approx(0.28768, abs=5e-6)


def test_barrier_diverges_toward_capacity():
    g = one_edge()
    w = unit_weights(g)
    vals = [barrier_value(g, w, np.array([f])) for f in (0.9, 0.99, 0.999)]
    assert vals[0] < vals[1] < vals[2]
    with pytest.raises(InfeasibleFlow):
        barrier_value(g, w, np.array([1.0]))


def test_barrier_gradient_closed_form():
    g = one_edge(1.0, 2.0)
    w = Weights(np.array([3.0]), np.array([5.0]))
    f = np.array([0.25])
    grad = barrier_gradient(g, w, f)
    assert grad[0] == pytest.approx(3.0 / 0.75 - 5.0 / 2.25)


def test_potential_zero_at_zero_flow_symmetric():
    g = generate_instance("unit-random", 8, 15, seed=0)
    assert potential_value(g, unit_weights(g), np.zeros(g.m)) == pytest.approx(0.0, abs=1e-12)


def test_potential_equals_m_log2_when_gap_is_m_and_barrier_zero():
    # hand-built single edge: f=0.5, u+ = 0.5 + (sqrt(2)-1), u- = (sqrt(2)+1) - 0.5
    # gives phi_w = 0 and gap = 1 = m, so the potential is exactly m log 2
    A = np.sqrt(2.0) - 1.0
    g = one_edge(0.5 + A, A + 2.0 - 0.5)
    w = unit_weights(g)
    f = np.array([0.5])
    assert barrier_value(g, w, f) == pytest.approx(0.0, abs=1e-12)
    assert duality_gap(g, w, f) == pytest.approx(1.0, abs=1e-12)
    assert potential_value(g, w, f) == pytest.approx(np.log(2.0), abs=1e-12)


@settings(deadline=None, max_examples=25)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_potential_matches_independent_recomputation(seed):
    rng = np.random.default_rng(seed)
    g = generate_instance("unit-random", 6, 14, seed=seed)
    w = Weights(rng.uniform(0.5, 2.0, g.m), rng.uniform(0.5, 2.0, g.m))
    f = rng.uniform(-0.3, 0.3, g.m)
    up, um = g.cap_fwd - f, g.cap_bwd + f
    grad = w.fwd / up - w.bwd / um
    gap = float(f @ grad)
    if gap < 0:
        f = np.zeros(g.m)
        up, um = g.cap_fwd - f, g.cap_bwd + f
        grad = w.fwd / up - w.bwd / um
        gap = 0.0
    direct = g.m * np.log(1 + gap / g.m) - float(
        w.fwd @ np.log(up) + w.bwd @ np.log(um))
    assert potential_value(g, w, f) == pytest.approx(direct, abs=1e-12, rel=1e-12)


def test_potential_rejects_clearly_negative_gap():
    # force a negative gap with asymmetric weights pulling against the flow
    g = one_edge(2.0, 2.0)
    w = Weights(np.array([0.1]), np.array([10.0]))
    f = np.array([0.5])
    assert duality_gap(g, w, f) < -0.1
    with pytest.raises(InvalidParams):
        potential_value(g, w, f)


def test_potential_state_slack_and_gap():
    g = generate_instance("unit-random", 6, 12, seed=3)
    w = unit_weights(g)
    f = np.full(g.m, 0.2)
    ps = potential_state(g, w, f, np.zeros(g.n))
    assert isinstance(ps, PotentialState)
    assert np.allclose(ps.slack, -barrier_gradient(g, w, f))
    assert ps.gap == pytest.approx(-(f @ ps.slack))


# ---- quadratic extension ----

def neglog1m_spec(x):
    # b(x) = -log(1-x) with derivatives, the spec function used by hand checks
    return -np.log1p(-x), 1.0 / (1.0 - x), 1.0 / (1.0 - x) ** 2


def test_quad_ext_identity_inside_box():
    x = np.array([-0.05, 0.0, 0.09])
    v, d1, d2 = quad_ext_eval(neglog1m_spec, 0.1, x)
    bv, b1, b2 = neglog1m_spec(x)
    assert np.allclose(v, bv) and np.allclose(d1, b1) and np.allclose(d2, b2)


def test_quad_ext_hand_value_outside_box():
    v, d1, d2 = quad_ext_eval(neglog1m_spec, 0.1, np.array([0.2]))
    b, b1, b2 = (float(a[0]) for a in neglog1m_spec(np.array([0.1])))
    expected = b + b1 * 0.1 + 0.5 * b2 * 0.01
    assert v[0] == pytest.approx(expected, rel=1e-12)
    assert v[0] == pytest.approx(0.22265, abs=1e-5)
    assert d2[0] == pytest.approx(b2)


@pytest.mark.parametrize("side", [1.0, -1.0])
def test_quad_ext_c2_at_knot(side):
    ell = 0.1
    h = 1e-6
    knot = side * ell
    for probe in (0, 1, 2):
        lo = quad_ext_eval(neglog1m_spec, ell, np.array([knot - h]))[probe][0]
        hi = quad_ext_eval(neglog1m_spec, ell, np.array([knot + h]))[probe][0]
        assert hi - lo == pytest.approx(0.0, abs=1e-5)


# ---- decrement ----

def test_decrement_zero_step():
    g = generate_instance("unit-random", 6, 12, seed=1)
    w = unit_weights(g)
    value, grad, hess = decrement_value(g, w, np.zeros(g.m), np.zeros(g.m))
    assert value == 0.0
    assert np.abs(grad).max() == 0.0
    assert (hess > 0).all()


def test_decrement_symmetric_edge_inside_box():
    g = one_edge()
    value, _, _ = decrement_value(g, unit_weights(g), np.zeros(1), np.array([0.05]))
    assert value == pytest.approx(-np.log(1 - 0.0025), rel=1e-10)
    assert value == pytest.approx(0.0025031, abs=5e-7)


def test_decrement_outside_box_taylor_value():
    g = one_edge()
    value, _, _ = decrement_value(g, unit_weights(g), np.zeros(1), np.array([0.15]))
    assert value == pytest.approx(0.0227276, abs=5e-7)


def test_decrement_taylor_pieces_match_spec_constants():
    b = -np.log(1 - 0.01)
    b1 = 0.2 / 0.99
    b2 = 2.02 / 0.9801
    assert b == pytest.approx(0.0100503, abs=5e-8)
    assert b1 == pytest.approx(0.20202, abs=5e-6)
    assert b2 == pytest.approx(2.061014, abs=5e-7)
    assert b + b1 * 0.05 + 0.5 * b2 * 0.0025 == pytest.approx(0.0227276, abs=5e-8)


def _fd_check(func, x0, h, rel):
    # central differences of a scalar map built from per-edge sums
    v0, g0, h0 = func(x0)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = h
        vp = func(x0 + e)[0]
        vm = func(x0 - e)[0]
        fd1 = (vp - vm) / (2 * h)
        fd2 = (vp - 2 * v0 + vm) / (h * h)
        scale1 = max(1e-4, abs(g0[i]))
        scale2 = max(1e-2, abs(h0[i]))
        assert abs(fd1 - g0[i]) <= rel * scale1, (i, fd1, g0[i])
        assert abs(fd2 - h0[i]) <= 100 * rel * scale2, (i, fd2, h0[i])


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_decrement_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    g = generate_instance("unit-random", 5, 10, seed=seed)
    w = Weights(rng.uniform(0.5, 2.0, g.m), rng.uniform(0.5, 2.0, g.m))
    f = rng.uniform(-0.2, 0.2, g.m)
    # mix of in-box and out-of-box coordinates
    fhat = rng.uniform(-0.3, 0.3, g.m)
    _fd_check(lambda x: decrement_value(g, w, f, x), fhat, 1e-6, 1e-5)


@settings(deadline=None, max_examples=30)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_decrement_hessian_envelope_inside_box(seed):
    rng = np.random.default_rng(seed)
    g = generate_instance("unit-random", 6, 12, seed=seed)
    w = Weights(rng.uniform(0.5, 2.0, g.m), rng.uniform(0.5, 2.0, g.m))
    f = rng.uniform(-0.2, 0.2, g.m)
    rc = residual_caps(g, f)
    ell = box_radius(rc.fwd, rc.bwd)
    fhat = rng.uniform(-1.0, 1.0, g.m) * ell
    _, _, hess = decrement_value(g, w, f, fhat)
    hess0 = w.fwd / rc.fwd**2 + w.bwd / rc.bwd**2
    ratio = hess / hess0
    assert (ratio >= 0.81).all() and (ratio <= 1.24).all()


def test_decrement_hessian_constant_beyond_box():
    g = one_edge()
    w = unit_weights(g)
    _, _, h_at_2 = decrement_value(g, w, np.zeros(1), np.array([2.0]))
    _, _, h_at_9 = decrement_value(g, w, np.zeros(1), np.array([9.0]))
    assert h_at_2[0] == pytest.approx(h_at_9[0], rel=1e-14)


# ---- g terms ----

def test_g_zero_step():
    g = one_edge()
    assert g_terms(g, np.zeros(1), np.zeros(1))[0] == 0.0


def test_g_symmetric_unit_value():
    g = one_edge()
    val = g_terms(g, np.zeros(1), np.array([0.1]))[0]
    assert val == pytest.approx(abs(np.log(0.9) + np.log(1.1)), rel=1e-10)
    assert val == pytest.approx(0.0100503, abs=5e-8)


def test_g_asymmetric_frozen_value():
    g = one_edge(0.5, 1.0)
    val = g_terms(g, np.zeros(1), np.array([0.04]))[0]
    direct = abs(0.25 * np.log(1 - 0.08) + 0.5 * np.log(1.04))
    assert val == pytest.approx(direct, rel=1e-10)
    assert val == pytest.approx(0.0012350, abs=5e-8)


def test_g_orientation_normalization_is_a_flip():
    # swapping the capacity sides must mirror the step argument
    ga = one_edge(0.5, 1.0)
    gb = one_edge(1.0, 0.5)
    x = np.array([0.03])
    assert g_terms(ga, np.zeros(1), x)[0] == pytest.approx(
        g_terms(gb, np.zeros(1), -x)[0], rel=1e-12)


@settings(deadline=None, max_examples=50)
@given(seed=st.integers(min_value=0, max_value=10_000))
def test_g_sandwich_inside_box(seed):
    rng = np.random.default_rng(seed)
    g = generate_instance("unit-random", 6, 12, seed=seed)
    f = rng.uniform(-0.2, 0.2, g.m)
    rc = residual_caps(g, f)
    ell = box_radius(rc.fwd, rc.bwd)
    fhat = rng.uniform(-1.0, 1.0, g.m) * ell
    vals = g_terms(g, f, fhat)
    x2 = fhat * fhat
    assert (vals >= 0.45 * x2 - 1e-15).all()
    assert (vals <= 2.0 * x2 + 1e-15).all()


def test_g_nonnegative_everywhere_including_outside_box():
    g = one_edge(0.7, 1.3)
    xs = np.linspace(-5.0, 5.0, 401)
    for x in xs:
        assert g_terms(g, np.zeros(1), np.array([x]))[0] >= 0.0


# ---- coupling ----

def test_coupling_zero_at_capacity_proportional_weights():
    g = generate_instance("unit-random", 8, 16, U=3, seed=5)
    w = Weights(g.cap_fwd.copy(), g.cap_bwd.copy())
    res = coupling_residual(g, w, np.zeros(g.m), np.zeros(g.n))
    assert np.abs(res).max() == 0.0
    assert well_coupled(g, w, np.zeros(g.m), np.zeros(g.n))


def test_coupling_zero_symmetric_unit():
    g = generate_instance("unit-random", 8, 16, seed=6)
    res = coupling_residual(g, unit_weights(g), np.zeros(g.m), np.zeros(g.n))
    assert np.abs(res).max() == 0.0


def test_coupling_linear_in_duals():
    g = build_graph(3, [(0, 1, 1, 1), (1, 2, 1, 1)], s=0, t=2, cap_bound=1)
    w = unit_weights(g)
    y = np.zeros(3)
    base = coupling_residual(g, w, np.zeros(2), y)
    y2 = y.copy()
    y2[1] += 1e-3
    res = coupling_residual(g, w, np.zeros(2), y2)
    # vertex 1 is head of edge 0 and tail of edge 1
    assert res[0] - base[0] == pytest.approx(1e-3, rel=1e-12)
    assert res[1] - base[1] == pytest.approx(-1e-3, rel=1e-12)


def test_coupling_tolerance_scales_with_weight_mass():
    g = generate_instance("unit-random", 6, 12, seed=7)
    w1 = unit_weights(g)
    w2 = Weights(np.full(g.m, 10.0), np.full(g.m, 10.0))
    assert coupling_tolerance(w2, g.m) > coupling_tolerance(w1, g.m)
    assert coupling_tolerance(w1, g.m) == pytest.approx(1e-8 * (1 + w1.norm1 / g.m))
