import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fd_problem, fd_relative_errors, recovery_problem, static_problem
from evopt.geometry import Intrinsics, Pose
from evopt.objective import ObjectiveInputs, Weights, evaluate
from evopt.solver import (AdamState, DivergenceError, SolverConfig, adam_step, build_pair_graph,
                          gradient, optimize, param_size)
from evopt.state import GlobalState


def test_pair_graph_examples():
    assert build_pair_graph(3, 3, 1).edges == [(0, 1), (0, 2), (1, 2)]
    assert build_pair_graph(5, 2, 1).edges == [(0, 1), (1, 2), (2, 3), (3, 4)]
    with pytest.raises(ValueError):
        build_pair_graph(5, 1)


@given(st.integers(1, 40), st.integers(2, 15), st.integers(1, 4))
def test_pair_graph_counting(n, window, stride):
    g = build_pair_graph(n, window, stride)
    assert len(g.edges) == sum(min(window - 1, n - 1 - i) for i in range(0, n, stride))
    assert all(0 < b - a < window for a, b in g.edges)
    assert len(set(g.edges)) == len(g.edges)


def test_pair_graph_default_twenty():
    assert len(build_pair_graph(20, 10).edges) == sum(min(9, 19 - i) for i in range(20))


# ---------------------------------------------------------------- gradient

@pytest.mark.parametrize("mode", ["pixel", "frame"])
def test_gradient_matches_finite_differences_two_frames(mode):
    p = fd_problem(n_frames=2)
    _, _, rel = fd_relative_errors(p.gt_state, p.inputs, mode)
    assert rel.max() < 1e-4


def test_gradient_event_weight_linearity(fd_instance):
    p = fd_instance
    base = p.inputs

    def grad_with(w):
        inputs = ObjectiveInputs(base.edges, base.patches, base.flows, base.masks,
                                 Weights(0.01, 0.01, w))
        return gradient(p.gt_state, inputs)[1]

    g0, g1, g2 = grad_with(0.0), grad_with(0.01), grad_with(0.02)
    assert np.abs(g1 - g0).max() > 0
    np.testing.assert_allclose(g2 - g0, 2 * (g1 - g0), rtol=1e-9, atol=1e-15)


def test_gradient_vanishes_at_static_minimum():
    p = static_problem()
    bd, g = gradient(p.gt_state, p.inputs)
    assert bd.total < 1e-12
    assert np.linalg.norm(g) < 1e-6


def test_gradient_reports_nonfinite_term(fd_instance):
    s = fd_instance.gt_state.copy()
    s.log_depths = s.log_depths.copy()
    s.log_depths[0, 0, 0] = np.inf
    with pytest.raises(FloatingPointError, match="align"):
        gradient(s, fd_instance.inputs)


# ---------------------------------------------------------------- Adam

def scalar_state():
    """One frame with a single depth pixel: 6 pose + 1 depth parameters."""
    return GlobalState([Pose.identity()], [Intrinsics(1.0, 1.0, 0.0, 0.0)], np.zeros((1, 1, 1)))


def test_adam_first_step_hand_value():
    s = scalar_state()
    adam = AdamState.zeros(param_size(s))
    g = np.zeros(7)
    g[6] = 1.0
    s1, adam1 = adam_step(s, adam, g)
    assert adam1.step == 1
    assert s1.log_depths[0, 0, 0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)
    np.testing.assert_array_equal(s1.poses[0].matrix(), np.eye(4))


def test_adam_recurrence_two_steps():
    s = scalar_state()
    adam = AdamState.zeros(7)
    g = np.zeros(7)
    g[6] = 0.3
    s1, adam = adam_step(s, adam, g)
    s2, adam = adam_step(s1, adam, g)
    # direct recurrence with beta1 = 0.9, beta2 = 0.999
    m1, v1 = 0.1 * 0.3, 0.001 * 0.09
    m2, v2 = 0.9 * m1 + 0.1 * 0.3, 0.999 * v1 + 0.001 * 0.09
    step2 = -0.01 * (m2 / (1 - 0.9 ** 2)) / (np.sqrt(v2 / (1 - 0.999 ** 2)) + 1e-8)
    assert s2.log_depths[0, 0, 0] - s1.log_depths[0, 0, 0] == pytest.approx(step2, abs=1e-16)
    assert adam.m[6] == pytest.approx(m2) and adam.v[6] == pytest.approx(v2)
    assert np.all(adam.v >= 0)


def test_adam_zero_gradient_keeps_state():
    s = scalar_state()
    s2, adam = adam_step(s, AdamState.zeros(7), np.zeros(7))
    assert adam.step == 1
    assert s2.poses[0] is s.poses[0]
    np.testing.assert_array_equal(s2.log_depths, s.log_depths)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(scalar_state(), AdamState.zeros(7), np.zeros(3))


# ---------------------------------------------------------------- optimize

def test_iters_must_be_positive(fd_instance):
    with pytest.raises(ValueError):
        optimize(fd_instance.gt_state, fd_instance.inputs, SolverConfig(iters=0))
    with pytest.raises(ValueError):
        optimize(fd_instance.gt_state, fd_instance.inputs, SolverConfig(iters=1, depth_mode="voxel"))


def test_optimize_is_deterministic(fd_instance):
    cfg = SolverConfig(iters=15, log_every=0)
    _, a = optimize(fd_instance.gt_state, fd_instance.inputs, cfg)
    _, b = optimize(fd_instance.gt_state, fd_instance.inputs, cfg)
    assert len(a) == 16
    assert [x.total for x in a] == [x.total for x in b]


def test_ground_truth_is_fixed_point_on_static_scene():
    p = static_problem()
    fin, trace = optimize(p.gt_state, p.inputs, SolverConfig(log_every=0))
    assert len(trace) == 301
    assert trace[0].total < 1e-6 and trace[-1].total < 1e-6
    assert trace[-1].total <= trace[0].total
    for P, Q in zip(fin.poses, p.gt_state.poses):
        np.testing.assert_allclose(P.matrix(), Q.matrix(), atol=1e-12)
    np.testing.assert_allclose(fin.log_depths, p.gt_state.log_depths, atol=1e-12)


def test_gradient_small_at_moving_ground_truth(closed_loop):
    inputs = ObjectiveInputs(closed_loop.edges, weights=Weights(0.0, 0.0, 0.0))
    bd, g = gradient(closed_loop.gt_state, inputs)
    assert bd.total < 1e-20
    assert np.linalg.norm(g) < 1e-6


def test_adam_amplifies_roundoff_near_minimum(closed_loop):
    """With gradients far below eps the first step is lr * g / eps, i.e. a
    million times g; the curvature then turns that into lr-sized steps.  Only
    an exactly stationary state is a fixed point."""
    inputs = ObjectiveInputs(closed_loop.edges, weights=Weights(0.0, 0.0, 0.0))
    _, trace = optimize(closed_loop.gt_state, inputs, SolverConfig(iters=3, log_every=0))
    assert trace[0].total < 1e-20
    assert trace[-1].total > 1e-6


def test_depth_positive_and_quaternions_unit(fd_instance):
    fin, trace = optimize(fd_instance.gt_state, fd_instance.inputs,
                          SolverConfig(iters=20, lr=0.05, log_every=0))
    assert np.all(fin.depth(0) > 0)
    for P in fin.poses + fin.edge_poses:
        assert np.linalg.norm(P.rotation) == pytest.approx(1.0, abs=1e-12)
    assert trace[-1].total < trace[0].total
    assert fin.edge_log_scales.mean() == pytest.approx(0.0, abs=1e-12)


def test_frame_depth_mode_keeps_relief(fd_instance):
    fin, _ = optimize(fd_instance.gt_state, fd_instance.inputs,
                      SolverConfig(iters=5, depth_mode="frame", log_every=0))
    ratio = fin.log_depths - fd_instance.gt_state.log_depths
    # one shared offset per frame
    np.testing.assert_allclose(ratio, ratio[:, :1, :1] * np.ones_like(ratio), atol=1e-12)


def test_divergence_carries_last_state(fd_instance):
    s = fd_instance.gt_state.copy()
    s.log_depths = np.full_like(s.log_depths, 800.0)  # exp overflows
    with pytest.raises(DivergenceError) as info:
        optimize(s, fd_instance.inputs, SolverConfig(iters=3, log_every=0))
    assert info.value.state is not None and info.value.trace == []


def test_evaluate_matches_gradient_breakdown(fd_instance):
    a, _ = evaluate(fd_instance.gt_state, fd_instance.inputs)
    b, _ = gradient(fd_instance.gt_state, fd_instance.inputs)
    assert a == b


def test_loss_trend_nonincreasing_noiseless():
    """50-iteration moving average of the total never rises on exact inputs."""
    p, init = recovery_problem(0, pm_noise=0.0, flow_noise=0.0)
    _, trace = optimize(init, p.inputs, SolverConfig(iters=300, log_every=0))
    total = np.array([bd.total for bd in trace])
    ma = np.convolve(total, np.ones(50) / 50, mode="valid")
    rise = np.diff(ma).max()
    assert rise <= 1e-12 * ma[0], f"moving average rises by {rise:.3g}"
