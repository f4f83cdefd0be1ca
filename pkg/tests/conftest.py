"""Shared synthetic problems."""

import numpy as np
import pytest

from evopt.events import EventStream
from evopt.geometry import Intrinsics, Pointmap, Pose, se3_exp
from evopt.objective import PairEdge, Weights, evaluate
from evopt.pipeline import PatchConfig, build_inputs, init_state, make_edges, synthesize
from evopt.solver import gradient, param_size, retract
from evopt.sync import SensorStreams
from evopt.synth import (DepthModel, SceneSpec, orbit_trajectory, perturb, render_scene,
                         simulate_events)


class Problem:
    """Everything needed to evaluate or optimise one synthetic instance."""

    def __init__(self, seq, edges, gt_state, inputs, times):
        self.seq = seq
        self.edges = edges
        self.gt_state = gt_state
        self.inputs = inputs
        self.times = times

    @property
    def spec(self):
        return self.seq.spec


def closed_loop_problem(quantum_divisor=8.0, weights=Weights()):
    """Three frames of slow constant-velocity motion over a relief surface.

    The motion is small so that the smoothness prior at ground truth sits
    well below 1e-6 after weighting.
    """
    W, H = 32, 24
    K = Intrinsics(28.0, 28.0, (W - 1) / 2, (H - 1) / 2)
    step = se3_exp([0.0005, -0.0008, 0.0003, 0.002, 0.001, 0.0005])
    P, traj = Pose.identity(), []
    for k in range(3):
        traj.append((0.05 * k, P))
        P = P @ step
    spec = SceneSpec(W, H, K, traj, seed=2,
                     depth_model=DepthModel("relief", offset=3.0, amplitude=0.2, wavelength=1.2))
    times = np.array([0.0, 0.05, 0.1])
    seq = synthesize(spec, times, quantum_divisor=quantum_divisor)
    edges = make_edges(seq.gt_depths, seq.gt_poses, [K], window=3)
    gt = init_state(seq.gt_poses, [K], seq.gt_depths, edges)
    inputs = build_inputs(seq.frames, gt, edges, weights, PatchConfig(half_width=4, nms_radius=3))
    return Problem(seq, edges, gt, inputs, times)


def fd_problem(n_frames=3):
    """n frames of 16x16 with noisy pointmaps and flows, evaluated away from
    the optimum so every term has a nonzero gradient."""
    K = Intrinsics(16.0, 16.0, 7.5, 7.5)
    spec = SceneSpec(16, 16, K, orbit_trajectory(3, 0.1, radius=0.3), seed=1,
                     depth_model=DepthModel("relief", offset=3.0, amplitude=0.2, wavelength=1.5))
    times = np.array([0.0, 0.05, 0.1])[:n_frames]
    seq = synthesize(spec, times)
    rng = np.random.default_rng(0)
    noisy = seq.gt_depths * np.exp(rng.normal(0, 0.02, seq.gt_depths.shape))
    edges = make_edges(noisy, seq.gt_poses, [K], window=3)
    gt = init_state(seq.gt_poses, [K], seq.gt_depths, edges)
    seq.frames.flows = {k: v + rng.normal(0, 0.3, v.shape) for k, v in seq.frames.flows.items()}
    inputs = build_inputs(seq.frames, gt, edges, Weights(), PatchConfig(half_width=3, nms_radius=2))
    state = perturb(gt, 0.02, 0.03, 0.01, seed=3)
    state.edge_log_scales = rng.normal(0, 0.05, state.n_edges)
    state.edge_poses = [P @ se3_exp(rng.normal(0, 0.02, 6)) for P in state.edge_poses]
    return Problem(seq, edges, state, inputs, times)


RECOVERY_SIZE = (48, 36)
SCENE_SCALE = 3.0  # mean depth of the relief surface, metres


def recovery_problem(seed, w_event=0.01, pm_noise=0.02, flow_noise=0.3):
    """Ten-frame sweep with noisy pairwise pointmaps and flows.

    Returns (problem, perturbed initial state).  Poses are perturbed by 2 deg
    rotation and 2% of the scene scale in translation.
    """
    W, H = RECOVERY_SIZE
    K = Intrinsics(40.0, 40.0, (W - 1) / 2, (H - 1) / 2)
    spec = SceneSpec(W, H, K, orbit_trajectory(10, 0.5, radius=0.4, seed=seed), seed=seed,
                     depth_model=DepthModel("relief", offset=3.0, amplitude=0.25, wavelength=1.2))
    times = np.linspace(0, 0.5, 10)
    seq = synthesize(spec, times)
    fr = seq.frames
    rng = np.random.default_rng(100 + seed)
    edges = make_edges(seq.gt_depths, seq.gt_poses, [K], window=10)
    if pm_noise:
        noisy = []
        for e in edges:
            aa, ba = e.pointmap_aa, e.pointmap_ba
            aa = Pointmap(aa.points * np.exp(rng.normal(0, pm_noise, aa.points.shape[:2]))[..., None],
                          aa.confidence)
            ba = Pointmap(ba.points + rng.normal(0, 3 * pm_noise, ba.points.shape), ba.confidence)
            noisy.append(PairEdge(e.frame_a, e.frame_b, aa, ba, e.pairwise_pose))
        edges = noisy
    if flow_noise:
        fr.flows = {k: v + rng.normal(0, flow_noise, v.shape) for k, v in fr.flows.items()}
    gt = init_state(seq.gt_poses, [K], seq.gt_depths, edges)
    inputs = build_inputs(fr, gt, edges, Weights(0.01, 0.01, w_event))
    init = perturb(gt, np.radians(2.0), 0.02 * SCENE_SCALE, 0.0, seed=seed)
    init.edge_poses = [init.poses[e.frame_a] for e in edges]
    return Problem(seq, edges, gt, inputs, times), init


@pytest.fixture(scope="session")
def closed_loop():
    return closed_loop_problem()


@pytest.fixture(scope="session")
def fd_instance():
    return fd_problem()


def static_problem(weights=Weights()):
    """A camera at rest over a plane at z = 2.

    Intrinsics and depth are exact binary fractions, so ground truth has an
    exactly zero loss and gradient (no events, zero flow, zero smoothness).
    """
    K = Intrinsics(16.0, 16.0, 9.5, 7.5)
    traj = [(0.0, Pose.identity()), (1.0, Pose.identity())]
    spec = SceneSpec(20, 16, K, traj, seed=4, depth_model=DepthModel("plane", offset=2.0))
    times = np.array([0.0, 0.5, 1.0])
    seq = synthesize(spec, times)
    edges = make_edges(seq.gt_depths, seq.gt_poses, [K], window=3)
    gt = init_state(seq.gt_poses, [K], seq.gt_depths, edges)
    inputs = build_inputs(seq.frames, gt, edges, weights)
    return Problem(seq, edges, gt, inputs, times)


def fd_relative_errors(state, inputs, depth_mode="pixel", h=1e-5, floor=1e-8):
    """(analytic gradient, central differences, per-coordinate relative error)."""
    _, g = gradient(state, inputs, depth_mode)
    n = param_size(state, depth_mode)
    fd = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        fp = evaluate(retract(state, e, depth_mode), inputs)[0].total
        fm = evaluate(retract(state, -e, depth_mode), inputs)[0].total
        fd[i] = (fp - fm) / (2 * h)
    rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return g, fd, rel


class Rig:
    """Synthetic camera + depth sensor + event sensor sharing one trajectory."""

    def __init__(self, spec, streams, pose_times):
        self.spec = spec
        self.streams = streams
        self.pose_times = pose_times


def make_rig(image_times, depth_times, relief=True, pose_keys=9, span=(0.0, 0.4), masks=None):
    W, H = 40, 30
    K = Intrinsics(32.0, 32.0, (W - 1) / 2, (H - 1) / 2)
    dm = (DepthModel("relief", offset=3.0, amplitude=0.2, wavelength=1.2) if relief
          else DepthModel("plane", normal=(0.1, -0.05, 1.0), offset=3.0))
    traj = orbit_trajectory(pose_keys, span[1] - span[0], radius=0.3)
    traj = [(span[0] + t, P) for t, P in traj]
    spec = SceneSpec(W, H, K, traj, seed=6, depth_model=dm)
    image_times = np.asarray(image_times, dtype=float)
    images = [render_scene(spec, t)[0] for t in image_times]
    depths = [render_scene(spec, t)[1] for t in depth_times]
    bounds = np.concatenate([[span[0]], image_times])
    events = EventStream.concatenate(
        [simulate_events(spec, a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a], W, H)
    pose_times = spec.times
    streams = SensorStreams(image_times, images, K, np.asarray(depth_times, float), depths, K,
                            pose_times, [P for _, P in traj], events, image_masks=masks)
    return Rig(spec, streams, pose_times)


# ---------------------------------------------------------------- acceptance report

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")
    config.stash[_CRITERIA] = {}


_CRITERIA = pytest.StashKey[dict]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    entry = item.config.stash[_CRITERIA].setdefault(number, {"title": title, "ok": True, "notes": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["notes"] += [str(v) for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    crit = config.stash.get(_CRITERIA, {})
    if not crit:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(crit):
        e = crit[n]
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
                                    + (f"  [{notes}]" if notes else ""))
