"""Assemble objective inputs (pair edges, event patches, flows) from frames,
events and an initial trajectory."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .events import EventStream, accumulate_patch, to_us
from .geometry import Intrinsics, Pointmap, Pose, camera_rays, motion_field
from .imaging import enhance, estimate_illumination, harris_corners, image_gradient, snr_map
from .objective import ObjectiveInputs, PairEdge, Patch, Weights
from .solver import build_pair_graph
from .state import GlobalState
from .synth import SceneSpec, linearized_quantum, render_scene, simulate_events

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchConfig:
    half_width: int = 7
    max_corners: int = 64
    harris_k: float = 0.04
    harris_sigma: float = 1.0
    nms_radius: int = 5
    max_motion_spread: float = 1.5
    snr_kernel: int = 5
    snr_epsilon: float = 1e-3
    use_illumination_fallback: bool = True


@dataclass
class Frames:
    """Per-frame inputs in a common resolution."""

    images: list
    times: np.ndarray
    depths: np.ndarray
    poses: list
    intrinsics: list
    events: EventStream | None = None
    flows: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    illumination: list | None = None


def synth_pointmaps(depth_a, depth_b, K_a: Intrinsics, K_b: Intrinsics, P_a: Pose, P_b: Pose):
    """Pointmaps of both views expressed in view a's camera frame."""
    Xa = camera_rays(*depth_a.shape, K_a) * depth_a[..., None]
    Xb = camera_rays(*depth_b.shape, K_b) * depth_b[..., None]
    Xba = (P_a.inverse() @ P_b).apply(Xb)
    ca = (depth_a > 0).astype(float)
    cb = (depth_b > 0).astype(float)
    return Pointmap(Xa, ca, "cam_a"), Pointmap(Xba, cb, "cam_a")


def make_edges(depths, poses, intrinsics, window: int = 10, stride: int = 1):
    """Pair edges over the sliding-window graph, pointmaps synthesised from
    depth and the relative poses of ``poses``; edge pose = pose of view a."""
    n = len(poses)
    graph = build_pair_graph(n, window, stride)
    K = (lambda i: intrinsics[0]) if len(intrinsics) == 1 else (lambda i: intrinsics[i])
    edges = []
    for a, b in graph.edges:
        pm_aa, pm_ba = synth_pointmaps(depths[a], depths[b], K(a), K(b), poses[a], poses[b])
        edges.append(PairEdge(a, b, pm_aa, pm_ba, poses[a], 1.0))
    return edges


def init_state(poses, intrinsics, depths, edges) -> GlobalState:
    return GlobalState.from_depths(poses, intrinsics, depths,
                                   [e.pairwise_pose for e in edges], [e.scale for e in edges])


def make_patches(frames: Frames, state: GlobalState, cfg: PatchConfig = PatchConfig()) -> list[Patch]:
    """Event patches at Harris corners of each frame towards the next one.

    Corners whose initial motion field varies by more than
    ``max_motion_spread`` pixels across the patch are dropped, as are
    patches that saw no events.
    """
    if frames.events is None:
        return []
    h = cfg.half_width
    patches = []
    for i in range(len(frames.images) - 1):
        img = np.asarray(frames.images[i], dtype=float)
        if cfg.use_illumination_fallback or frames.illumination is not None:
            L = frames.illumination[i] if frames.illumination is not None else estimate_illumination(img)
            lit = enhance(img, L)
        else:
            lit = img
        snr = snr_map(lit, cfg.snr_kernel, cfg.snr_epsilon)
        gray = lit[..., 0] if lit.ndim == 3 else lit
        corners = harris_corners(img if img.ndim == 2 else gray, cfg.harris_k, cfg.nms_radius,
                                 cfg.max_corners, border_margin=h, sigma=cfg.harris_sigma, snr=snr)
        grad = image_gradient(img if img.ndim == 2 else gray)
        mf = motion_field(state.depth(i), state.K(i), state.poses[i], state.K(i + 1), state.poses[i + 1])
        t0, t1 = to_us(frames.times[i]), to_us(frames.times[i + 1])
        for c in corners:
            rs, cs = slice(c.y - h, c.y + h + 1), slice(c.x - h, c.x + h + 1)
            du = mf.du[rs, cs]
            if not mf.valid[rs, cs].all():
                continue
            spread = float(np.max(du.max(axis=(0, 1)) - du.min(axis=(0, 1))))
            if spread > cfg.max_motion_spread:
                continue
            obs = accumulate_patch(frames.events, (c.x, c.y), h, t0, t1)
            if not obs.any():
                continue
            patches.append(Patch((c.x, c.y), h, obs, None, max(c.snr, 0.0), i, i + 1,
                                 grad[rs, cs].copy()))
    return patches


def build_inputs(frames: Frames, state: GlobalState, edges, weights: Weights = Weights(),
                 patch_cfg: PatchConfig = PatchConfig()) -> ObjectiveInputs:
    return ObjectiveInputs(list(edges), make_patches(frames, state, patch_cfg),
                           dict(frames.flows), dict(frames.masks), weights)


# ---------------------------------------------------------------- synthetic data

@dataclass
class SyntheticSequence:
    spec: SceneSpec
    frames: Frames
    gt_poses: list
    gt_depths: np.ndarray
    quanta: list


def synthesize(spec: SceneSpec, frame_times, mode: str = "linearized",
               quantum_divisor: float = 8.0, with_flows: bool = True) -> SyntheticSequence:
    """Render frames, depths, events between consecutive frames, and
    ground-truth flows/static masks for consecutive pairs."""
    frame_times = np.asarray(frame_times, dtype=float)
    imgs, depths, poses = [], [], []
    for t in frame_times:
        img, d, P = render_scene(spec, float(t))
        if not np.all(np.isfinite(d)):
            raise ValueError(f"surface not visible in every pixel at t={t}")
        imgs.append(img)
        depths.append(d)
        poses.append(P)
    depths = np.array(depths)
    streams, quanta = [], []
    for i in range(len(frame_times) - 1):
        t, tp = float(frame_times[i]), float(frame_times[i + 1])
        s = simulate_events(spec, t, tp, mode, quantum_divisor=quantum_divisor)
        streams.append(s)
        quanta.append(linearized_quantum(spec, t, tp, quantum_divisor))
    events = EventStream.concatenate(streams, spec.width, spec.height)
    flows, masks = {}, {}
    if with_flows:
        for i in range(len(frame_times) - 1):
            mf = motion_field(depths[i], spec.intrinsics, poses[i], spec.intrinsics, poses[i + 1])
            flows[(i, i + 1)] = mf.du
            masks[(i, i + 1)] = mf.valid
    frames = Frames(imgs, frame_times, depths, poses, [spec.intrinsics], events, flows, masks)
    return SyntheticSequence(spec, frames, poses, depths, quanta)
