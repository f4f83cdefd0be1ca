"""Synthetic textured scenes, camera trajectories and event simulation.

Frames are rendered by ray casting a textured surface, so ground-truth depth
and poses are exact.  ``linearized`` events follow the brightness-increment
model used by the objective (gradient times motion); ``threshold`` events
fire whenever a pixel's log intensity moves by the contrast threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventStream, to_us
from .geometry import (Intrinsics, Pose, camera_rays, interpolate_trajectory, motion_field,
                       se3_exp, se3_log)
from .imaging import image_gradient
from .objective import predicted_increment
from .state import GlobalState

LOG_EPS = 1e-3
# relative twists below this norm count as no motion
STATIC_TWIST = 1e-12


class SceneSpecError(ValueError):
    def __init__(self, field_name: str, msg: str):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass(frozen=True)
class TextureSpec:
    checker_size: float = 0.25
    checker_amp: float = 0.2
    checker_sharpness: float = 3.0
    noise_amp: float = 0.15
    noise_components: int = 12
    noise_min_wavelength: float = 0.08
    noise_max_wavelength: float = 0.6
    gradient_amp: float = 0.05


@dataclass(frozen=True)
class DepthModel:
    """``plane``: points X with normal . X = offset.  ``relief``: the height
    field z = offset + amplitude * sin(2 pi x / wavelength) * sin(2 pi y / wavelength)."""

    kind: str = "plane"
    normal: tuple = (0.0, 0.0, 1.0)
    offset: float = 3.0
    amplitude: float = 0.0
    wavelength: float = 1.0


@dataclass(frozen=True, eq=False)
class SceneSpec:
    width: int
    height: int
    intrinsics: Intrinsics
    trajectory: list
    texture: TextureSpec = field(default_factory=TextureSpec)
    depth_model: DepthModel = field(default_factory=DepthModel)
    contrast_C: float = 0.2
    seed: int = 0
    frame_times: tuple = ()

    def __post_init__(self):
        if not self.contrast_C > 0:
            raise SceneSpecError("contrast_C", "must be positive")
        if self.width < 1 or self.height < 1:
            raise SceneSpecError("width/height", "must be positive")
        times = [t for t, _ in self.trajectory]
        if len(times) < 1:
            raise SceneSpecError("trajectory", "needs at least one sample")
        if np.any(np.diff(times) <= 0):
            raise SceneSpecError("trajectory", "timestamps must be strictly increasing")
        if self.depth_model.kind not in ("plane", "relief"):
            raise SceneSpecError("depth_model.kind", f"unknown kind {self.depth_model.kind!r}")

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.trajectory], dtype=float)

    def pose_at(self, t: float) -> Pose:
        times = self.times
        if len(times) == 1:
            if t != times[0]:
                raise IndexError(f"time {t} outside trajectory span")
            return self.trajectory[0][1]
        return interpolate_trajectory(times, [P for _, P in self.trajectory], t)

    # -------------------------------------------------------------- texture

    def _noise_params(self):
        rng = np.random.default_rng(self.seed)
        tx = self.texture
        n = tx.noise_components
        lam = np.exp(rng.uniform(np.log(tx.noise_min_wavelength), np.log(tx.noise_max_wavelength), n))
        ang = rng.uniform(0, np.pi, n)
        k = 2 * np.pi / lam[:, None] * np.stack([np.cos(ang), np.sin(ang)], 1)
        phase = rng.uniform(0, 2 * np.pi, n)
        amp = rng.uniform(0.5, 1.0, n)
        amp = amp / amp.sum()
        return k, phase, amp

    def texture_at(self, x, y) -> np.ndarray:
        """Reflectance at world (x, y); smooth and strictly inside (0, 1)."""
        tx = self.texture
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        s = tx.checker_sharpness
        cs = tx.checker_size
        checker = np.tanh(s * np.sin(np.pi * x / cs)) * np.tanh(s * np.sin(np.pi * y / cs))
        k, phase, amp = self._noise_params()
        noise = np.zeros_like(x)
        for kk, ph, a in zip(k, phase, amp):
            noise += a * np.sin(kk[0] * x + kk[1] * y + ph)
        ramp = np.tanh(0.5 * x)
        return 0.5 + tx.checker_amp * checker + tx.noise_amp * noise + tx.gradient_amp * ramp


def _relief_height(dm: DepthModel, x, y):
    w = 2 * np.pi / dm.wavelength
    return dm.offset + dm.amplitude * np.sin(w * x) * np.sin(w * y)


def raycast(spec: SceneSpec, P: Pose, pixels=None):
    """Depth (camera z) and world points for pixel coordinates (..., 2).

    Depth is NaN where the surface is not hit in front of the camera.
    """
    K = spec.intrinsics
    if pixels is None:
        rays = camera_rays(spec.height, spec.width, K)
    else:
        u = np.asarray(pixels, dtype=float)
        rays = np.stack([(u[..., 0] - K.cx) / K.fx, (u[..., 1] - K.cy) / K.fy,
                         np.ones(u.shape[:-1])], -1)
    d = rays @ P.R.T
    o = P.translation
    dm = spec.depth_model
    if dm.kind == "plane":
        n = np.asarray(dm.normal, dtype=float)
        n = n / np.linalg.norm(n)
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (dm.offset - n @ o) / denom
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (dm.offset - o[2]) / d[..., 2]
        w = 2 * np.pi / dm.wavelength
        for _ in range(50):
            x = o[0] + lam * d[..., 0]
            y = o[1] + lam * d[..., 1]
            f = o[2] + lam * d[..., 2] - _relief_height(dm, x, y)
            dh = dm.amplitude * w * (np.cos(w * x) * np.sin(w * y) * d[..., 0]
                                     + np.sin(w * x) * np.cos(w * y) * d[..., 1])
            step = f / (d[..., 2] - dh)
            lam = lam - step
            if np.nanmax(np.abs(step)) < 1e-14:
                break
    lam = np.where(np.isfinite(lam) & (lam > 0), lam, np.nan)
    X = o + lam[..., None] * d
    return lam, X


def render_scene(spec: SceneSpec, t: float):
    """(image HxW in (0,1), depth HxW, pose) at time t."""
    P = spec.pose_at(t)
    depth, X = raycast(spec, P)
    img = spec.texture_at(X[..., 0], X[..., 1])
    img = np.where(np.isfinite(depth), img, 0.0)
    return img, depth, P


# ---------------------------------------------------------------- events

def linearized_increment(spec: SceneSpec, t: float, t_prime: float):
    """Predicted brightness increment over [t, t'): -grad I . du * dtau * C."""
    img, depth, P = render_scene(spec, t)
    P2 = spec.pose_at(t_prime)
    D = np.where(np.isfinite(depth), depth, 0.0)
    mf = motion_field(D, spec.intrinsics, P, spec.intrinsics, P2)
    grad = image_gradient(img)
    du = np.where(mf.valid[..., None], mf.du, 0.0)
    return predicted_increment(grad, du, t_prime - t, spec.contrast_C)


def _spread_events(counts, t0_us: int, t1_us: int, width: int, height: int) -> EventStream:
    counts = np.asarray(counts, dtype=np.int64)
    n = np.abs(counts).ravel()
    total = int(n.sum())
    if total == 0:
        return EventStream.empty(width, height)
    pix = np.repeat(np.arange(n.size), n)
    starts = np.repeat(np.cumsum(n) - n, n)
    k = np.arange(total) - starts
    frac = (k + 0.5) / np.repeat(n, n)
    t = t0_us + np.floor(frac * (t1_us - t0_us)).astype(np.int64)
    ys, xs = np.divmod(pix, width)
    p = np.sign(counts.ravel())[pix]
    return EventStream.from_arrays(t, xs, ys, p, width, height)


def threshold_events(log_frames, times_us, C: float) -> EventStream:
    """Events from a sequence of log-intensity frames (linear in between).

    Each pixel keeps a reference level; every time its log intensity moves
    C above (below) the reference an event of polarity +1 (-1) is emitted at
    the interpolated crossing time and the reference moves by C.
    """
    frames = [np.asarray(f, dtype=float) for f in log_frames]
    H, W = frames[0].shape
    ref = frames[0].copy()
    ts, xs, ys, ps = [], [], [], []
    for k in range(1, len(frames)):
        a, b = frames[k - 1], frames[k]
        ta, tb = float(times_us[k - 1]), float(times_us[k])
        for sign in (1, -1):
            while True:
                level = ref + sign * C
                hit = (sign * (b - level) >= 0) & (b != a)
                if not hit.any():
                    break
                yy, xx = np.nonzero(hit)
                frac = (level[hit] - a[hit]) / (b[hit] - a[hit])
                frac = np.clip(frac, 0.0, 1.0)
                t = np.minimum(np.floor(ta + frac * (tb - ta)), tb - 1 if tb > ta else tb)
                ts.append(t.astype(np.int64))
                xs.append(xx)
                ys.append(yy)
                ps.append(np.full(len(xx), sign))
                ref[hit] = level[hit]
    if not ts:
        return EventStream.empty(W, H)
    return EventStream.from_arrays(np.concatenate(ts), np.concatenate(xs), np.concatenate(ys),
                                   np.concatenate(ps), W, H)


def simulate_events(spec: SceneSpec, t: float, t_prime: float, mode: str = "linearized",
                    quantum: float | None = None, quantum_divisor: float = 8.0,
                    substeps: int = 64) -> EventStream:
    """Events over [t, t') (times in seconds; events in microseconds).

    ``linearized``: each pixel emits round(dL / quantum) unit events spread
    uniformly over the window, quantum defaulting to max|dL| / quantum_divisor.
    """
    if not t < t_prime:
        raise ValueError("need t < t_prime")
    t0, t1 = to_us(t), to_us(t_prime)
    if mode == "linearized":
        # without this, round-off in the motion field would be scaled up to a full quantum
        if np.linalg.norm(se3_log(spec.pose_at(t).inverse() @ spec.pose_at(t_prime))) < STATIC_TWIST:
            return EventStream.empty(spec.width, spec.height)
        dL = linearized_increment(spec, t, t_prime)
        peak = np.abs(dL).max()
        if peak == 0:
            return EventStream.empty(spec.width, spec.height)
        q = peak / quantum_divisor if quantum is None else quantum
        counts = np.round(dL / q).astype(np.int64)
        return _spread_events(counts, t0, t1, spec.width, spec.height)
    if mode == "threshold":
        times = np.linspace(t, t_prime, substeps + 1)
        logs = [np.log(render_scene(spec, s)[0] + LOG_EPS) for s in times]
        return threshold_events(logs, [to_us(s) for s in times], spec.contrast_C)
    raise ValueError(f"unknown mode {mode!r}")


def linearized_quantum(spec: SceneSpec, t: float, t_prime: float, quantum_divisor: float = 8.0) -> float:
    return float(np.abs(linearized_increment(spec, t, t_prime)).max() / quantum_divisor)


# ---------------------------------------------------------------- perturbation

def perturb(state: GlobalState, sigma_rot: float, sigma_trans: float, sigma_logdepth: float = 0.0,
            seed: int = 0) -> GlobalState:
    if min(sigma_rot, sigma_trans, sigma_logdepth) < 0:
        raise ValueError("noise levels must be nonnegative")
    rng = np.random.default_rng(seed)
    N = state.n_frames
    w = rng.normal(0.0, 1.0, (N, 3)) * sigma_rot
    dt = rng.normal(0.0, 1.0, (N, 3)) * sigma_trans
    dd = rng.normal(0.0, 1.0, state.log_depths.shape) * sigma_logdepth
    poses = []
    for P, wi, ti in zip(state.poses, w, dt):
        Q = P @ se3_exp(np.concatenate([wi, np.zeros(3)]))
        poses.append(Pose(Q.rotation, Q.translation + ti))
    return GlobalState(poses, list(state.intrinsics), state.log_depths + dd,
                       state.edge_log_scales.copy(), list(state.edge_poses))


# ---------------------------------------------------------------- presets

def orbit_trajectory(n_keys: int, duration: float, radius: float = 0.4, look_at_depth: float = 3.0,
                     seed: int = 0, jitter: float = 0.0):
    """Smooth lateral sweep with gentle rotation, sampled at n_keys instants."""
    rng = np.random.default_rng(seed)
    traj = []
    for k, s in enumerate(np.linspace(0.0, 1.0, n_keys)):
        ang = 0.6 * np.pi * (s - 0.5)
        t = np.array([radius * np.sin(ang), 0.25 * radius * np.sin(2 * ang), 0.15 * radius * s])
        w = np.array([0.05 * np.sin(2 * ang), -0.08 * np.sin(ang), 0.03 * s])
        if jitter:
            w = w + rng.normal(0, jitter, 3)
        P = se3_exp(np.concatenate([w, np.zeros(3)]))
        traj.append((duration * s, Pose(P.rotation, t)))
    return traj
