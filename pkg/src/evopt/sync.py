"""Temporal and spatial alignment of independently timestamped sensor streams
into (image, events, depth, pose) tuples.

Two regimes are handled.  At day rates the camera is faster than the depth
sensor, so every depth sample is paired with its nearest image.  At night
rates depth arrives faster, so every image picks the nearest depth sample
inside its own interval.  Either way the chosen depth is lifted to 3D with the
pose at its own timestamp, moved into the camera at the image timestamp and
splatted onto the image grid with a z-buffer.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .events import EventStream, to_us
from .geometry import Intrinsics, Pose, camera_rays, interpolate_trajectory, warp_depth
from .imaging import fill_holes

log = logging.getLogger(__name__)


class SyncWarning(UserWarning):
    """A tuple was skipped (pose gap, no depth in interval, nothing visible)."""


@dataclass
class SensorStreams:
    """Raw inputs.  Times are seconds; event timestamps are microseconds.

    ``depth_extrinsic`` maps depth-sensor coordinates into the camera frame.
    ``image_masks`` (optional, one per image) marks valid rectified pixels;
    when given, holes are filled before output.  ``warp_form`` selects the
    depth warp of :func:`evopt.geometry.warp_depth`; only "standard" is
    correct for camera-to-world poses.
    """

    image_times: np.ndarray
    images: list
    image_K: Intrinsics
    depth_times: np.ndarray
    depths: list
    depth_K: Intrinsics
    pose_times: np.ndarray
    poses: list
    events: EventStream
    depth_extrinsic: Pose = field(default_factory=Pose.identity)
    image_masks: list | None = None
    fill_radius: int = 4
    warp_form: str = "standard"

    def __post_init__(self):
        self.image_times = np.asarray(self.image_times, dtype=float)
        self.depth_times = np.asarray(self.depth_times, dtype=float)
        self.pose_times = np.asarray(self.pose_times, dtype=float)
        for name in ("image_times", "depth_times", "pose_times"):
            ts = getattr(self, name)
            if np.any(np.diff(ts) < 0):
                raise ValueError(f"{name} must be sorted ascending")
        if self.warp_form not in ("standard", "printed"):
            raise ValueError(f"unknown warp form {self.warp_form!r}")
        if len(self.images) != len(self.image_times):
            raise ValueError("images and image_times differ in length")
        if len(self.depths) != len(self.depth_times):
            raise ValueError("depths and depth_times differ in length")
        if len(self.poses) != len(self.pose_times):
            raise ValueError("poses and pose_times differ in length")
        if self.image_masks is not None and len(self.image_masks) != len(self.images):
            raise ValueError("image_masks and images differ in length")

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.events.height, self.events.width


@dataclass(eq=False)
class AlignedTuple:
    image_t: float
    image: np.ndarray
    depth: np.ndarray
    valid: np.ndarray
    events: EventStream
    pose: Pose
    depth_t: float
    points: np.ndarray
    unfilled: np.ndarray | None = None


def match_timestamps(depth_times, image_times) -> list[tuple[int, int]]:
    """Nearest image index for every depth time; ties go to the earlier image."""
    img = np.asarray(image_times, dtype=float)
    if img.size == 0:
        raise ValueError("image_times is empty")
    out = []
    for k, t in enumerate(np.asarray(depth_times, dtype=float)):
        j = int(np.searchsorted(img, t, side="left"))
        # candidates j-1 and j bracket t; the earlier wins a tie
        if j == 0:
            best = 0
        elif j == len(img):
            best = len(img) - 1
        else:
            best = j - 1 if t - img[j - 1] <= img[j] - t else j
        while best > 0 and img[best - 1] == img[best]:
            best -= 1
        out.append((k, best))
    return out


def rasterize_depth(points, K: Intrinsics, shape):
    """Nearest-pixel splat of camera-frame points, keeping the closest depth.

    Returns (depth, valid); invalid pixels hold 0.
    """
    H, W = shape
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    z = X[:, 2]
    front = z > 0
    X, z = X[front], z[front]
    u = np.rint(K.fx * X[:, 0] / z + K.cx).astype(np.int64)
    v = np.rint(K.fy * X[:, 1] / z + K.cy).astype(np.int64)
    inside = (u >= 0) & (u < W) & (v >= 0) & (v < H)
    buf = np.full(H * W, np.inf)
    np.minimum.at(buf, v[inside] * W + u[inside], z[inside])
    buf = buf.reshape(H, W)
    valid = np.isfinite(buf)
    return np.where(valid, buf, 0.0), valid


def _depth_points(streams: SensorStreams, k: int) -> np.ndarray:
    """Valid depth pixels of sample k as points in the camera frame."""
    d = np.asarray(streams.depths[k], dtype=float)
    rays = camera_rays(*d.shape, streams.depth_K)
    ok = np.isfinite(d) & (d > 0)
    return streams.depth_extrinsic.apply(rays[ok] * d[ok][:, None])


def _pose(streams: SensorStreams, t: float) -> Pose:
    return interpolate_trajectory(streams.pose_times, streams.poses, t)


def _skip(reason: str):
    warnings.warn(reason, SyncWarning, stacklevel=3)


def _build(streams: SensorStreams, k: int, j: int, prev_t: float | None):
    t_d = float(streams.depth_times[k])
    t_i = float(streams.image_times[j])
    try:
        P_d = _pose(streams, t_d)
        P_i = _pose(streams, t_i)
    except IndexError:
        _skip(f"depth sample {k} (t={t_d}) or image {j} (t={t_i}) outside pose coverage")
        return None
    X = warp_depth(_depth_points(streams, k), P_d, P_i, form=streams.warp_form)
    depth, valid = rasterize_depth(X, streams.image_K, streams.image_shape)
    if not valid.any():
        _skip(f"depth sample {k} projects outside image {j}")
        return None
    image = np.asarray(streams.images[j], dtype=float)
    unfilled = None
    if streams.image_masks is not None:
        image, unfilled = fill_holes(image, streams.image_masks[j], streams.fill_radius)
    if prev_t is None:
        prev_t = float(streams.image_times[j - 1]) if j > 0 else t_i
    ev = streams.events.window(to_us(prev_t), to_us(t_i))
    return AlignedTuple(t_i, image, depth, valid, ev, P_i, t_d, X, unfilled)


def _assemble(streams: SensorStreams, choices):
    """Build tuples from (depth_idx, image_idx) pairs sorted by image time."""
    out: list[AlignedTuple] = []
    for k, j in choices:
        tup = _build(streams, k, j, out[-1].image_t if out else None)
        if tup is not None:
            out.append(tup)
    return out


def align_day(streams: SensorStreams) -> list[AlignedTuple]:
    """One tuple per depth sample, paired with its nearest image.

    If several depth samples land on one image, the closest of them is kept.
    """
    if len(streams.image_times) and len(streams.depth_times) > len(streams.image_times):
        log.warning("day alignment on data with more depth samples than images")
    best: dict[int, int] = {}
    for k, j in match_timestamps(streams.depth_times, streams.image_times):
        t_i = streams.image_times[j]
        if j not in best or abs(streams.depth_times[k] - t_i) < abs(streams.depth_times[best[j]] - t_i):
            best[j] = k
    return _assemble(streams, sorted(((k, j) for j, k in best.items()), key=lambda kj: kj[1]))


def frame_intervals(image_times) -> list[tuple[float, float]]:
    """Half-open [lo, hi) around each image, bounded by midpoints to neighbours."""
    t = np.asarray(image_times, dtype=float)
    if len(t) == 1:
        return [(-np.inf, np.inf)]
    mid = (t[1:] + t[:-1]) / 2
    lo = np.concatenate([[t[0] - (mid[0] - t[0])], mid])
    hi = np.concatenate([mid, [t[-1] + (t[-1] - mid[-1])]])
    return list(zip(lo.tolist(), hi.tolist()))


def align_night(streams: SensorStreams) -> list[AlignedTuple]:
    """One tuple per image, using the closest depth sample inside its interval."""
    if len(streams.depth_times) < len(streams.image_times):
        log.warning("night alignment on data with fewer depth samples than images")
    dt = streams.depth_times
    choices = []
    for j, (lo, hi) in enumerate(frame_intervals(streams.image_times)):
        t_i = streams.image_times[j]
        inside = np.flatnonzero((dt >= lo) & (dt < hi))
        if inside.size == 0:
            _skip(f"no depth sample in the interval of image {j} (t={t_i})")
            continue
        # argmin returns the first, i.e. earliest, on ties
        k = int(inside[np.argmin(np.abs(dt[inside] - t_i))])
        choices.append((k, j))
    return _assemble(streams, choices)
