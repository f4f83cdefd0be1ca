"""Depth and trajectory evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose


class MetricsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    poses: list

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        object.__setattr__(self, "times", t)
        if len(t) != len(self.poses):
            raise ValueError("times and poses differ in length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([P.translation for P in self.poses]).reshape(-1, 3)


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    delta_125: float
    rmse_log: float

    def __iter__(self):
        return iter((self.abs_rel, self.delta_125, self.rmse_log))


def depth_metrics(pred, gt, scale_align: bool = False) -> DepthMetrics:
    pred = np.asarray(pred, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if pred.shape != gt.shape:
        raise MetricsError(f"shape mismatch {pred.shape} vs {gt.shape}")
    valid = np.isfinite(pred) & np.isfinite(gt) & (pred > 0) & (gt > 0)
    if not valid.any():
        raise MetricsError("no jointly valid depth pixels")
    p, g = pred[valid], gt[valid]
    if scale_align:
        p = p * (np.median(g) / np.median(p))
    abs_rel = float(np.mean(np.abs(p - g) / g))
    # max(p/g, g/p) < 1.25 written without division, so that p = 1.25 * g
    # sits exactly on the threshold instead of one ulp to either side
    delta = float(np.mean((p < 1.25 * g) & (g < 1.25 * p)))
    rmse_log = float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2)))
    return DepthMetrics(abs_rel, delta, rmse_log)


def associate(pred: Trajectory, gt: Trajectory, tolerance: float = 0.01):
    """Index pairs (i_pred, i_gt) matched by nearest timestamp within tolerance."""
    pairs = []
    used = set()
    for i, t in enumerate(pred.times):
        j = int(np.searchsorted(gt.times, t))
        best = None
        for k in (j - 1, j):
            if 0 <= k < len(gt.times):
                d = abs(gt.times[k] - t)
                if d <= tolerance and (best is None or d < best[1]):
                    best = (k, d)
        if best is not None and best[0] not in used:
            used.add(best[0])
            pairs.append((i, best[0]))
    return pairs


def umeyama(src, dst, with_scale: bool = True):
    """Least-squares (s, R, T) minimising sum |s R src_i + T - dst_i|^2."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    n = len(src)
    if n < 3:
        raise MetricsError("need at least 3 matched positions")
    mu_s, mu_d = src.mean(0), dst.mean(0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise MetricsError("degenerate (collinear) positions")
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / (np.sum(xs ** 2) / n)) if with_scale else 1.0
    T = mu_d - s * R @ mu_s
    return s, R, T


def _matched_positions(pred, gt, tolerance):
    pairs = associate(pred, gt, tolerance)
    if len(pairs) < 3:
        raise MetricsError(f"only {len(pairs)} associated poses")
    return pred.positions()[[i for i, _ in pairs]], gt.positions()[[j for _, j in pairs]]


def umeyama_align(pred: Trajectory, gt: Trajectory, with_scale: bool = True,
                  tolerance: float = 0.01):
    return umeyama(*_matched_positions(pred, gt, tolerance), with_scale)


def apply_similarity(traj: Trajectory, s: float, R, T) -> Trajectory:
    G = Pose.from_rt(R, T)
    poses = []
    for P in traj.poses:
        Q = G @ Pose(P.rotation, s * P.translation)
        poses.append(Q)
    return Trajectory(traj.times.copy(), poses)


def ate(pred: Trajectory, gt: Trajectory, with_scale: bool = True,
        tolerance: float = 0.01) -> float:
    P, G = _matched_positions(pred, gt, tolerance)
    s, R, T = umeyama(P, G, with_scale)
    res = s * P @ R.T + T - G
    return float(np.sqrt(np.mean(np.sum(res ** 2, axis=1))))


def rotation_angle(P: Pose) -> float:
    """Geodesic angle of a pose's rotation, radians."""
    q = P.rotation
    return float(2.0 * np.arctan2(np.linalg.norm(q[1:]), abs(q[0])))


def rpe(pred: Trajectory, gt: Trajectory, delta: int = 1, tolerance: float = 0.01):
    """(translation RMSE [m], rotation RMSE [deg]) of relative motions."""
    pairs = associate(pred, gt, tolerance)
    if len(pairs) < delta + 1:
        raise MetricsError(f"only {len(pairs)} associated poses for delta={delta}")
    te, re = [], []
    for k in range(len(pairs) - delta):
        (i0, j0), (i1, j1) = pairs[k], pairs[k + delta]
        rel_p = pred.poses[i0].inverse() @ pred.poses[i1]
        rel_g = gt.poses[j0].inverse() @ gt.poses[j1]
        E = rel_g.inverse() @ rel_p
        te.append(np.linalg.norm(E.translation))
        re.append(np.degrees(rotation_angle(E)))
    te, re = np.array(te), np.array(re)
    return float(np.sqrt(np.mean(te ** 2))), float(np.sqrt(np.mean(re ** 2)))
