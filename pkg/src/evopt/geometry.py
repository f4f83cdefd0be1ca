"""SE(3) poses, pinhole cameras, pointmaps and camera-induced motion fields.

Poses are camera-to-world: a camera-frame point X_c maps to the world as
R @ X_c + t.  Twists are ordered (omega, v).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import expm


class BehindCameraError(ValueError):
    pass


def skew(w):
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def skew_batch(w):
    """Skew matrices for an (..., 3) array, shape (..., 3, 3)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R):
    """Shepperd's method; returns (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    diag = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * np.sqrt(max(1.0 + tr, 0.0))
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif k == 1:
        s = 2.0 * np.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif k == 2:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] + R[1, 1] - R[2, 2], 0.0))
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(max(1.0 - R[0, 0] - R[1, 1] + R[2, 2], 0.0))
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid camera-to-world transform (unit quaternion w,x,y,z + translation)."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n == 0:
            raise ValueError("rotation quaternion must be nonzero and finite")
        object.__setattr__(self, "rotation", q / n)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3).copy())

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(matrix_to_quat(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(matrix_to_quat(R), t)

    @cached_property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        q = quat_multiply(self.rotation, other.rotation)
        return Pose(q, self.R @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "Pose":
        w, x, y, z = self.rotation
        q_inv = np.array([w, -x, -y, -z])
        return Pose(q_inv, -(self.R.T @ self.translation))

    def apply(self, X) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.translation

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        dq = min(np.abs(self.rotation - other.rotation).max(),
                 np.abs(self.rotation + other.rotation).max())
        return dq <= atol and np.abs(self.translation - other.translation).max() <= atol

    def __repr__(self):
        q = np.array2string(self.rotation, precision=6)
        t = np.array2string(self.translation, precision=6)
        return f"Pose(q={q}, t={t})"


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True, eq=False)
class Pointmap:
    points: np.ndarray
    confidence: np.ndarray | None = None
    frame: str = "world"


@dataclass(frozen=True, eq=False)
class MotionField:
    du: np.ndarray
    valid: np.ndarray


# ---------------------------------------------------------------- projection

def unproject(u, depth, K: Intrinsics) -> np.ndarray:
    """Back-project pixel(s) u (..., 2) at depth(s) into the camera frame."""
    u = np.asarray(u, dtype=float)
    d = np.asarray(depth, dtype=float)
    if np.any(d <= 0):
        raise ValueError("depth must be positive")
    x = (u[..., 0] - K.cx) / K.fx * d
    y = (u[..., 1] - K.cy) / K.fy * d
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def project(X, K: Intrinsics) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if np.any(X[..., 2] <= 0):
        raise BehindCameraError("point at or behind the camera plane")
    return np.stack([K.fx * X[..., 0] / X[..., 2] + K.cx,
                     K.fy * X[..., 1] / X[..., 2] + K.cy], axis=-1)


def pixel_grid(height: int, width: int) -> np.ndarray:
    """(H, W, 2) array of (x, y) pixel coordinates."""
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return np.stack([xs, ys], axis=-1)


def camera_rays(height: int, width: int, K: Intrinsics) -> np.ndarray:
    """Rays with unit z for every pixel, (H, W, 3)."""
    g = pixel_grid(height, width)
    return np.stack([(g[..., 0] - K.cx) / K.fx, (g[..., 1] - K.cy) / K.fy,
                     np.ones((height, width))], axis=-1)


def pointmap_from_depth(D, K: Intrinsics, P: Pose) -> Pointmap:
    D = np.asarray(D, dtype=float)
    valid = np.isfinite(D) & (D > 0)
    Dv = np.where(valid, D, 0.0)
    Xc = camera_rays(*D.shape, K) * Dv[..., None]
    Xw = P.apply(Xc)
    Xw[~valid] = 0.0
    return Pointmap(Xw, valid.astype(float), "world")


def motion_field(D_t, K_t: Intrinsics, P_t: Pose, K_tp: Intrinsics, P_tp: Pose) -> MotionField:
    """Pixel displacement induced by moving the camera from P_t to P_tp."""
    D = np.asarray(D_t, dtype=float)
    H, W = D.shape
    valid = np.isfinite(D) & (D > 0)
    Xc = camera_rays(H, W, K_t) * np.where(valid, D, 1.0)[..., None]
    rel = P_tp.inverse() @ P_t
    Y = rel.apply(Xc)
    valid &= Y[..., 2] > 1e-12
    Z = np.where(valid, Y[..., 2], 1.0)
    u2 = np.stack([K_tp.fx * Y[..., 0] / Z + K_tp.cx, K_tp.fy * Y[..., 1] / Z + K_tp.cy], axis=-1)
    du = u2 - pixel_grid(H, W)
    du[~valid] = 0.0
    return MotionField(du, valid)


# ---------------------------------------------------------------- Lie group

def so3_exp_quat(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    th = np.linalg.norm(w)
    if th < 1e-8:
        # Taylor of sin(th/2)/th and cos(th/2)
        s = 0.5 - th * th / 48.0
        c = 1.0 - th * th / 8.0
    else:
        s = np.sin(th / 2) / th
        c = np.cos(th / 2)
    return np.array([c, s * w[0], s * w[1], s * w[2]])


def so3_log_quat(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    w, v = q[0], q[1:]
    n = np.linalg.norm(v)
    if n < 1e-12:
        return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * v
    return (2.0 * np.arctan2(n, w) / n) * v


def _v_coeffs(th):
    """(1 - cos th) / th^2 and (th - sin th) / th^3, both cancellation-free."""
    a = 0.5 * np.sinc(th / (2 * np.pi)) ** 2
    if th < 1e-3:
        b = 1.0 / 6.0 - th ** 2 / 120.0 + th ** 4 / 5040.0
    else:
        b = (th - np.sin(th)) / th ** 3
    return a, b


def se3_exp(xi) -> Pose:
    xi = np.asarray(xi, dtype=float).reshape(6)
    w, v = xi[:3], xi[3:]
    th = np.linalg.norm(w)
    a, b = _v_coeffs(th)
    Wx = skew(w)
    V = np.eye(3) + a * Wx + b * (Wx @ Wx)
    return Pose(so3_exp_quat(w), V @ v)


def se3_log(P: Pose) -> np.ndarray:
    w = so3_log_quat(P.rotation)
    th = np.linalg.norm(w)
    Wx = skew(w)
    if th < 1e-2:
        c = 1.0 / 12.0 + th ** 2 / 720.0 + th ** 4 / 30240.0
    else:
        half = th / 2
        c = (1.0 - half * np.cos(half) / np.sin(half)) / th ** 2
    V_inv = np.eye(3) - 0.5 * Wx + c * (Wx @ Wx)
    return np.concatenate([w, V_inv @ P.translation])


def se3_ad(xi) -> np.ndarray:
    """Small adjoint of a twist (omega, v)."""
    xi = np.asarray(xi, dtype=float)
    A = np.zeros((6, 6))
    A[:3, :3] = skew(xi[:3])
    A[3:, :3] = skew(xi[3:])
    A[3:, 3:] = skew(xi[:3])
    return A


def se3_Ad(P: Pose) -> np.ndarray:
    """Adjoint such that P exp(xi) P^-1 = exp(Ad_P xi)."""
    A = np.zeros((6, 6))
    A[:3, :3] = P.R
    A[3:, :3] = skew(P.translation) @ P.R
    A[3:, 3:] = P.R
    return A


def se3_right_jacobian(xi) -> np.ndarray:
    """J_r with exp(xi + d) ~= exp(xi) exp(J_r d).

    Evaluates sum_n (-ad)^n / (n+1)! exactly via a block matrix exponential.
    """
    M = np.zeros((12, 12))
    M[:6, :6] = -se3_ad(xi)
    M[:6, 6:] = np.eye(6)
    return expm(M)[:6, 6:]


# ---------------------------------------------------------------- interpolation

def slerp(q0, q1, alpha: float) -> np.ndarray:
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    d = float(np.dot(q0, q1))
    if d < 0:
        q1, d = -q1, -d
    d = min(d, 1.0)
    if d > 1 - 1e-12:
        q = (1 - alpha) * q0 + alpha * q1
        return q / np.linalg.norm(q)
    th = np.arccos(d)
    s = np.sin(th)
    q = (np.sin((1 - alpha) * th) * q0 + np.sin(alpha * th) * q1) / s
    return q / np.linalg.norm(q)


def interpolate_pose(P_a: Pose, t_a: float, P_b: Pose, t_b: float, t_query: float) -> Pose:
    """Linear translation / SLERP rotation interpolation on [t_a, t_b]."""
    if not t_a < t_b:
        raise ValueError("need t_a < t_b")
    if t_query < t_a or t_query > t_b:
        raise IndexError(f"query time {t_query} outside [{t_a}, {t_b}]")
    if t_query == t_a:
        return P_a
    if t_query == t_b:
        return P_b
    alpha = (t_query - t_a) / (t_b - t_a)
    q = slerp(P_a.rotation, P_b.rotation, alpha)
    t = (1 - alpha) * P_a.translation + alpha * P_b.translation
    return Pose(q, t)


def interpolate_trajectory(times, poses, t_query: float) -> Pose:
    """Interpolate a sampled trajectory; raises IndexError outside its span."""
    times = np.asarray(times, dtype=float)
    if len(times) == 0 or t_query < times[0] or t_query > times[-1]:
        raise IndexError(f"time {t_query} outside trajectory span")
    k = int(np.searchsorted(times, t_query, side="right")) - 1
    if k >= len(times) - 1:
        return poses[-1]
    return interpolate_pose(poses[k], times[k], poses[k + 1], times[k + 1], t_query)


def warp_depth(X_d, P_td: Pose, P_ti: Pose, form: str = "printed") -> np.ndarray:
    """Move depth-sensor points from time t_d to image time t_i.

    ``printed``: X_i = R_i R_d^-1 (X_d - T_d) + T_i, with (R, T) taken from the
    poses as given (exact when they are world-to-camera).  ``standard``: the
    camera-to-world form P_ti^-1 P_td X_d.
    """
    X = np.asarray(X_d, dtype=float)
    if form == "printed":
        M = P_ti.R @ P_td.R.T
        return (X - P_td.translation) @ M.T + P_ti.translation
    if form == "standard":
        return (P_ti.inverse() @ P_td).apply(X)
    raise ValueError(f"unknown warp form {form!r}")
