"""Loss terms of the event-augmented global objective.

Every term can optionally accumulate its gradient into a :class:`GradBlocks`.
Pose gradients are taken with respect to right perturbations P exp(delta),
delta = (omega, v); depth and scale gradients with respect to their logs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pointmap, Pose, camera_rays, pixel_grid, se3_Ad, se3_log, se3_right_jacobian
from .state import GlobalState

log = logging.getLogger(__name__)

# |flow residual| below this counts as zero (subgradient choice for the L1 kink)
FLOW_KINK = 1e-10


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str):
        super().__init__(f"non-finite value in loss term {term!r}")
        self.term = term


@dataclass(frozen=True, eq=False)
class Patch:
    """Event patch around a corner of frame_a, observed over [t_a, t_b)."""

    center: tuple[int, int]
    half_width: int
    observed: np.ndarray
    predicted: np.ndarray | None = None
    corner_snr: float = 0.0
    frame_a: int = 0
    frame_b: int = 1
    gradient: np.ndarray | None = None

    def __post_init__(self):
        if self.predicted is not None and self.predicted.shape != self.observed.shape:
            raise ValueError("observed and predicted patches differ in shape")
        if self.corner_snr < 0:
            raise ValueError("corner SNR must be nonnegative")

    def window(self):
        """(row slice, col slice) of the patch in full-image coordinates."""
        x, y = self.center
        h = self.half_width
        return slice(y - h, y + h + 1), slice(x - h, x + h + 1)


@dataclass(frozen=True, eq=False)
class PairEdge:
    frame_a: int
    frame_b: int
    pointmap_aa: Pointmap
    pointmap_ba: Pointmap
    pairwise_pose: Pose
    scale: float = 1.0

    def __post_init__(self):
        if self.frame_a == self.frame_b:
            raise ValueError("edge must connect two distinct frames")
        if not self.scale > 0:
            raise ValueError("edge scale must be positive")


@dataclass(frozen=True)
class Weights:
    w_smooth: float = 0.01
    w_flow: float = 0.01
    w_event_base: float = 0.01

    def __post_init__(self):
        if min(self.w_smooth, self.w_flow, self.w_event_base) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    align: float
    smooth: float
    flow: float
    event: float
    w_smooth: float
    w_flow: float
    w_event: float
    total: float

    @classmethod
    def combine(cls, align, smooth, flow, event, w_smooth, w_flow, w_event):
        total = align + w_smooth * smooth + w_flow * flow + w_event * event
        return cls(align, smooth, flow, event, w_smooth, w_flow, w_event, total)

    def weighted(self) -> tuple[float, float, float, float]:
        return (self.align, self.w_smooth * self.smooth, self.w_flow * self.flow,
                self.w_event * self.event)


@dataclass(eq=False)
class ObjectiveInputs:
    edges: list[PairEdge]
    patches: list[Patch] = field(default_factory=list)
    flows: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)
    weights: Weights = field(default_factory=Weights)


class GradBlocks:
    def __init__(self, state: GlobalState):
        self.poses = np.zeros((state.n_frames, 6))
        self.log_depths = np.zeros_like(state.log_depths)
        self.edge_log_scales = np.zeros(state.n_edges)
        self.edge_poses = np.zeros((state.n_edges, 6))

    def add(self, other: "GradBlocks", w: float = 1.0) -> None:
        for k in ("poses", "log_depths", "edge_log_scales", "edge_poses"):
            getattr(self, k).__iadd__(w * getattr(other, k))


def _pose_grad(X, a):
    """Right-perturbation gradient of sum(a . (R X + t)) given a = R^T g."""
    return np.concatenate([np.cross(X, a).reshape(-1, 3).sum(0), a.reshape(-1, 3).sum(0)])


# ---------------------------------------------------------------- event term

def predicted_increment(gradient, motion, delta_tau: float = 1.0, C: float = 1.0) -> np.ndarray:
    g = np.asarray(gradient, dtype=float)
    m = np.asarray(motion, dtype=float)
    if g.shape != m.shape or g.shape[-1] != 2:
        raise ValueError(f"gradient {g.shape} and motion {m.shape} must match (..., 2)")
    return -(g * m).sum(-1) * (delta_tau * C)


def _patch_term(obs, pred):
    """Loss and d loss / d pred for one patch; None when degenerate."""
    no = np.linalg.norm(obs)
    npred = np.linalg.norm(pred)
    if no == 0 or npred == 0:
        return None
    o_hat = obs / no
    p_hat = pred / npred
    value = float(np.sum((o_hat - p_hat) ** 2))
    d_pred = -2.0 * (o_hat - np.sum(o_hat * p_hat) * p_hat) / npred
    return value, d_pred


def event_loss(patches, return_skipped: bool = False):
    total = 0.0
    skipped = 0
    for p in patches:
        if p.predicted is None:
            raise ValueError("patch has no predicted increment")
        r = _patch_term(p.observed, p.predicted)
        if r is None:
            skipped += 1
            continue
        total += r[0]
    if skipped:
        log.debug("event_loss skipped %d degenerate patches", skipped)
    if patches and skipped == len(patches):
        log.warning("all %d event patches are degenerate; event loss is 0", skipped)
    return (total, skipped) if return_skipped else total


def event_weight(corner_snrs, w_base: float) -> float:
    if w_base < 0:
        raise ValueError("w_base must be nonnegative")
    s = np.asarray(list(corner_snrs), dtype=float)
    if s.size == 0:
        return 0.5 * w_base
    lo, hi = s.min(), s.max()
    s_norm = np.full(s.shape, 0.5) if hi == lo else (s - lo) / (hi - lo)
    return float(w_base * np.mean(1.0 - s_norm))


def event_quantization_bound(predicted, quantum: float) -> float:
    """Upper bound on one patch's event loss caused by rounding counts.

    ``predicted`` must be in the units the quantum was applied to (the
    simulator's increment, i.e. including dtau * C).  With counts
    n = round(pred / quantum), |n - pred/quantum| <= 1/2 per pixel, and
    |a/|a| - b/|b|| <= 2|a - b|/|b|.
    """
    b = np.linalg.norm(np.asarray(predicted, dtype=float)) / quantum
    if b == 0:
        return 4.0
    return float(min(4.0, np.asarray(predicted).size / b ** 2))


# ---------------------------------------------------------------- align term

def _align_edge(state: GlobalState, e: int, edge: PairEdge, grad: GradBlocks | None):
    Pe = state.edge_poses[e]
    s = float(np.exp(state.edge_log_scales[e]))
    value = 0.0
    for f, pm in ((edge.frame_a, edge.pointmap_aa), (edge.frame_b, edge.pointmap_ba)):
        Pf = state.poses[f]
        H, W = state.shape
        d = state.depth(f)
        Xc = camera_rays(H, W, state.K(f)) * d[..., None]
        Xg = Xc @ Pf.R.T + Pf.translation
        Xpm = np.asarray(pm.points, dtype=float)
        c = np.ones((H, W)) if pm.confidence is None else np.asarray(pm.confidence, dtype=float)
        c = np.where(np.isfinite(Xpm).all(-1), c, 0.0)
        Xpm = np.where(c[..., None] > 0, Xpm, 0.0)
        Y = Xpm @ Pe.R.T + Pe.translation
        r = Xg - s * Y
        value += float(np.sum(c * np.sum(r * r, axis=-1)))
        if grad is not None:
            g = 2.0 * c[..., None] * r
            a = g @ Pf.R  # R_f^T g
            grad.poses[f] += _pose_grad(Xc, a)
            grad.log_depths[f] += np.sum(a * Xc, axis=-1)
            grad.edge_log_scales[e] += -s * float(np.sum(g * Y))
            b = g @ Pe.R
            grad.edge_poses[e] += -s * _pose_grad(Xpm, b)
    return value


def align_loss(edges, state: GlobalState, grad: GradBlocks | None = None) -> float:
    if len(edges) != state.n_edges:
        raise ValueError(f"{len(edges)} edges but state holds {state.n_edges} edge parameters")
    return float(sum(_align_edge(state, e, edge, grad) for e, edge in enumerate(edges)))


# ---------------------------------------------------------------- smoothness

def smooth_loss(state: GlobalState, grad: GradBlocks | None = None) -> float:
    total = 0.0
    for i in range(state.n_frames - 1):
        rel = state.poses[i].inverse() @ state.poses[i + 1]
        xi = se3_log(rel)
        total += float(xi @ xi)
        if grad is not None:
            Jinv = np.linalg.inv(se3_right_jacobian(xi))
            g = 2.0 * xi
            grad.poses[i + 1] += Jinv.T @ g
            grad.poses[i] += -(Jinv @ se3_Ad(rel.inverse())).T @ g
    return total


# ---------------------------------------------------------------- motion terms

class _Motion:
    """Motion field of frame i towards frame j with a reverse-mode backprop."""

    def __init__(self, state: GlobalState, i: int, j: int):
        self.i, self.j = i, j
        H, W = state.shape
        Pi, Pj = state.poses[i], state.poses[j]
        Kj = state.K(j)
        self.Xc = camera_rays(H, W, state.K(i)) * state.depth(i)[..., None]
        Xw = self.Xc @ Pi.R.T + Pi.translation
        self.Y = (Xw - Pj.translation) @ Pj.R
        self.valid = self.Y[..., 2] > 1e-12
        Z = np.where(self.valid, self.Y[..., 2], 1.0)
        self.Z = Z
        u2 = np.stack([Kj.fx * self.Y[..., 0] / Z + Kj.cx, Kj.fy * self.Y[..., 1] / Z + Kj.cy], -1)
        self.du = np.where(self.valid[..., None], u2 - pixel_grid(H, W), 0.0)
        self.Ri, self.Rj, self.Kj = Pi.R, Pj.R, Kj

    def backprop(self, g_du, grad: GradBlocks):
        g_du = np.where(self.valid[..., None], g_du, 0.0)
        X, Yy, Z = self.Y[..., 0], self.Y[..., 1], self.Z
        fx, fy = self.Kj.fx, self.Kj.fy
        gY = np.stack([g_du[..., 0] * fx / Z, g_du[..., 1] * fy / Z,
                       -(g_du[..., 0] * fx * X + g_du[..., 1] * fy * Yy) / Z ** 2], -1)
        grad.poses[self.j] += np.concatenate([np.cross(gY, self.Y).reshape(-1, 3).sum(0),
                                              -gY.reshape(-1, 3).sum(0)])
        a = (gY @ self.Rj.T) @ self.Ri
        grad.poses[self.i] += _pose_grad(self.Xc, a)
        grad.log_depths[self.i] += np.sum(a * self.Xc, axis=-1)


def flow_loss(state: GlobalState, flows, static_masks, grad: GradBlocks | None = None,
              _motions: dict | None = None) -> float:
    total = 0.0
    for key in sorted(set(flows) | set(static_masks)):
        if key not in flows:
            log.warning("no flow for pair %s; skipped", key)
            continue
        flow = np.asarray(flows[key], dtype=float)
        mask = static_masks.get(key)
        mask = np.ones(state.shape, bool) if mask is None else np.asarray(mask, bool).reshape(state.shape)
        m = _motion_for(state, key, _motions)
        use = mask & m.valid
        r = m.du - flow.reshape(m.du.shape)
        total += float(np.sum(np.abs(r)[use]))
        if grad is not None:
            sgn = np.where(np.abs(r) > FLOW_KINK, np.sign(r), 0.0)
            m.backprop(sgn * use[..., None], grad)
    return total


def _motion_for(state, key, cache):
    if cache is not None and key in cache:
        return cache[key]
    m = _Motion(state, int(key[0]), int(key[1]))
    if cache is not None:
        cache[key] = m
    return m


def predict_patches(state: GlobalState, patches, _motions: dict | None = None) -> list[Patch]:
    """Recompute each patch's predicted increment from the state (dtau * C = 1)."""
    out = []
    for p in patches:
        m = _motion_for(state, (p.frame_a, p.frame_b), _motions)
        rs, cs = p.window()
        out.append(replace(p, predicted=predicted_increment(p.gradient, m.du[rs, cs])))
    return out


def _event_term(state, patches, grad, motions):
    predicted = predict_patches(state, patches, motions)
    total = 0.0
    for p in predicted:
        r = _patch_term(p.observed, p.predicted)
        if r is None:
            continue
        total += r[0]
        if grad is not None:
            m = motions[(p.frame_a, p.frame_b)]
            g_du = np.zeros_like(m.du)
            rs, cs = p.window()
            g_du[rs, cs] = -r[1][..., None] * p.gradient
            m.backprop(g_du, grad)
    return total, predicted


# ---------------------------------------------------------------- total

def evaluate(state: GlobalState, inputs: ObjectiveInputs, with_grad: bool = False):
    """(LossBreakdown, GradBlocks | None) of the weighted objective."""
    w = inputs.weights
    w_event = event_weight([p.corner_snr for p in inputs.patches], w.w_event_base)
    motions: dict = {}

    parts = {}
    grads = {}
    for name in ("align", "smooth", "flow", "event"):
        g = GradBlocks(state) if with_grad else None
        if name == "align":
            v = align_loss(inputs.edges, state, g)
        elif name == "smooth":
            v = smooth_loss(state, g)
        elif name == "flow":
            v = flow_loss(state, inputs.flows, inputs.masks, g, motions)
        else:
            v, _ = _event_term(state, inputs.patches, g, motions)
        if not np.isfinite(v):
            raise NonFiniteLossError(name)
        parts[name] = v
        grads[name] = g

    bd = LossBreakdown.combine(parts["align"], parts["smooth"], parts["flow"], parts["event"],
                               w.w_smooth, w.w_flow, w_event)
    if not with_grad:
        return bd, None
    total = grads["align"]
    total.add(grads["smooth"], w.w_smooth)
    total.add(grads["flow"], w.w_flow)
    total.add(grads["event"], w_event)
    for k in ("poses", "log_depths", "edge_log_scales", "edge_poses"):
        if not np.all(np.isfinite(getattr(total, k))):
            bad = [n for n, g in grads.items() if not np.all(np.isfinite(getattr(g, k)))]
            raise NonFiniteLossError(bad[0] if bad else k)
    return bd, total


def total_objective(state: GlobalState, edges, patches=(), flows=None, masks=None,
                    weights: Weights | None = None) -> LossBreakdown:
    inputs = ObjectiveInputs(list(edges), list(patches), dict(flows or {}), dict(masks or {}),
                             weights or Weights())
    return evaluate(state, inputs)[0]
