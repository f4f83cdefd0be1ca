"""Adam over the global state on a sliding-window pair graph."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import se3_exp
from .objective import LossBreakdown, NonFiniteLossError, ObjectiveInputs, evaluate
from .state import GlobalState

log = logging.getLogger(__name__)

__all__ = [
    "AdamState", "DivergenceError", "GlobalState", "PairGraph", "SolverConfig",
    "adam_step", "build_pair_graph", "gradient", "optimize", "param_size",
]


class DivergenceError(FloatingPointError):
    """Raised when the loss turns non-finite; carries the last finite state."""

    def __init__(self, msg, state, trace):
        super().__init__(msg)
        self.state = state
        self.trace = trace


@dataclass(frozen=True)
class PairGraph:
    edges: list[tuple[int, int]]
    window: int
    stride: int


def build_pair_graph(n_frames: int, window: int = 10, stride: int = 1) -> PairGraph:
    if window < 2:
        raise ValueError("window must be >= 2")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    edges = [(i, j) for i in range(0, n_frames, stride)
             for j in range(i + 1, min(n_frames, i + window))]
    return PairGraph(edges, window, stride)


# ---------------------------------------------------------------- parameters

def param_size(state: GlobalState, depth_mode: str = "pixel") -> int:
    nd = state.log_depths.size if depth_mode == "pixel" else state.n_frames
    return 6 * state.n_frames + nd + 7 * state.n_edges


def _split(vec, state: GlobalState, depth_mode: str):
    N, E = state.n_frames, state.n_edges
    nd = state.log_depths.size if depth_mode == "pixel" else N
    o = 0
    poses = vec[o:o + 6 * N].reshape(N, 6)
    o += 6 * N
    depth = vec[o:o + nd]
    o += nd
    scales = vec[o:o + E]
    o += E
    edges = vec[o:o + 6 * E].reshape(E, 6)
    return poses, depth, scales, edges


def _check_mode(depth_mode):
    if depth_mode not in ("pixel", "frame"):
        raise ValueError(f"depth_mode must be 'pixel' or 'frame', got {depth_mode!r}")


def gradient(state: GlobalState, inputs: ObjectiveInputs, depth_mode: str = "pixel"):
    """(LossBreakdown, flat gradient) of the total objective at ``state``.

    Layout: pose twists (N*6), log-depths (N*H*W, or N per-frame log-scales in
    ``frame`` mode), edge log-scales (E), edge-pose twists (E*6).
    """
    _check_mode(depth_mode)
    bd, g = evaluate(state, inputs, with_grad=True)
    depth = g.log_depths.ravel() if depth_mode == "pixel" else g.log_depths.sum(axis=(1, 2))
    flat = np.concatenate([g.poses.ravel(), depth, g.edge_log_scales, g.edge_poses.ravel()])
    return bd, flat


def retract(state: GlobalState, delta, depth_mode: str = "pixel") -> GlobalState:
    """Apply a flat parameter increment (poses via right exp retraction)."""
    _check_mode(depth_mode)
    d_pose, d_depth, d_scale, d_edge = _split(np.asarray(delta, dtype=float), state, depth_mode)
    if depth_mode == "pixel":
        log_depths = state.log_depths + d_depth.reshape(state.log_depths.shape)
    else:
        log_depths = state.log_depths + d_depth[:, None, None]
    return GlobalState(
        [P @ se3_exp(d) for P, d in zip(state.poses, d_pose)],
        list(state.intrinsics),
        log_depths,
        state.edge_log_scales + d_scale,
        [P @ se3_exp(d) for P, d in zip(state.edge_poses, d_edge)],
    )


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(state: GlobalState, adam: AdamState, grad, depth_mode: str = "pixel"):
    grad = np.asarray(grad, dtype=float)
    if grad.shape != adam.m.shape:
        raise ValueError(f"gradient length {grad.shape} != optimizer state {adam.m.shape}")
    step = adam.step + 1
    m = adam.beta1 * adam.m + (1 - adam.beta1) * grad
    v = adam.beta2 * adam.v + (1 - adam.beta2) * grad * grad
    m_hat = m / (1 - adam.beta1 ** step)
    v_hat = v / (1 - adam.beta2 ** step)
    delta = -adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)
    new_adam = AdamState(m, v, step, adam.lr, adam.beta1, adam.beta2, adam.eps)
    if not np.any(delta):
        return state, new_adam
    return retract(state, delta, depth_mode), new_adam


# ---------------------------------------------------------------- loop

@dataclass
class SolverConfig:
    iters: int = 300
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    depth_mode: str = "pixel"
    fix_scale_gauge: bool = True
    log_every: int = 50
    optimize_depth: bool = True


def _project_scale_gauge(state: GlobalState, grad, depth_mode):
    """Keep mean(log edge scale) fixed: the objective shrinks with the scene."""
    if state.n_edges == 0:
        return grad
    _, _, g_scale, _ = _split(grad, state, depth_mode)
    g_scale -= g_scale.mean()
    return grad


def optimize(init: GlobalState, inputs: ObjectiveInputs, config: SolverConfig | None = None):
    """Run Adam; returns (final state, list of LossBreakdown).

    The trace holds the loss before every step plus the final loss, so it has
    ``iters + 1`` entries.
    """
    cfg = config or SolverConfig()
    if cfg.iters < 1:
        raise ValueError("iters must be >= 1")
    _check_mode(cfg.depth_mode)
    state = init.copy()
    if cfg.fix_scale_gauge and state.n_edges:
        state.edge_log_scales = state.edge_log_scales - state.edge_log_scales.mean()
    adam = AdamState.zeros(param_size(state, cfg.depth_mode), lr=cfg.lr, beta1=cfg.beta1,
                           beta2=cfg.beta2, eps=cfg.eps)
    trace: list[LossBreakdown] = []
    for it in range(cfg.iters + 1):
        try:
            bd, g = gradient(state, inputs, cfg.depth_mode)
        except NonFiniteLossError as exc:
            raise DivergenceError(f"iteration {it}: {exc}", state, trace) from exc
        if not np.isfinite(bd.total):
            raise DivergenceError(f"iteration {it}: non-finite total", state, trace)
        trace.append(bd)
        if cfg.log_every and it % cfg.log_every == 0:
            log.info("iter %4d total %.6e align %.4e smooth %.4e flow %.4e event %.4e",
                     it, bd.total, bd.align, bd.smooth, bd.flow, bd.event)
        if it == cfg.iters:
            break
        if cfg.fix_scale_gauge:
            g = _project_scale_gauge(state, g, cfg.depth_mode)
        if not cfg.optimize_depth:
            _, g_depth, _, _ = _split(g, state, cfg.depth_mode)
            g_depth[:] = 0.0
        state, adam = adam_step(state, adam, g, cfg.depth_mode)
        if cfg.fix_scale_gauge and state.n_edges:
            state.edge_log_scales = state.edge_log_scales - state.edge_log_scales.mean()
    return state, trace
