"""Event-aided joint refinement of camera poses and depth.

Pairwise pointmaps are aligned into one global state of per-frame poses and
depths, regularised by trajectory smoothness and optical flow, and tied to an
event camera through a normalised brightness-increment consistency term.
"""

from .events import EventStream, accumulate_patch, parse_events, voxelize
from .geometry import Intrinsics, Pose, se3_exp, se3_log
from .metrics import Trajectory, ate, depth_metrics, rpe
from .objective import LossBreakdown, Weights, event_loss, total_objective
from .solver import SolverConfig, optimize
from .state import GlobalState

__version__ = "0.1.0"

__all__ = [
    "EventStream", "GlobalState", "Intrinsics", "LossBreakdown", "Pose", "SolverConfig",
    "Trajectory", "Weights", "accumulate_patch", "ate", "depth_metrics", "event_loss",
    "optimize", "parse_events", "rpe", "se3_exp", "se3_log", "total_objective", "voxelize",
]
