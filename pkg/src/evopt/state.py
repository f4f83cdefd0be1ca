"""The optimisation variable: per-frame poses and depths plus per-edge
alignment poses and scales."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Intrinsics, Pose


@dataclass(eq=False)
class GlobalState:
    poses: list[Pose]
    intrinsics: list[Intrinsics]
    log_depths: np.ndarray
    edge_log_scales: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edge_poses: list[Pose] = field(default_factory=list)

    def __post_init__(self):
        self.log_depths = np.asarray(self.log_depths, dtype=float)
        self.edge_log_scales = np.asarray(self.edge_log_scales, dtype=float).reshape(-1)
        if self.log_depths.ndim != 3 or self.log_depths.shape[0] != len(self.poses):
            raise ValueError("log_depths must be (n_frames, H, W)")
        if len(self.intrinsics) not in (1, len(self.poses)):
            raise ValueError("intrinsics must be shared (one entry) or per-frame")
        if len(self.edge_log_scales) != len(self.edge_poses):
            raise ValueError("edge scales and edge poses differ in length")

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    @property
    def n_edges(self) -> int:
        return len(self.edge_poses)

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_depths.shape[1:]

    @property
    def shared_intrinsics(self) -> bool:
        return len(self.intrinsics) == 1

    def K(self, i: int) -> Intrinsics:
        return self.intrinsics[0] if len(self.intrinsics) == 1 else self.intrinsics[i]

    def depth(self, i: int) -> np.ndarray:
        return np.exp(self.log_depths[i])

    @property
    def edge_scales(self) -> np.ndarray:
        return np.exp(self.edge_log_scales)

    def copy(self) -> "GlobalState":
        return GlobalState(list(self.poses), list(self.intrinsics), self.log_depths.copy(),
                           self.edge_log_scales.copy(), list(self.edge_poses))

    @classmethod
    def from_depths(cls, poses, intrinsics, depths, edge_poses=(), edge_scales=()):
        depths = np.asarray(depths, dtype=float)
        if np.any(~(depths > 0)):
            raise ValueError("initial depths must be positive everywhere")
        return cls(list(poses), list(intrinsics), np.log(depths),
                   np.log(np.asarray(edge_scales, dtype=float)), list(edge_poses))
