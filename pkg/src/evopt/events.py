"""Event streams: parsing, voxel grids and patch accumulation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np


def to_us(t: float) -> int:
    """Seconds to integer microseconds."""
    return int(round(t * 1e6))


class EventParseError(ValueError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted events stored column-wise (t in integer microseconds)."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "t", _frozen(self.t, np.int64))
        object.__setattr__(self, "x", _frozen(self.x, np.int64))
        object.__setattr__(self, "y", _frozen(self.y, np.int64))
        object.__setattr__(self, "p", _frozen(self.p, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns differ in length")
        if n:
            if np.any(np.diff(self.t) < 0):
                raise ValueError("timestamps must be nondecreasing")
            if (self.x.min() < 0 or self.x.max() >= self.width
                    or self.y.min() < 0 or self.y.max() >= self.height):
                raise ValueError("event outside sensor bounds")
            if not np.all(np.abs(self.p) == 1):
                raise ValueError("polarity must be +1 or -1")

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height)

    @classmethod
    def from_arrays(cls, t, x, y, p, width: int, height: int) -> "EventStream":
        """Build a stream from unsorted columns (stable sort on time)."""
        t = np.asarray(t, dtype=np.int64)
        order = np.argsort(t, kind="stable")
        return cls(t[order], np.asarray(x)[order], np.asarray(y)[order],
                   np.asarray(p)[order], width, height)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.t)):
            yield Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    def window(self, t0: int, t1: int) -> "EventStream":
        """Events with t0 <= t < t1."""
        i0 = int(np.searchsorted(self.t, t0, side="left"))
        i1 = int(np.searchsorted(self.t, t1, side="left"))
        return EventStream(self.t[i0:i1], self.x[i0:i1], self.y[i0:i1], self.p[i0:i1],
                           self.width, self.height)

    @staticmethod
    def concatenate(streams, width: int, height: int) -> "EventStream":
        streams = list(streams)
        if not streams:
            return EventStream.empty(width, height)
        return EventStream.from_arrays(
            np.concatenate([s.t for s in streams]), np.concatenate([s.x for s in streams]),
            np.concatenate([s.y for s in streams]), np.concatenate([s.p for s in streams]),
            width, height)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    bins: np.ndarray
    t_start: int
    t_end: int


def parse_events(path, width: int, height: int, polarity: str = "auto") -> EventStream:
    """Read ``t_us,x,y,p`` lines.

    ``polarity`` is the declared convention: "signed" ({-1, +1}), "binary"
    ({0, 1}, 0 mapped to -1) or "auto" (either).
    """
    allowed = {"signed": {-1, 1}, "binary": {0, 1}, "auto": {-1, 0, 1}}
    if polarity not in allowed:
        raise ValueError(f"unknown polarity convention {polarity!r}")
    ok = allowed[polarity]
    ts, xs, ys, ps = [], [], [], []
    with open(path, encoding="utf-8") as f:
        for no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise EventParseError(no, f"expected 4 fields, got {len(parts)}")
            try:
                t, x, y, p = (int(s) for s in parts)
            except ValueError:
                raise EventParseError(no, f"non-integer field in {line!r}") from None
            if p not in ok:
                raise EventParseError(no, f"polarity {p} not allowed under {polarity!r}")
            if not (0 <= x < width and 0 <= y < height):
                raise EventParseError(no, f"pixel ({x}, {y}) outside {width}x{height} sensor")
            ts.append(t)
            xs.append(x)
            ys.append(y)
            ps.append(1 if p == 1 else -1)
    return EventStream.from_arrays(ts, xs, ys, ps, width, height)


def write_events(path, stream: EventStream) -> None:
    """Inverse of :func:`parse_events` (signed polarity)."""
    cols = np.stack([stream.t, stream.x, stream.y, stream.p.astype(np.int64)], axis=1)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if len(cols):
            np.savetxt(f, cols, fmt="%d", delimiter=",")


def voxelize(stream: EventStream, t0: int, t1: int, B: int = 5) -> VoxelGrid:
    if B < 1:
        raise ValueError("bin count must be >= 1")
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    s = stream.window(t0, t1)
    grid = np.zeros((B, stream.height, stream.width))
    if len(s):
        f = (s.t - t0).astype(float) / float(t1 - t0) * (B - 1)
        lo = np.floor(f).astype(np.int64)
        w_hi = f - lo
        p = s.p.astype(float)
        np.add.at(grid, (lo, s.y, s.x), p * (1.0 - w_hi))
        hi = np.minimum(lo + 1, B - 1)
        np.add.at(grid, (hi, s.y, s.x), p * w_hi)
    return VoxelGrid(grid, t0, t1)


def accumulate_patch(stream: EventStream, patch_center, half_width: int,
                     t: int, t_prime: int) -> np.ndarray:
    """Per-pixel polarity sum over events in [t, t_prime) inside the patch.

    Returned array is (2h+1, 2h+1), indexed [row, col] in local coordinates.
    """
    if not t < t_prime:
        raise ValueError("need t < t_prime")
    cx, cy = int(patch_center[0]), int(patch_center[1])
    h = int(half_width)
    if cx - h < 0 or cy - h < 0 or cx + h >= stream.width or cy + h >= stream.height:
        raise ValueError(f"patch at ({cx}, {cy}) with half width {h} exceeds sensor bounds")
    s = stream.window(t, t_prime)
    out = np.zeros((2 * h + 1, 2 * h + 1))
    inside = (np.abs(s.x - cx) <= h) & (np.abs(s.y - cy) <= h)
    np.add.at(out, (s.y[inside] - cy + h, s.x[inside] - cx + h), s.p[inside].astype(float))
    return out


def accumulate_image(stream: EventStream, t: int, t_prime: int) -> np.ndarray:
    """Whole-sensor polarity sum over [t, t_prime)."""
    s = stream.window(t, t_prime)
    out = np.zeros((stream.height, stream.width))
    np.add.at(out, (s.y, s.x), s.p.astype(float))
    return out

