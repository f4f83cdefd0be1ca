"""Classical image operations: enhancement, SNR maps, fusion, gradients,
Harris corners and hole filling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True, eq=False)
class SnrMap:
    values: np.ndarray
    epsilon: float


@dataclass(frozen=True)
class Corner:
    x: int
    y: int
    harris_score: float
    snr: float = 0.0


@dataclass(frozen=True)
class CornerSet:
    corners: list[Corner] = field(default_factory=list)

    def __len__(self):
        return len(self.corners)

    def __iter__(self):
        return iter(self.corners)

    def xy(self) -> np.ndarray:
        return np.array([(c.x, c.y) for c in self.corners], dtype=float).reshape(-1, 2)


def as_hwc(image) -> np.ndarray:
    a = np.asarray(image, dtype=float)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ValueError(f"expected HxW, HxWx1 or HxWx3 image, got shape {a.shape}")
    return a


def to_gray(image) -> np.ndarray:
    a = as_hwc(image)
    if a.shape[2] == 1:
        return a[..., 0]
    return a @ LUMA


def enhance(image, illumination) -> np.ndarray:
    img = as_hwc(image)
    L = np.asarray(illumination, dtype=float)
    if L.ndim == 3:
        if L.shape[2] != 1:
            raise ValueError("illumination must have a single channel")
        L = L[..., 0]
    if L.shape != img.shape[:2]:
        raise ValueError(f"illumination shape {L.shape} does not match image {img.shape[:2]}")
    if np.any(L <= 0):
        raise ValueError("illumination must be strictly positive")
    return np.clip(img * L[..., None], 0.0, 1.0)


def estimate_illumination(image, sigma: float = 3.0, target: float = 0.5,
                          floor: float = 0.02) -> np.ndarray:
    """Classical stand-in for a learned illumination estimator.

    Smooths the max-channel prior and returns the per-pixel gain that lifts it
    to ``target`` brightness.
    """
    prior = as_hwc(image).max(axis=2)
    smooth = ndimage.gaussian_filter(prior, sigma, mode="nearest")
    return target / np.maximum(smooth, floor)


def snr_map(enhanced, kernel: int = 5, epsilon: float = 1e-3) -> SnrMap:
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be a positive odd size, got {kernel}")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    g = to_gray(enhanced)
    # direct weighted sum; the running-sum box filter can go slightly negative
    smooth = ndimage.correlate(g, np.full((kernel, kernel), 1.0 / kernel ** 2), mode="nearest")
    return SnrMap(smooth / (np.abs(g - smooth) + epsilon), epsilon)


def normalize_snr(snr) -> np.ndarray:
    v = np.asarray(getattr(snr, "values", snr), dtype=float)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def snr_fusion(f_img, f_evt, m_hat) -> np.ndarray:
    f_img = np.asarray(f_img, dtype=float)
    f_evt = np.asarray(f_evt, dtype=float)
    m = np.asarray(m_hat, dtype=float)
    if f_img.shape != f_evt.shape or f_img.ndim != 3:
        raise ValueError(f"feature shapes differ or are not HxWxC: {f_img.shape} vs {f_evt.shape}")
    if m.shape != f_img.shape[:2]:
        raise ValueError(f"SNR map shape {m.shape} does not match features {f_img.shape[:2]}")
    m = m[..., None]
    return np.concatenate([f_img * m, f_evt * (1.0 - m)], axis=2)


def resample_to(m, shape) -> np.ndarray:
    """Bilinear resampling of a 2D map to ``shape`` (align-corners style)."""
    m = np.asarray(m, dtype=float)
    rows = np.linspace(0, m.shape[0] - 1, shape[0])
    cols = np.linspace(0, m.shape[1] - 1, shape[1])
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(m, [rr, cc], order=1, mode="nearest")


def image_gradient(image) -> np.ndarray:
    """(H, W, 2) gradient (d/dx, d/dy); central inside, one-sided at borders."""
    g = np.asarray(image, dtype=float)
    if g.ndim == 3:
        if g.shape[2] != 1:
            raise ValueError("gradient expects a single-channel image")
        g = g[..., 0]
    gy, gx = np.gradient(g)
    return np.stack([gx, gy], axis=-1)


def harris_response(image, k: float = 0.04, sigma: float = 1.0) -> np.ndarray:
    g = np.asarray(image, dtype=float)
    if g.ndim == 3:
        g = to_gray(g)
    grad = image_gradient(g)
    ix, iy = grad[..., 0], grad[..., 1]
    sxx = ndimage.gaussian_filter(ix * ix, sigma, mode="nearest")
    syy = ndimage.gaussian_filter(iy * iy, sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(ix * iy, sigma, mode="nearest")
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def harris_corners(image, k: float = 0.04, nms_radius: int = 5, max_corners: int = 64,
                   border_margin: int = 7, sigma: float = 1.0, rel_threshold: float = 1e-2,
                   snr=None) -> CornerSet:
    """Harris corners with greedy non-maximum suppression.

    Candidates must exceed ``rel_threshold`` times the strongest response.
    Corners are returned strongest first; ``snr`` (map or SnrMap) is sampled
    at each corner when given.
    """
    R = harris_response(image, k, sigma)
    H, W = R.shape
    rmax = R.max()
    if not rmax > 0:
        return CornerSet([])
    cand = (R >= ndimage.maximum_filter(R, size=3, mode="nearest")) & (R > rel_threshold * rmax)
    b = int(border_margin)
    cand[:b, :] = False
    cand[H - b:, :] = False
    cand[:, :b] = False
    cand[:, W - b:] = False
    ys, xs = np.nonzero(cand)
    scores = R[ys, xs]
    # stable order: score descending, then raster order
    order = np.lexsort((xs, ys, -scores))
    snr_vals = None if snr is None else np.asarray(getattr(snr, "values", snr), dtype=float)
    kept: list[Corner] = []
    r2 = float(nms_radius) ** 2
    for i in order:
        x, y = int(xs[i]), int(ys[i])
        if any((c.x - x) ** 2 + (c.y - y) ** 2 <= r2 for c in kept):
            continue
        s = 0.0 if snr_vals is None else float(snr_vals[y, x])
        kept.append(Corner(x, y, float(scores[i]), s))
        if len(kept) >= max_corners:
            break
    return CornerSet(kept)


def fill_holes(image, valid_mask, radius: int = 4):
    """Inverse-distance weighted fill of invalid pixels from valid neighbours.

    Returns (filled image, unfilled mask); holes with no valid neighbour
    within ``radius`` keep their value and are flagged in the mask.
    """
    img = np.asarray(image, dtype=float)
    squeeze = img.ndim == 2
    a = img[..., None] if squeeze else img
    valid = np.asarray(valid_mask, dtype=bool)
    H, W = valid.shape
    num = np.zeros_like(a)
    den = np.zeros((H, W))
    r = int(radius)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            d = np.hypot(dx, dy)
            if d == 0 or d > r:
                continue
            w = 1.0 / d
            ys0, ys1 = max(0, -dy), min(H, H - dy)
            xs0, xs1 = max(0, -dx), min(W, W - dx)
            src_valid = valid[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
            num[ys0:ys1, xs0:xs1] += w * src_valid[..., None] * a[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
            den[ys0:ys1, xs0:xs1] += w * src_valid
    holes = ~valid
    fillable = holes & (den > 0)
    out = a.copy()
    out[fillable] = num[fillable] / den[fillable][:, None]
    unfilled = holes & ~fillable
    return (out[..., 0] if squeeze else out), unfilled
