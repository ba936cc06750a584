"""Shi-Tomasi ("good features to track") corner detection.

The structure tensor is accumulated from 3x3 Sobel gradients with uniform
block weighting; the corner response is the tensor's smaller eigenvalue.
Scores are computed in float64 with a fixed accumulation order so that an
independent scalar implementation reproduces them exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imgproc import GrayFrame


@dataclass(frozen=True)
class Corner:
    position: tuple  # (x, y)
    response: float

    def __post_init__(self):
        if self.response < 0:
            raise ValueError("corner response must be non-negative")


@dataclass(frozen=True)
class CornerSet:
    corners: tuple
    params: tuple  # (max_corners, quality_level, min_distance)

    def __len__(self) -> int:
        return len(self.corners)

    def positions(self) -> np.ndarray:
        if not self.corners:
            return np.zeros((0, 2), dtype=np.float64)
        return np.array([c.position for c in self.corners], dtype=np.float64)


def sobel_gradients(gray: GrayFrame):
    """3x3 Sobel derivatives (float64), zero outside the 1-px valid rim."""
    img = gray.intensities.astype(np.float64)
    h, w = img.shape
    gx = np.zeros((h, w), dtype=np.float64)
    gy = np.zeros((h, w), dtype=np.float64)
    # rows of the x-kernel: (right - left) weighted 1,2,1, normalized by 8
    a = img[:-2, 2:] - img[:-2, :-2]
    b = img[1:-1, 2:] - img[1:-1, :-2]
    c = img[2:, 2:] - img[2:, :-2]
    gx[1:-1, 1:-1] = (a + 2.0 * b + c) * 0.125
    d = img[2:, :-2] - img[:-2, :-2]
    e = img[2:, 1:-1] - img[:-2, 1:-1]
    f = img[2:, 2:] - img[:-2, 2:]
    gy[1:-1, 1:-1] = (d + 2.0 * e + f) * 0.125
    return gx, gy


def min_eigen_map(gray: GrayFrame, block_side: int = 3) -> np.ndarray:
    """Smaller structure-tensor eigenvalue per pixel; zero where the Sobel
    or block window would leave the frame."""
    if block_side < 1 or block_side % 2 == 0:
        raise ValueError("block_side must be odd and >= 1")
    gx, gy = sobel_gradients(gray)
    h, w = gx.shape
    rb = block_side // 2
    lo = 1 + rb
    if h - 2 * lo <= 0 or w - 2 * lo <= 0:
        raise ValueError("frame too small for the requested block size")
    sxx = np.zeros((h - 2 * lo, w - 2 * lo), dtype=np.float64)
    sxy = np.zeros_like(sxx)
    syy = np.zeros_like(sxx)
    for dy in range(-rb, rb + 1):
        for dx in range(-rb, rb + 1):
            px = gx[lo + dy : h - lo + dy, lo + dx : w - lo + dx]
            py = gy[lo + dy : h - lo + dy, lo + dx : w - lo + dx]
            sxx += px * px
            sxy += px * py
            syy += py * py
    lam = 0.5 * ((sxx + syy) - np.sqrt((sxx - syy) ** 2 + 4.0 * (sxy * sxy)))
    out = np.zeros((h, w), dtype=np.float64)
    out[lo : h - lo, lo : w - lo] = lam
    return out


def detect_corners(gray: GrayFrame, max_corners: int = 200,
                   quality_level: float = 0.03, min_distance: float = 10.0,
                   block_side: int = 3) -> CornerSet:
    """Threshold the min-eigenvalue map at quality_level x global max, then
    greedily suppress by descending response enforcing min_distance.

    Ties in response break by row-major scan order. Featureless frames yield
    an empty set.
    """
    if not 0.0 < quality_level < 1.0:
        raise ValueError("quality_level must lie in (0, 1)")
    if min_distance < 0:
        raise ValueError("min_distance must be >= 0")
    if max_corners < 1:
        raise ValueError("max_corners must be >= 1")
    params = (max_corners, quality_level, min_distance)

    scores = min_eigen_map(gray, block_side)
    max_score = scores.max()
    if max_score <= 0.0:
        return CornerSet(corners=(), params=params)
    thr = quality_level * max_score
    ys, xs = np.nonzero(scores >= thr)
    vals = scores[ys, xs]
    order = np.lexsort((xs, ys, -vals))
    xs = xs[order].astype(np.float64)
    ys = ys[order].astype(np.float64)
    vals = vals[order]

    min_d2 = float(min_distance) ** 2
    acc_x = np.empty(max_corners, dtype=np.float64)
    acc_y = np.empty(max_corners, dtype=np.float64)
    kept = []
    m = 0
    for i in range(xs.shape[0]):
        x = xs[i]
        y = ys[i]
        if m and min_d2 > 0.0:
            d2 = (acc_x[:m] - x) ** 2 + (acc_y[:m] - y) ** 2
            if (d2 < min_d2).any():
                continue
        acc_x[m] = x
        acc_y[m] = y
        m += 1
        kept.append(Corner(position=(float(x), float(y)), response=float(vals[i])))
        if m >= max_corners:
            break
    return CornerSet(corners=tuple(kept), params=params)
