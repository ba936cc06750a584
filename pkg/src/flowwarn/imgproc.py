"""Frame containers, grayscale conversion, image pyramids, and derivative windows.

Everything downstream (corner detection, the flow solver) consumes the
float32 grayscale frames produced here. All containers are immutable after
construction; their pixel buffers are marked read-only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Rec. 601 luma weights.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)

# Separable 5-tap binomial smoothing kernel applied before pyramid decimation.
BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0], dtype=np.float32) / 16.0

MIN_FRAME_SIDE = 16


class TooSmallForLevels(ValueError):
    """Frame cannot support the requested number of pyramid levels."""


class OutOfBounds(ValueError):
    """A derivative window cannot be placed fully inside the frame."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RgbFrame:
    """8-bit RGB frame, shape (height, width, 3), plus a monotone frame index."""

    width: int
    height: int
    pixels: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        if self.width < MIN_FRAME_SIDE or self.height < MIN_FRAME_SIDE:
            raise ValueError(
                f"frame must be at least {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}, "
                f"got {self.width}x{self.height}"
            )
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel buffer shape {px.shape} does not match "
                f"{self.height}x{self.width}x3"
            )
        object.__setattr__(self, "pixels", _freeze(px))

    @classmethod
    def from_array(cls, pixels: np.ndarray, frame_index: int = 0) -> "RgbFrame":
        pixels = np.asarray(pixels)
        if pixels.ndim == 2:  # grayscale input: replicate channels
            pixels = np.repeat(pixels[:, :, None], 3, axis=2)
        h, w = pixels.shape[:2]
        return cls(width=w, height=h, pixels=pixels, frame_index=frame_index)


@dataclass(frozen=True)
class GrayFrame:
    """Single-channel intensities in [0, 255], stored float32 at (height, width)."""

    width: int
    height: int
    intensities: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.intensities, dtype=np.float32)
        if data.shape != (self.height, self.width):
            raise ValueError(
                f"intensity buffer shape {data.shape} does not match "
                f"{self.height}x{self.width}"
            )
        object.__setattr__(self, "intensities", _freeze(data))

    @classmethod
    def from_array(cls, intensities: np.ndarray) -> "GrayFrame":
        intensities = np.asarray(intensities)
        h, w = intensities.shape
        return cls(width=w, height=h, intensities=intensities)


@dataclass(frozen=True)
class Pyramid:
    """Coarse-to-fine level stack; level 0 is full resolution."""

    levels: tuple

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def base(self) -> GrayFrame:
        return self.levels[0]


@dataclass(frozen=True)
class GradientWindow:
    """Spatial and temporal derivative samples over one square window.

    ``ix``/``iy`` are central differences of the previous frame and ``it`` is
    the frame difference, all bilinearly sampled on the window's pixel
    lattice around ``center``.
    """

    ix: np.ndarray
    iy: np.ndarray
    it: np.ndarray
    center: tuple
    window_side: int = field(default=0)

    def __post_init__(self):
        n = self.ix.size
        if self.iy.size != n or self.it.size != n:
            raise ValueError("ix, iy, it must have identical length")
        side = self.window_side or int(round(n ** 0.5))
        if side * side != n:
            raise ValueError(f"window of {n} samples is not square")
        object.__setattr__(self, "window_side", side)
        for name in ("ix", "iy", "it"):
            object.__setattr__(self, name, _freeze(getattr(self, name).reshape(-1)))


def to_grayscale(frame: RgbFrame) -> GrayFrame:
    """Rec. 601 luminance, kept at fractional precision."""
    weights = np.asarray(GRAY_WEIGHTS, dtype=np.float32)
    luma = frame.pixels.astype(np.float32) @ weights
    return GrayFrame(width=frame.width, height=frame.height, intensities=luma)


def _downsample(img: np.ndarray) -> np.ndarray:
    """Binomial-smooth then 2x-decimate; output dims are floor(input/2).

    Only the retained (even-lattice) rows and columns are filtered, which
    keeps the per-frame cost low enough for the real-time budget.
    """
    h, w = img.shape
    ho, wo = h // 2, w // 2
    p = np.pad(img, 2, mode="symmetric")
    r = (
        p[0 : 2 * ho : 2]
        + 4.0 * p[1 : 2 * ho + 1 : 2]
        + 6.0 * p[2 : 2 * ho + 2 : 2]
        + 4.0 * p[3 : 2 * ho + 3 : 2]
        + p[4 : 2 * ho + 4 : 2]
    ) * np.float32(1.0 / 16.0)
    c = (
        r[:, 0 : 2 * wo : 2]
        + 4.0 * r[:, 1 : 2 * wo + 1 : 2]
        + 6.0 * r[:, 2 : 2 * wo + 2 : 2]
        + 4.0 * r[:, 3 : 2 * wo + 3 : 2]
        + r[:, 4 : 2 * wo + 4 : 2]
    ) * np.float32(1.0 / 16.0)
    return c


def build_pyramid(gray: GrayFrame, num_levels: int = 5) -> Pyramid:
    """Stack of successively halved frames; level k+1 dims = floor(level k / 2)."""
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    need = 1 << (num_levels - 1)
    if gray.width < need or gray.height < need:
        raise TooSmallForLevels(
            f"{gray.width}x{gray.height} frame cannot support {num_levels} "
            f"levels (needs at least {need} on each axis)"
        )
    levels = [gray]
    img = gray.intensities
    for _ in range(num_levels - 1):
        img = _downsample(img)
        levels.append(GrayFrame.from_array(img))
    return Pyramid(levels=tuple(levels))


def sample_bilinear(frame: GrayFrame, xs, ys) -> np.ndarray:
    """Bilinear samples at (xs, ys); integer coordinates reproduce stored pixels.

    Valid coordinate domain is [0, width-1] x [0, height-1]; callers are
    responsible for bounds (values outside clamp to the edge pixel pair).
    """
    img = frame.intensities
    h, w = img.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x0 = np.clip(np.floor(xs), 0, w - 2).astype(np.intp)
    y0 = np.clip(np.floor(ys), 0, h - 2).astype(np.intp)
    fx = (xs - x0).astype(np.float32)
    fy = (ys - y0).astype(np.float32)
    i00 = img[y0, x0]
    i01 = img[y0, x0 + 1]
    i10 = img[y0 + 1, x0]
    i11 = img[y0 + 1, x0 + 1]
    top = i00 * (1.0 - fx) + i01 * fx
    bot = i10 * (1.0 - fx) + i11 * fx
    return top * (1.0 - fy) + bot * fy


def window_margin(window_side: int) -> int:
    """Distance a window center must keep from every border (central diffs
    need one extra pixel beyond the window itself)."""
    return window_side // 2 + 1


def window_in_bounds(frame_w: int, frame_h: int, cx: float, cy: float,
                     window_side: int) -> bool:
    m = window_margin(window_side)
    return (cx - m >= 0.0 and cx + m <= frame_w - 1
            and cy - m >= 0.0 and cy + m <= frame_h - 1)


def window_lattice(center, window_side: int):
    """Sampling coordinates of the window's pixel lattice around ``center``."""
    r = window_side // 2
    off = np.arange(-r, r + 1, dtype=np.float64)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    return center[0] + ox.reshape(-1), center[1] + oy.reshape(-1)


def gradient_window(prev: GrayFrame, curr: GrayFrame, center,
                    window_side: int = 15) -> GradientWindow:
    """Derivative samples feeding one Lucas-Kanade solve.

    ix, iy are central differences of ``prev``; it = curr - prev. Windows
    that do not fit fully inside both frames are rejected rather than
    clamped.
    """
    if (prev.width, prev.height) != (curr.width, curr.height):
        raise ValueError("prev and curr frames must share dimensions")
    if window_side < 3 or window_side % 2 == 0:
        raise ValueError("window_side must be odd and >= 3")
    cx, cy = float(center[0]), float(center[1])
    if not window_in_bounds(prev.width, prev.height, cx, cy, window_side):
        raise OutOfBounds(
            f"window of side {window_side} at ({cx}, {cy}) leaves the "
            f"{prev.width}x{prev.height} frame"
        )
    xs, ys = window_lattice((cx, cy), window_side)
    ix = (sample_bilinear(prev, xs + 1.0, ys) - sample_bilinear(prev, xs - 1.0, ys)) * 0.5
    iy = (sample_bilinear(prev, xs, ys + 1.0) - sample_bilinear(prev, xs, ys - 1.0)) * 0.5
    it = sample_bilinear(curr, xs, ys) - sample_bilinear(prev, xs, ys)
    return GradientWindow(ix=ix, iy=iy, it=it, center=(cx, cy),
                          window_side=window_side)


def gradient_images(gray: GrayFrame):
    """Full-frame central-difference images (gx, gy), zero on the 1-px rim.

    Bilinear samples of these equal central differences of bilinear samples
    of the frame, so the flow solver shares them across all tracked points.
    """
    img = gray.intensities
    gx = np.empty_like(img)
    gy = np.empty_like(img)
    np.subtract(img[:, 2:], img[:, :-2], out=gx[:, 1:-1])
    gx[:, 1:-1] *= 0.5
    gx[:, 0] = 0.0
    gx[:, -1] = 0.0
    np.subtract(img[2:, :], img[:-2, :], out=gy[1:-1, :])
    gy[1:-1, :] *= 0.5
    gy[0, :] = 0.0
    gy[-1, :] = 0.0
    return gx, gy
