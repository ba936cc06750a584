"""Weighted Lucas-Kanade optical flow: single-window solve, per-level
iterative refinement, coarse-to-fine pyramidal combination, and multi-frame
track bookkeeping.

The per-window solve is V = (A^T W A)^-1 A^T W b with A holding the spatial
derivatives, b the negated temporal ones, and W a center-heavy Gaussian.
The pyramid recursion starts at the coarsest level with a zero guess and, at
each finer level, doubles the carried flow, applies it as a displacement,
and adds the residual from a fresh iterative solve.

All points of a frame step are solved in one vectorized batch; the public
single-point operations run the same code path on a batch of one, so batch
and scalar results are bitwise identical.
"""
from __future__ import annotations

import functools
from contextlib import contextmanager
from dataclasses import dataclass, replace

import numpy as np

from .imgproc import (
    GradientWindow,
    GrayFrame,
    OutOfBounds,
    Pyramid,
    gradient_images,
    window_in_bounds,
    window_margin,
)


class ApertureDegenerate(RuntimeError):
    """Window gradients span fewer than two directions; flow is ambiguous."""


class Diverged(RuntimeError):
    """The flow estimate left the frame."""


class TrackLost(RuntimeError):
    """Pyramidal solve failed at some level; __cause__ carries the reason."""


@dataclass(frozen=True)
class FlowVector:
    vx: float
    vy: float

    def __post_init__(self):
        if not (np.isfinite(self.vx) and np.isfinite(self.vy)):
            raise ValueError("flow components must be finite")


@dataclass(frozen=True)
class FlowConfig:
    window_side: int = 15
    num_levels: int = 5
    max_iterations_per_level: int = 30
    convergence_eps: float = 0.01
    min_eigen_threshold: float | None = None

    def __post_init__(self):
        if self.window_side < 3 or self.window_side % 2 == 0:
            raise ValueError("window_side must be odd and >= 3")
        if self.num_levels < 1:
            raise ValueError("num_levels must be >= 1")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be > 0")
        if self.max_iterations_per_level < 1:
            raise ValueError("max_iterations_per_level must be >= 1")

    @property
    def eigen_threshold(self) -> float:
        if self.min_eigen_threshold is not None:
            return self.min_eigen_threshold
        return 1e-4 * self.window_side * self.window_side


@dataclass(frozen=True)
class Track:
    id: int
    points: tuple
    status: str = "active"  # active | lost

    @property
    def last(self) -> tuple:
        return self.points[-1]


@dataclass(frozen=True)
class TrackSet:
    tracks: tuple = ()
    next_id: int = 0

    def active(self):
        return [t for t in self.tracks if t.status == "active"]

    def seed(self, positions) -> "TrackSet":
        """New TrackSet with one fresh single-point track per position."""
        new = list(self.tracks)
        nid = self.next_id
        for p in positions:
            new.append(Track(id=nid, points=((float(p[0]), float(p[1])),)))
            nid += 1
        return TrackSet(tracks=tuple(new), next_id=nid)


@functools.lru_cache(maxsize=8)
def gaussian_weights(window_side: int) -> np.ndarray:
    """Isotropic Gaussian over the window, sigma = window_side / 3,
    normalized to sum 1. Read-only."""
    r = window_side // 2
    off = np.arange(-r, r + 1, dtype=np.float64)
    oy, ox = np.meshgrid(off, off, indexing="ij")
    sigma = window_side / 3.0
    w = np.exp(-(ox ** 2 + oy ** 2) / (2.0 * sigma * sigma)).reshape(-1)
    w /= w.sum()
    w.setflags(write=False)
    return w


# Optional instrumentation: when active, every successful solve appends
# (||A^T W (A v - b)||, ||A^T W b||) so stationarity can be audited without
# retaining the full systems.
_recorder: list | None = None


@contextmanager
def record_solves():
    global _recorder
    prev = _recorder
    _recorder = []
    try:
        yield _recorder
    finally:
        _recorder = prev


@dataclass(frozen=True)
class LkSystem:
    """The weighted least-squares system of one window: design samples
    a = (ix_i, iy_i), negated temporal samples b = -it_i, and the diagonal
    weights w."""

    a: np.ndarray  # (n, 2)
    b: np.ndarray  # (n,)
    w: np.ndarray  # (n,)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).reshape(-1, 2)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not (a.shape[0] == b.size == w.size):
            raise ValueError("system pieces must share one sample count")
        if (w <= 0).any():
            raise ValueError("weights must be positive")
        for name, arr in (("a", a), ("b", b), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_window(cls, window: GradientWindow,
                    weights: np.ndarray | None = None) -> "LkSystem":
        if weights is None:
            weights = gaussian_weights(window.window_side)
        a = np.stack([window.ix.astype(np.float64),
                      window.iy.astype(np.float64)], axis=1)
        return cls(a=a, b=-window.it.astype(np.float64), w=np.asarray(weights))

    def normal_equations(self):
        """(Sxx, Sxy, Syy, bx, by) of A^T W A v = A^T W b, in float64."""
        wix = self.w * self.a[:, 0]
        wiy = self.w * self.a[:, 1]
        return (wix @ self.a[:, 0], wix @ self.a[:, 1], wiy @ self.a[:, 1],
                wix @ self.b, wiy @ self.b)


def build_system(window: GradientWindow, weights: np.ndarray | None = None):
    """Normal-equation pieces (Sxx, Sxy, Syy, bx, by) for one window."""
    return LkSystem.from_window(window, weights).normal_equations()


def lk_solve(window: GradientWindow, weights: np.ndarray | None = None,
             min_eigen_threshold: float | None = None) -> FlowVector:
    """Closed-form weighted least-squares flow for one derivative window."""
    sxx, sxy, syy, bx, by = build_system(window, weights)
    if min_eigen_threshold is None:
        min_eigen_threshold = 1e-4 * window.ix.size
    lam_min = 0.5 * ((sxx + syy) - np.sqrt((sxx - syy) ** 2 + 4.0 * sxy * sxy))
    if lam_min < min_eigen_threshold:
        raise ApertureDegenerate(
            f"min eigenvalue {lam_min:.3e} below threshold {min_eigen_threshold:.3e}"
        )
    det = sxx * syy - sxy * sxy
    vx = (syy * bx - sxy * by) / det
    vy = (-sxy * bx + sxx * by) / det
    if _recorder is not None:
        rx = sxx * vx + sxy * vy - bx
        ry = sxy * vx + syy * vy - by
        _recorder.append((float(np.hypot(rx, ry)), float(np.hypot(bx, by))))
    return FlowVector(vx=float(vx), vy=float(vy))


# ---------------------------------------------------------------------------
# Vectorized per-level engine
# ---------------------------------------------------------------------------

_OK = 0
_APERTURE = 1
_DIVERGED = 2


class _LevelImages:
    """Raveled intensity + gradient planes of one pyramid level, edge-padded
    by the window margin.

    Padding keeps every point that is inside the level image samplable even
    when its window pokes past the border, which preserves coarse-to-fine
    support for near-border tracks; the strict true-frame border policy is
    enforced at level 0 via bounds checks, never via the padding.
    """

    def __init__(self, frame: GrayFrame, pad: int):
        self.w = frame.width
        self.h = frame.height
        self.pad = pad
        padded = np.pad(frame.intensities, pad, mode="edge")
        gframe = GrayFrame.from_array(padded)
        gx, gy = gradient_images(gframe)
        self.stride = self.w + 2 * pad
        self.img = padded.ravel()
        self.gx = gx.ravel()
        self.gy = gy.ravel()


def _bilinear_weights(x, y, level: _LevelImages):
    """Per-point flat base index (into the padded plane) and the four
    bilinear corner weights.

    Coordinates are clamped into the level image box first so that gathers
    stay in range even for lanes that are later masked out.
    """
    cx = np.clip(x, 0.0, level.w - 1)
    cy = np.clip(y, 0.0, level.h - 1)
    x0 = np.floor(cx)
    y0 = np.floor(cy)
    fx = (cx - x0).astype(np.float32)[:, None]
    fy = (cy - y0).astype(np.float32)[:, None]
    w11 = fx * fy
    w10 = fy - w11
    w01 = fx - w11
    w00 = np.float32(1.0) - fx - fy + w11
    base = ((y0.astype(np.intp) + level.pad) * level.stride
            + x0.astype(np.intp) + level.pad)[:, None]
    return base, w00, w01, w10, w11


def _gather(plane, idx, stride, w00, w01, w10, w11):
    i00 = np.take(plane, idx)
    i01 = np.take(plane, idx + 1)
    i10 = np.take(plane, idx + stride)
    i11 = np.take(plane, idx + stride + 1)
    return i00 * w00 + i01 * w01 + i10 * w10 + i11 * w11


def _refine_level(prev: _LevelImages, curr: _LevelImages, pts: np.ndarray,
                  guess: np.ndarray, cfg: FlowConfig, strict: bool):
    """Iteratively refine flow for a batch of points at one pyramid level.

    Returns (v, status) where v accumulates guess + corrections. In strict
    mode (level 0 and the public single-level API) windows must fit inside
    the true frame and violations fail the point; at coarse levels the
    padded planes keep near-border windows usable and estimates that leave
    the level image simply stop refining there.
    """
    n = pts.shape[0]
    side = cfg.window_side
    r = side // 2
    margin = window_margin(side)
    wts = gaussian_weights(side)

    status = np.full(n, _OK, dtype=np.uint8)
    v = guess.astype(np.float64).copy()

    px = pts[:, 0]
    py = pts[:, 1]
    if strict:
        prev_ok = ((px - margin >= 0.0) & (px + margin <= prev.w - 1)
                   & (py - margin >= 0.0) & (py + margin <= prev.h - 1))
        status[~prev_ok] = _DIVERGED
    else:
        prev_ok = np.ones(n, dtype=bool)
    if not prev_ok.any():
        return v, status

    off = np.arange(-r, r + 1, dtype=np.intp)
    ooy, oox = np.meshgrid(off, off, indexing="ij")
    off_idx = (ooy.reshape(-1) * prev.stride + oox.reshape(-1))[None, :]

    base, w00, w01, w10, w11 = _bilinear_weights(px, py, prev)
    idx = base + off_idx
    pw = _gather(prev.img, idx, prev.stride, w00, w01, w10, w11)
    ixw = _gather(prev.gx, idx, prev.stride, w00, w01, w10, w11).astype(np.float64)
    iyw = _gather(prev.gy, idx, prev.stride, w00, w01, w10, w11).astype(np.float64)

    wix = ixw * wts[None, :]
    wiy = iyw * wts[None, :]
    sxx = np.einsum("nk,nk->n", wix, ixw)
    sxy = np.einsum("nk,nk->n", wix, iyw)
    syy = np.einsum("nk,nk->n", wiy, iyw)
    lam_min = 0.5 * ((sxx + syy) - np.sqrt((sxx - syy) ** 2 + 4.0 * sxy * sxy))
    degenerate = prev_ok & (lam_min < cfg.eigen_threshold)
    status[degenerate] = _APERTURE
    det = np.where(degenerate | ~prev_ok, 1.0, sxx * syy - sxy * sxy)

    active = prev_ok & ~degenerate
    curr_off_idx = off_idx if curr.stride == prev.stride else (
        (ooy.reshape(-1) * curr.stride + oox.reshape(-1))[None, :])

    eps2 = cfg.convergence_eps ** 2
    for _ in range(cfg.max_iterations_per_level):
        if not active.any():
            break
        cx = px + v[:, 0]
        cy = py + v[:, 1]
        if strict:
            curr_ok = ((cx - margin >= 0.0) & (cx + margin <= curr.w - 1)
                       & (cy - margin >= 0.0) & (cy + margin <= curr.h - 1))
        else:
            curr_ok = ((cx >= 0.0) & (cx <= curr.w - 1)
                       & (cy >= 0.0) & (cy <= curr.h - 1))
        oob = active & ~curr_ok
        if oob.any():
            if strict:
                status[oob] = _DIVERGED
            active &= curr_ok
            if not active.any():
                break
        cbase, c00, c01, c10, c11 = _bilinear_weights(cx, cy, curr)
        cw = _gather(curr.img, cbase + curr_off_idx, curr.stride,
                     c00, c01, c10, c11)
        it = cw - pw
        bx = -np.einsum("nk,nk->n", wix, it)
        by = -np.einsum("nk,nk->n", wiy, it)
        dvx = (syy * bx - sxy * by) / det
        dvy = (-sxy * bx + sxx * by) / det
        if _recorder is not None:
            lanes = np.flatnonzero(active)
            rx = sxx[lanes] * dvx[lanes] + sxy[lanes] * dvy[lanes] - bx[lanes]
            ry = sxy[lanes] * dvx[lanes] + syy[lanes] * dvy[lanes] - by[lanes]
            _recorder.extend(zip(np.hypot(rx, ry).tolist(),
                                 np.hypot(bx[lanes], by[lanes]).tolist()))
        v[active, 0] += dvx[active]
        v[active, 1] += dvy[active]
        step2 = dvx * dvx + dvy * dvy
        active &= step2 >= eps2
    return v, status


def _track_batch(pyr_prev: Pyramid, pyr_curr: Pyramid, points: np.ndarray,
                 cfg: FlowConfig):
    """Pyramidal flow for a batch of level-0 points.

    Returns (flow (n,2) float64, status (n,) uint8). Coarse levels where a
    point's window does not fit are skipped (the point keeps its carried
    guess); level 0 is strict per the border policy.
    """
    if pyr_prev.num_levels != cfg.num_levels or pyr_curr.num_levels != cfg.num_levels:
        raise ValueError("pyramids must carry cfg.num_levels levels")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = points.shape[0]
    status = np.full(n, _OK, dtype=np.uint8)
    g = np.zeros((n, 2), dtype=np.float64)
    if n == 0:
        return g, status

    pad = window_margin(cfg.window_side)
    prev_levels = [_LevelImages(f, pad) for f in pyr_prev.levels]
    curr_levels = [_LevelImages(f, pad) for f in pyr_curr.levels]

    for level in range(cfg.num_levels - 1, -1, -1):
        scale = 0.5 ** level
        if level != cfg.num_levels - 1:
            g *= 2.0
        q = points * scale
        ok = status == _OK
        if not ok.any():
            break
        v, lvl_status = _refine_level(
            prev_levels[level], curr_levels[level], q[ok], g[ok], cfg,
            strict=(level == 0),
        )
        lanes = np.flatnonzero(ok)
        g[lanes] = v
        failed = lvl_status != _OK
        status[lanes[failed]] = lvl_status[failed]
    return g, status


def _status_error(code: int) -> RuntimeError:
    if code == _APERTURE:
        return ApertureDegenerate("window gradients are degenerate")
    return Diverged("flow estimate left the frame")


def refine_at_level(prev: GrayFrame, curr: GrayFrame, point, guess: FlowVector,
                    cfg: FlowConfig) -> FlowVector:
    """One level of iterative refinement; returns the residual flow beyond
    ``guess``."""
    cx, cy = float(point[0]), float(point[1])
    if not window_in_bounds(prev.width, prev.height, cx, cy, cfg.window_side):
        raise OutOfBounds(
            f"window of side {cfg.window_side} at ({cx}, {cy}) leaves the frame"
        )
    pts = np.array([[cx, cy]], dtype=np.float64)
    g = np.array([[guess.vx, guess.vy]], dtype=np.float64)
    pad = window_margin(cfg.window_side)
    v, status = _refine_level(_LevelImages(prev, pad), _LevelImages(curr, pad),
                              pts, g, cfg, strict=True)
    if status[0] != _OK:
        raise _status_error(int(status[0]))
    return FlowVector(vx=float(v[0, 0] - guess.vx), vy=float(v[0, 1] - guess.vy))


def pyramidal_flow(pyr_prev: Pyramid, pyr_curr: Pyramid, point,
                   cfg: FlowConfig) -> FlowVector:
    """Coarse-to-fine flow at one level-0 point.

    Implements the five-step recursion: solve the coarsest level from a zero
    guess, then per finer level double the carried flow, apply it, refine,
    and add the residual. Raises TrackLost (wrapping the per-level cause) on
    failure.
    """
    pts = np.asarray([[float(point[0]), float(point[1])]], dtype=np.float64)
    flow, status = _track_batch(pyr_prev, pyr_curr, pts, cfg)
    if status[0] != _OK:
        cause = _status_error(int(status[0]))
        raise TrackLost(f"point {tuple(point)}: {cause}") from cause
    return FlowVector(vx=float(flow[0, 0]), vy=float(flow[0, 1]))


def advance_tracks(tracks: TrackSet, pyr_prev: Pyramid, pyr_curr: Pyramid,
                   cfg: FlowConfig) -> TrackSet:
    """Extend every active track by one frame of pyramidal flow.

    Failed solves mark the track lost with its point list unchanged; the
    result is a fresh immutable snapshot.
    """
    active = tracks.active()
    out = [t for t in tracks.tracks if t.status != "active"]
    if active:
        pts = np.array([t.last for t in active], dtype=np.float64)
        flow, status = _track_batch(pyr_prev, pyr_curr, pts, cfg)
        new_pts = pts + flow
        inside = ((new_pts[:, 0] >= 0.0) & (new_pts[:, 0] <= pyr_curr.base.width - 1)
                  & (new_pts[:, 1] >= 0.0) & (new_pts[:, 1] <= pyr_curr.base.height - 1))
        for i, t in enumerate(active):
            if status[i] == _OK and inside[i]:
                out.append(replace(
                    t, points=t.points + ((float(new_pts[i, 0]), float(new_pts[i, 1])),)))
            else:
                out.append(replace(t, status="lost"))
    out.sort(key=lambda t: t.id)
    return TrackSet(tracks=tuple(out), next_id=tracks.next_id)
