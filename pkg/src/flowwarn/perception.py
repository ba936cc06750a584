"""Pluggable object-detection and depth-estimation backends, replay file
formats, and the scale-invariant log loss used to score depth backends.

Backends are deliberately simple stand-ins for neural detectors/estimators:
an *oracle* backend reads simulator ground truth, a *replay* backend reads
pre-recorded files, and a *constant* backend fills a uniform depth. A live
backend can plug in behind the same two operations later.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coco import class_label
from .imgproc import RgbFrame

DEPTH_MAGIC = b"DPTH"
FAR_DEPTH = 255.0


class ReplayGap(LookupError):
    """Replay source has no record for the requested frame index."""


class DimensionMismatch(ValueError):
    """Depth map dimensions disagree with the frame being processed."""


class NonPositiveDepth(ValueError):
    """Log-based loss is undefined for non-positive depth values."""


@dataclass(frozen=True)
class Detection:
    bbox: tuple  # (x_min, y_min, x_max, y_max) pixels
    class_id: int
    score: float
    class_label: str = ""

    def __post_init__(self):
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise ValueError(f"degenerate bbox {self.bbox}")
        label = class_label(self.class_id)  # validates the id range
        if self.class_label and self.class_label != label:
            raise ValueError(
                f"class_label {self.class_label!r} does not match id "
                f"{self.class_id} ({label!r})"
            )
        object.__setattr__(self, "class_label", label)
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")

    @property
    def center_x(self) -> float:
        return 0.5 * (self.bbox[0] + self.bbox[2])


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel nearness on a 0-255 scale; smaller values are nearer."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.shape != (self.height, self.width):
            raise ValueError(
                f"depth buffer shape {vals.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if vals.size and (vals.min() < 0.0 or vals.max() > 255.0):
            raise ValueError("depth values must lie in [0, 255]")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, values: np.ndarray) -> "DepthMap":
        values = np.asarray(values)
        h, w = values.shape
        return cls(width=w, height=h, values=values)


@dataclass
class BackendSpec:
    """Which provider answers detect/estimate_depth calls.

    kind "oracle": source is a ground-truth provider exposing
    detections_at(t) / depth_at(t) (e.g. the scene simulator, or a
    perturbing wrapper around it). kind "replay": source is a file path.
    kind "constant": source is a depth value in [0, 255] (depth only).
    """

    kind: str
    source: object = None
    strict: bool = True
    _runtime: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("oracle", "replay", "constant"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "constant":
            v = float(self.source)
            if not 0.0 <= v <= 255.0:
                raise ValueError(f"constant depth {v} outside [0, 255]")

    def runtime(self, for_depth: bool):
        if self._runtime is None:
            if self.kind == "replay":
                path = Path(self.source)
                self._runtime = (DepthReplay(path) if for_depth
                                 else DetectionReplay(path))
            else:
                self._runtime = self.source
        return self._runtime


def detect(frame_index: int, frame: RgbFrame, backend: BackendSpec):
    """Detections for one frame, sorted by descending score."""
    if backend.kind == "constant":
        raise ValueError("constant backends provide depth, not detections")
    if backend.kind == "oracle":
        dets = list(backend.runtime(False).detections_at(frame_index))
    else:
        dets = backend.runtime(False).records_for(frame_index, strict=backend.strict)
    return sorted(dets, key=lambda d: -d.score)


def estimate_depth(frame_index: int, frame: RgbFrame, backend: BackendSpec) -> DepthMap:
    """Depth map for one frame; replayed maps must match the frame size."""
    if backend.kind == "constant":
        fill = np.full((frame.height, frame.width), float(backend.source),
                       dtype=np.float32)
        return DepthMap.from_array(fill)
    if backend.kind == "oracle":
        depth = backend.runtime(True).depth_at(frame_index)
    else:
        depth = backend.runtime(True).map_for(frame_index, strict=backend.strict)
    if depth is None:
        raise ReplayGap(f"no depth available for frame {frame_index}")
    if (depth.width, depth.height) != (frame.width, frame.height):
        raise DimensionMismatch(
            f"depth map is {depth.width}x{depth.height}, frame is "
            f"{frame.width}x{frame.height}"
        )
    return depth


# ---------------------------------------------------------------------------
# Replay files
# ---------------------------------------------------------------------------

def write_detection_replay(path, records):
    """One ASCII line per detection:
    ``frame_index class_id score x_min y_min x_max y_max``."""
    with open(path, "w", encoding="ascii") as fh:
        for frame_index, det in records:
            x0, y0, x1, y1 = det.bbox
            fh.write(f"{frame_index} {det.class_id} {det.score!r} "
                     f"{x0!r} {y0!r} {x1!r} {y1!r}\n")


def read_detection_replay(path):
    """Parse a detection replay file into {frame_index: [Detection, ...]}."""
    table: dict = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields, got "
                                 f"{len(fields)}")
            try:
                t = int(fields[0])
                cid = int(fields[1])
                score = float(fields[2])
                box = tuple(float(v) for v in fields[3:7])
                det = Detection(bbox=box, class_id=cid, score=score)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
            table.setdefault(t, []).append(det)
    return table


class DetectionReplay:
    def __init__(self, path):
        self.path = Path(path)
        self.table = read_detection_replay(self.path)

    def records_for(self, frame_index: int, strict: bool = True):
        if frame_index not in self.table:
            if strict:
                raise ReplayGap(f"{self.path}: no detections recorded for "
                                f"frame {frame_index}")
            return []
        return list(self.table[frame_index])


def write_depth_replay(path, maps, start_frame: int = 0):
    """Packed 8-bit depth stream: 16-byte header (magic DPTH, width, height,
    frame count as u32 LE) followed by one width*height byte plane per
    frame. Values must already be integral."""
    maps = list(maps)
    if not maps:
        raise ValueError("need at least one depth map")
    w, h = maps[0].width, maps[0].height
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC + struct.pack("<III", w, h, len(maps)))
        for m in maps:
            if (m.width, m.height) != (w, h):
                raise ValueError("all depth maps in a stream must share dims")
            vals = m.values
            rounded = np.rint(vals)
            if not np.array_equal(rounded, vals):
                raise ValueError("depth replay stores 8-bit values; quantize first")
            fh.write(rounded.astype(np.uint8).tobytes())


class DepthReplay:
    """Depth source backed by a packed DPTH file or a directory of 8-bit
    grayscale images named by frame index."""

    def __init__(self, path, start_frame: int = 0):
        self.path = Path(path)
        self.start_frame = start_frame
        self._by_index = None
        if self.path.is_dir():
            self._by_index = {}
            for p in self.path.iterdir():
                stem = p.stem
                if stem.isdigit():
                    self._by_index[int(stem)] = p
            if not self._by_index:
                raise ValueError(f"{self.path}: no frame-indexed images found")
            self._dims = None
        else:
            with open(self.path, "rb") as fh:
                header = fh.read(16)
            if len(header) != 16 or header[:4] != DEPTH_MAGIC:
                raise ValueError(f"{self.path}: not a DPTH depth stream")
            w, h, count = struct.unpack("<III", header[4:])
            self._dims = (w, h)
            self._count = count

    def map_for(self, frame_index: int, strict: bool = True):
        if self._by_index is not None:
            p = self._by_index.get(frame_index)
            if p is None:
                if strict:
                    raise ReplayGap(f"{self.path}: no depth image for frame "
                                    f"{frame_index}")
                return None
            from PIL import Image

            arr = np.asarray(Image.open(p).convert("L"), dtype=np.uint8)
            return DepthMap.from_array(arr.astype(np.float32))
        slot = frame_index - self.start_frame
        if not 0 <= slot < self._count:
            if strict:
                raise ReplayGap(f"{self.path}: frame {frame_index} outside the "
                                f"recorded range")
            return None
        w, h = self._dims
        with open(self.path, "rb") as fh:
            fh.seek(16 + slot * w * h)
            raw = fh.read(w * h)
        if len(raw) != w * h:
            raise ValueError(f"{self.path}: truncated depth stream")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
        return DepthMap.from_array(arr.astype(np.float32))


# ---------------------------------------------------------------------------
# Depth-backend scoring
# ---------------------------------------------------------------------------

def scale_invariant_loss(pred: DepthMap, truth: DepthMap, lam: float = 0.5) -> float:
    """Scale-invariant log loss between a predicted and reference depth map:
    mean(d^2) - lam * mean(d)^2 with d = log(pred) - log(truth).

    At lam = 1 the loss ignores any global multiplicative depth scale; at
    lam = 0 it reduces to the plain mean squared log error.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if (pred.width, pred.height) != (truth.width, truth.height):
        raise DimensionMismatch(
            f"prediction is {pred.width}x{pred.height}, reference is "
            f"{truth.width}x{truth.height}"
        )
    p = pred.values.astype(np.float64)
    t = truth.values.astype(np.float64)
    if (p <= 0).any() or (t <= 0).any():
        raise NonPositiveDepth("depth values must be strictly positive")
    d = np.log(p) - np.log(t)
    n = d.size
    return float((d * d).sum() / n - lam * (d.sum() ** 2) / (n * n))
