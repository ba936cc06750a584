"""Decision core: zone partition, depth gating, approach classification,
warning text, debouncing, and the speech sink.

A warning fires only when both evidence channels agree: the object's flow
trajectories / depth history classify it as approaching AND its nearest
depth statistic is below the zone's gate.
"""
from __future__ import annotations

import enum
import logging
import math
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .perception import DepthMap, Detection

log = logging.getLogger(__name__)

# Blended approach evidence above this value classifies an object as closing in.
APPROACH_THRESHOLD = 0.01

# Fewer usable in-box tracks than this leaves the flow term unsupported.
MIN_TRACKS_FOR_FLOW = 3


class OutOfRange(ValueError):
    """Horizontal position outside the frame."""


class EmptyBox(ValueError):
    """Bounding box covers no depth pixels."""


class InsufficientEvidence(RuntimeError):
    """Neither enough tracks nor enough depth history to judge approach."""


class SinkUnavailable(RuntimeError):
    """Speech sink failed to deliver; logged, never propagated to the loop."""


class Zone(enum.Enum):
    LEFT = "left"
    CENTER = "center"
    RIGHT = "right"

    @property
    def label(self) -> str:
        return self.value


WARNING_TEXTS = {
    Zone.LEFT: "The object is approaching from the left.",
    Zone.CENTER: "The object is approaching from the center.",
    Zone.RIGHT: "The object is approaching from the right.",
}


@dataclass(frozen=True)
class ZoneConfig:
    frame_width: int
    left_boundary_ratio: float = 0.35
    center_boundary_ratio: float = 0.65
    left_gate: float = 210.0
    center_gate: float = 220.0
    right_gate: float = 210.0

    def __post_init__(self):
        if not 0.0 < self.left_boundary_ratio < self.center_boundary_ratio < 1.0:
            raise ValueError("need 0 < left ratio < center ratio < 1")
        for name in ("left_gate", "center_gate", "right_gate"):
            v = getattr(self, name)
            if not 0.0 < v <= 255.0:
                raise ValueError(f"{name} must lie in (0, 255]")

    @property
    def boundaries(self):
        return (int(math.floor(self.left_boundary_ratio * self.frame_width)),
                int(math.floor(self.center_boundary_ratio * self.frame_width)))

    def gate(self, zone: Zone) -> float:
        return {Zone.LEFT: self.left_gate, Zone.CENTER: self.center_gate,
                Zone.RIGHT: self.right_gate}[zone]


@dataclass(frozen=True)
class WarningEvent:
    frame_index: int
    zone: Zone
    class_label: str
    depth_stat: float
    text: str = ""

    def __post_init__(self):
        expected = WARNING_TEXTS[self.zone]
        if self.text and self.text != expected:
            raise ValueError(f"warning text {self.text!r} does not match zone")
        object.__setattr__(self, "text", expected)


@dataclass
class ObjectState:
    """Everything the decision stage knows about one detected object."""

    detection: Detection
    zone: Zone
    depth_stat: float
    approach_score: float | None
    track_ids: tuple = ()
    object_id: int = -1
    frame_index: int = 0


def zone_of(x_center: float, cfg: ZoneConfig) -> Zone:
    """Map a horizontal position to its zone; boundaries belong to the
    upper (more central / more right) zone."""
    if not 0 <= x_center < cfg.frame_width:
        raise OutOfRange(f"x={x_center} outside [0, {cfg.frame_width})")
    lb, cb = cfg.boundaries
    if x_center < lb:
        return Zone.LEFT
    if x_center < cb:
        return Zone.CENTER
    return Zone.RIGHT


def object_depth(depth: DepthMap, bbox) -> float:
    """Robust nearness statistic inside a box: the 10th percentile of depth
    values (nearest-rank), which resists far-background bleed-through."""
    x0, y0, x1, y1 = bbox
    xi0 = max(int(math.floor(x0)), 0)
    yi0 = max(int(math.floor(y0)), 0)
    xi1 = min(int(math.ceil(x1)), depth.width)
    yi1 = min(int(math.ceil(y1)), depth.height)
    if xi1 <= xi0 or yi1 <= yi0:
        raise EmptyBox(f"bbox {bbox} covers no depth pixels")
    vals = depth.values[yi0:yi1, xi0:xi1].reshape(-1)
    n = vals.size
    k = (10 * n + 99) // 100 - 1  # ceil(0.1 n) - 1, exact integer arithmetic
    return float(np.partition(vals, k)[k])


def approach_score(tracks_in_box, depth_history, bbox,
                   alpha: float = 0.5, beta: float = 0.5) -> float:
    """Blended approach evidence for one object.

    Flow term: mean outward radial displacement of in-box tracks about the
    box centroid, normalized by the box diagonal. Depth term: per-frame
    decrease of the depth statistic, normalized by the 255 scale. Either
    term contributes zero when its evidence floor is not met; if both floors
    fail, raises InsufficientEvidence.
    """
    x0, y0, x1, y1 = bbox
    cx = 0.5 * (x0 + x1)
    cy = 0.5 * (y0 + y1)
    diag = math.hypot(x1 - x0, y1 - y0)

    usable = [t for t in tracks_in_box if len(t.points) >= 2]
    history = list(depth_history)
    if len(usable) < MIN_TRACKS_FOR_FLOW and len(history) < 2:
        raise InsufficientEvidence(
            f"{len(usable)} usable tracks and {len(history)} depth samples"
        )

    flow_term = 0.0
    if len(usable) >= MIN_TRACKS_FOR_FLOW and diag > 0:
        radial = 0.0
        counted = 0
        for t in usable:
            (px, py), (qx, qy) = t.points[-2], t.points[-1]
            rx = px - cx
            ry = py - cy
            norm = math.hypot(rx, ry)
            if norm < 1e-9:
                continue
            radial += ((qx - px) * rx + (qy - py) * ry) / norm
            counted += 1
        if counted:
            flow_term = radial / counted / diag

    depth_term = 0.0
    if len(history) >= 2:
        t_first, d_first = history[0]
        t_last, d_last = history[-1]
        span = t_last - t_first
        if span > 0:
            depth_term = (d_first - d_last) / span / 255.0

    return alpha * flow_term + beta * depth_term


def evaluate_object(state: ObjectState, cfg: ZoneConfig,
                    approach_threshold: float = APPROACH_THRESHOLD):
    """Warning event iff the object is classified approaching and its depth
    statistic is strictly below the zone gate; None otherwise."""
    if state.approach_score is None or state.approach_score <= approach_threshold:
        return None
    if not state.depth_stat < cfg.gate(state.zone):
        return None
    return WarningEvent(frame_index=state.frame_index, zone=state.zone,
                        class_label=state.detection.class_label,
                        depth_stat=state.depth_stat)


def debounce(candidate: WarningEvent, recent: list, cooldown: int = 30):
    """Suppress a warning if one for the same zone was emitted within
    ``cooldown`` frames; otherwise record it in ``recent`` and pass it on."""
    for prior in reversed(recent):
        if prior.zone == candidate.zone:
            if candidate.frame_index - prior.frame_index <= cooldown:
                return None
            break
    recent.append(candidate)
    return candidate


# ---------------------------------------------------------------------------
# Speech sink
# ---------------------------------------------------------------------------

@dataclass
class SinkConfig:
    """kind "stream": write lines to a text stream (target, default stdout).
    kind "file": append lines to the path in target. kind "command": run the
    shell-split target template with {text} substituted."""

    kind: str = "stream"
    target: object = None
    timeout: float = 2.0

    def __post_init__(self):
        if self.kind not in ("stream", "file", "command"):
            raise ValueError(f"unknown sink kind {self.kind!r}")


class SpeechSink:
    """Fire-and-forget warning delivery on a worker thread.

    Delivery failures are logged and swallowed: a broken speaker must never
    stall or halt the guidance loop.
    """

    def __init__(self, config: SinkConfig):
        self.config = config
        self._queue: queue.Queue = queue.Queue(maxsize=64)
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._closed = False
        self._worker.start()

    def say(self, text: str):
        if self._closed:
            return
        try:
            self._queue.put_nowait(text)
        except queue.Full:
            log.warning("speech sink queue full; dropping %r", text)

    def _deliver(self, text: str):
        cfg = self.config
        if cfg.kind == "stream":
            stream = cfg.target
            if stream is None:
                import sys

                stream = sys.stdout
            stream.write(text + "\n")
            stream.flush()
        elif cfg.kind == "file":
            with open(cfg.target, "a", encoding="utf-8") as fh:
                fh.write(text + "\n")
        else:
            argv = [a.replace("{text}", text) for a in shlex.split(str(cfg.target))]
            subprocess.run(argv, timeout=cfg.timeout, check=True,
                           stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)

    def _run(self):
        while True:
            text = self._queue.get()
            if text is None:
                break
            try:
                self._deliver(text)
            except Exception as exc:  # noqa: BLE001 - sink isolation rule
                log.warning("speech sink unavailable: %s", SinkUnavailable(exc))
            finally:
                self._queue.task_done()

    def drain(self, timeout: float = 5.0):
        """Block until queued utterances are delivered (tests, shutdown)."""
        waiter = threading.Thread(target=self._queue.join, daemon=True)
        waiter.start()
        waiter.join(timeout)

    def close(self):
        if not self._closed:
            self._closed = True
            self.drain()
            self._queue.put(None)
            self._worker.join(timeout=2.0)


def speak(event: WarningEvent, sink: SpeechSink):
    """Queue the event's sentence for asynchronous delivery."""
    sink.say(event.text)
