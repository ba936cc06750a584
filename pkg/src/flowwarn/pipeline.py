"""Per-frame pipeline: grayscale -> pyramid -> corner (re)seeding -> track
advance -> detection/depth fetch -> guidance, with per-stage timings.

Detection and depth run concurrently within a frame and are joined before
the guidance stage; speech dispatch is asynchronous and never back-pressures
the loop. Everything that lands in the event log is deterministic for a
fixed config, seed, and input.
"""
from __future__ import annotations

import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import guidance as gd
from .features import detect_corners
from .flow import FlowConfig, TrackSet, advance_tracks
from .imgproc import RgbFrame, build_pyramid, to_grayscale
from .perception import BackendSpec, ReplayGap, detect, estimate_depth

log = logging.getLogger(__name__)

STAGES = ("grayscale", "pyramid", "corners", "flow", "perception", "guidance")


@dataclass
class FrameResult:
    frame_index: int
    objects: list
    events: list
    timings: dict  # stage -> microseconds


@dataclass
class _TrackedObject:
    id: int
    class_id: int
    bbox: tuple
    depth_history: deque
    last_seen: int
    misses: int = 0


def _iou(a, b) -> float:
    ix0 = max(a[0], b[0])
    iy0 = max(a[1], b[1])
    ix1 = min(a[2], b[2])
    iy1 = min(a[3], b[3])
    if ix1 <= ix0 or iy1 <= iy0:
        return 0.0
    inter = (ix1 - ix0) * (iy1 - iy0)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


@dataclass
class GuidanceParams:
    alpha: float = 0.5
    beta: float = 0.5
    approach_threshold: float = gd.APPROACH_THRESHOLD
    cooldown_frames: int = 30
    history_frames: int = 5
    iou_match: float = 0.3
    miss_tolerance: int = 5


@dataclass
class CornerParams:
    max_corners: int = 200
    quality_level: float = 0.03
    min_distance: float = 10.0
    block_side: int = 3
    reseed_floor: int = 50


class Pipeline:
    """Stateful frame loop. Feed frames in order via process_frame()."""

    def __init__(self, *, zone_config: gd.ZoneConfig, flow_config: FlowConfig,
                 corner_params: CornerParams, guidance_params: GuidanceParams,
                 detect_backend: BackendSpec | None,
                 depth_backend: BackendSpec | None,
                 sink: gd.SpeechSink | None = None, lenient: bool = False):
        self.zone_config = zone_config
        self.flow_config = flow_config
        self.corner_params = corner_params
        self.guidance_params = guidance_params
        self.detect_backend = detect_backend
        self.depth_backend = depth_backend
        self.sink = sink
        self.lenient = lenient

        self.tracks = TrackSet()
        self.prev_pyramid = None
        self.objects: list[_TrackedObject] = []
        self.recent_events: list = []
        self._next_object_id = 0
        self._frame_index = -1
        self._pool = ThreadPoolExecutor(max_workers=2)

    @classmethod
    def from_config(cls, config, *, frame_width: int, frame_height: int,
                    detect_backend=None, depth_backend=None, seed: int = 0,
                    sink=None):
        """Build a pipeline from a PipelineConfig, overriding backends as
        needed (the scenario harness binds its own oracle providers)."""
        zone_cfg = gd.ZoneConfig(
            frame_width=frame_width,
            left_boundary_ratio=config.zones.left_boundary_ratio,
            center_boundary_ratio=config.zones.center_boundary_ratio,
            left_gate=config.zones.left_gate,
            center_gate=config.zones.center_gate,
            right_gate=config.zones.right_gate,
        )
        return cls(
            zone_config=zone_cfg,
            flow_config=config.flow,
            corner_params=config.corners,
            guidance_params=config.guidance,
            detect_backend=(detect_backend if detect_backend is not None
                            else config.detect_backend),
            depth_backend=(depth_backend if depth_backend is not None
                           else config.depth_backend),
            sink=sink,
            lenient=config.lenient,
        )

    def close(self):
        self._pool.shutdown(wait=False)
        if self.sink is not None:
            self.sink.close()

    # -- corner seeding -----------------------------------------------------

    def _reseed(self, gray_frame):
        cp = self.corner_params
        corners = detect_corners(gray_frame, max_corners=cp.max_corners,
                                 quality_level=cp.quality_level,
                                 min_distance=cp.min_distance,
                                 block_side=cp.block_side)
        active = self.tracks.active()
        budget = cp.max_corners - len(active)
        if budget <= 0 or not corners.corners:
            return
        if active:
            existing = np.array([t.last for t in active], dtype=np.float64)
        else:
            existing = np.zeros((0, 2), dtype=np.float64)
        min_d2 = cp.min_distance ** 2
        fresh = []
        for c in corners.corners:
            if len(fresh) >= budget:
                break
            p = np.asarray(c.position, dtype=np.float64)
            if existing.size:
                d2 = ((existing - p) ** 2).sum(axis=1)
                if (d2 < min_d2).any():
                    continue
            fresh.append(c.position)
            existing = np.vstack([existing, p[None, :]])
        if fresh:
            self.tracks = self.tracks.seed(fresh)

    # -- perception ---------------------------------------------------------

    def _fetch_perception(self, frame: RgbFrame):
        t = frame.frame_index
        det_future = depth_future = None
        if self.detect_backend is not None:
            det_future = self._pool.submit(detect, t, frame, self.detect_backend)
        if self.depth_backend is not None:
            depth_future = self._pool.submit(estimate_depth, t, frame,
                                             self.depth_backend)
        detections: list = []
        depth = None
        try:
            if det_future is not None:
                detections = det_future.result()
            if depth_future is not None:
                depth = depth_future.result()
        except ReplayGap:
            if not self.lenient:
                raise
            log.warning("frame %d: backend gap, skipping guidance", t)
            return [], None
        return detections, depth

    # -- object association and evaluation ----------------------------------

    def _associate(self, t: int, detections):
        gp = self.guidance_params
        pairs = []
        for oi, obj in enumerate(self.objects):
            for di, det in enumerate(detections):
                if det.class_id != obj.class_id:
                    continue
                iou = _iou(obj.bbox, det.bbox)
                if iou >= gp.iou_match:
                    pairs.append((iou, oi, di))
        pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
        matched_obj: dict = {}
        matched_det: dict = {}
        for iou, oi, di in pairs:
            if oi in matched_obj or di in matched_det:
                continue
            matched_obj[oi] = di
            matched_det[di] = oi

        assignments = []
        for di, det in enumerate(detections):
            oi = matched_det.get(di)
            if oi is None:
                obj = _TrackedObject(
                    id=self._next_object_id, class_id=det.class_id,
                    bbox=det.bbox,
                    depth_history=deque(maxlen=gp.history_frames),
                    last_seen=t)
                self._next_object_id += 1
                self.objects.append(obj)
            else:
                obj = self.objects[oi]
                obj.bbox = det.bbox
                obj.last_seen = t
                obj.misses = 0
            assignments.append((det, obj))

        survivors = []
        for oi, obj in enumerate(self.objects):
            if obj.last_seen != t:
                obj.misses += 1
                if obj.misses > gp.miss_tolerance:
                    continue
            survivors.append(obj)
        self.objects = survivors
        return assignments

    def _evaluate(self, t: int, assignments, depth):
        gp = self.guidance_params
        states = []
        events = []
        active = self.tracks.active()
        if active:
            pts = np.array([tr.last for tr in active], dtype=np.float64)
        else:
            pts = np.zeros((0, 2), dtype=np.float64)
        for det, obj in assignments:
            try:
                stat = gd.object_depth(depth, det.bbox)
            except gd.EmptyBox:
                continue
            obj.depth_history.append((t, stat))
            x0, y0, x1, y1 = det.bbox
            in_box = []
            if pts.size:
                mask = ((pts[:, 0] >= x0) & (pts[:, 0] <= x1)
                        & (pts[:, 1] >= y0) & (pts[:, 1] <= y1))
                in_box = [active[i] for i in np.flatnonzero(mask)
                          if len(active[i].points) >= 2]
            try:
                score = gd.approach_score(in_box, obj.depth_history, det.bbox,
                                          alpha=gp.alpha, beta=gp.beta)
            except gd.InsufficientEvidence:
                score = None
            state = gd.ObjectState(
                detection=det,
                zone=gd.zone_of(min(max(det.center_x, 0.0),
                                    self.zone_config.frame_width - 1),
                                self.zone_config),
                depth_stat=stat,
                approach_score=score,
                track_ids=tuple(tr.id for tr in in_box),
                object_id=obj.id,
                frame_index=t,
            )
            states.append(state)
            candidate = gd.evaluate_object(state, self.zone_config,
                                           approach_threshold=gp.approach_threshold)
            if candidate is not None:
                emitted = gd.debounce(candidate, self.recent_events,
                                      cooldown=gp.cooldown_frames)
                if emitted is not None:
                    events.append(emitted)
                    if self.sink is not None:
                        gd.speak(emitted, self.sink)
        return states, events

    # -- the frame step ------------------------------------------------------

    def process_frame(self, frame: RgbFrame) -> FrameResult:
        t = frame.frame_index
        self._frame_index = t
        timings = {}

        t0 = time.perf_counter()
        gray = to_grayscale(frame)
        t1 = time.perf_counter()
        timings["grayscale"] = (t1 - t0) * 1e6

        pyramid = build_pyramid(gray, self.flow_config.num_levels)
        t2 = time.perf_counter()
        timings["pyramid"] = (t2 - t1) * 1e6

        # Reseed on the PREVIOUS frame so new tracks share its timestamp,
        # then advance everything to the current frame.
        if self.prev_pyramid is None:
            self._reseed(gray)
        elif len(self.tracks.active()) < self.corner_params.reseed_floor:
            self._reseed(self.prev_pyramid.base)
        t3 = time.perf_counter()
        timings["corners"] = (t3 - t2) * 1e6

        if self.prev_pyramid is not None:
            advanced = advance_tracks(self.tracks, self.prev_pyramid, pyramid,
                                      self.flow_config)
            self.tracks = TrackSet(
                tracks=tuple(tr for tr in advanced.tracks if tr.status == "active"),
                next_id=advanced.next_id)
        t4 = time.perf_counter()
        timings["flow"] = (t4 - t3) * 1e6

        detections, depth = self._fetch_perception(frame)
        t5 = time.perf_counter()
        timings["perception"] = (t5 - t4) * 1e6

        states: list = []
        events: list = []
        if depth is not None and detections:
            assignments = self._associate(t, detections)
            states, events = self._evaluate(t, assignments, depth)
        elif self.objects:
            for obj in self.objects:
                obj.misses += 1
            self.objects = [o for o in self.objects
                            if o.misses <= self.guidance_params.miss_tolerance]
        t6 = time.perf_counter()
        timings["guidance"] = (t6 - t5) * 1e6

        self.prev_pyramid = pyramid
        return FrameResult(frame_index=t, objects=states, events=events,
                           timings=timings)


# ---------------------------------------------------------------------------
# Event log lines
# ---------------------------------------------------------------------------

def event_log_line(event: gd.WarningEvent) -> str:
    """frame_index<TAB>zone<TAB>class_label<TAB>depth_stat<TAB>text"""
    return (f"{event.frame_index}\t{event.zone.label}\t{event.class_label}\t"
            f"{event.depth_stat!r}\t{event.text}")


def parse_event_line(line: str) -> gd.WarningEvent:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 5:
        raise ValueError(f"malformed event log line: {line!r}")
    frame_index, zone_label, class_label, depth_stat, text = parts
    zone = gd.Zone(zone_label)
    event = gd.WarningEvent(frame_index=int(frame_index), zone=zone,
                            class_label=class_label,
                            depth_stat=float(depth_stat), text=text)
    return event
