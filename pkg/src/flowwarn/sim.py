"""Deterministic synthetic scenes with exact ground truth, plus the scenario
harness that scores the full pipeline against scripted approach events.

A scene is a seeded noise background with textured rectangular sprites whose
center, size, and depth follow piecewise-linear keyframe paths. Because the
script is the ground truth, rendered frames come with exact boxes, depth,
and dense flow, and "the pipeline warned correctly" is decidable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .guidance import ZoneConfig, zone_of
from .imgproc import RgbFrame
from .perception import BackendSpec, DepthMap, Detection

# A warning counts as correct if it fires within the scripted approach
# interval stretched by this many frames on both sides.
MATCH_SLACK_FRAMES = 5


def _interp(keyframes, t: float) -> tuple:
    """Piecewise-linear interpolation over ((t, v0, v1, ...), ...) keyframes,
    clamped at both ends."""
    if t <= keyframes[0][0]:
        return tuple(keyframes[0][1:])
    if t >= keyframes[-1][0]:
        return tuple(keyframes[-1][1:])
    for (t0, *v0), (t1, *v1) in zip(keyframes, keyframes[1:]):
        if t0 <= t <= t1:
            if t1 == t0:
                return tuple(v1)
            a = (t - t0) / (t1 - t0)
            return tuple(x0 + a * (x1 - x0) for x0, x1 in zip(v0, v1))
    return tuple(keyframes[-1][1:])


@dataclass(frozen=True)
class BackgroundSpec:
    cell: int = 16
    amplitude: float = 18.0
    base: float = 150.0


@dataclass(frozen=True)
class SpriteSpec:
    class_id: int
    position: tuple  # ((frame, cx, cy), ...)
    size: tuple      # ((frame, w, h), ...)
    depth: tuple     # ((frame, d), ...)
    contrast: float = 70.0
    texture_cells: int = 12

    def center_at(self, t):
        return _interp(self.position, t)

    def size_at(self, t):
        return _interp(self.size, t)

    def depth_at(self, t) -> float:
        return _interp(self.depth, t)[0]

    def box_at(self, t):
        """Continuous (x_min, y_min, x_max, y_max) at frame t."""
        cx, cy = self.center_at(t)
        w, h = self.size_at(t)
        return (cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


@dataclass(frozen=True)
class SceneScript:
    name: str
    width: int
    height: int
    duration: int
    sprites: tuple
    background: BackgroundSpec = BackgroundSpec()
    seed: int = 0

    def __post_init__(self):
        if self.duration < 2:
            raise ValueError("scene duration must be at least 2 frames")
        for i, sp in enumerate(self.sprites):
            for kf in (sp.position, sp.size, sp.depth):
                if not kf:
                    raise ValueError(f"sprite {i}: empty keyframe path")
            for t in range(self.duration):
                d = sp.depth_at(t)
                if not 0.0 < d <= 255.0:
                    raise ValueError(f"sprite {i}: depth {d} at frame {t} "
                                     f"outside (0, 255]")
                x0, y0, x1, y1 = sp.box_at(t)
                w, h = self.width, self.height
                if x0 < 0 or y0 < 0 or x1 > w - 1 or y1 > h - 1:
                    raise ValueError(f"sprite {i}: box leaves the frame at "
                                     f"frame {t}")
                if x1 - x0 < 4 or y1 - y0 < 4:
                    raise ValueError(f"sprite {i}: box smaller than 4 px at "
                                     f"frame {t}")


def load_scene_script(path) -> SceneScript:
    """Read a scene script from its YAML file."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    try:
        scene = doc["scene"]
        bg = doc.get("background", {})
        sprites = []
        for s in doc.get("sprites", []):
            sprites.append(SpriteSpec(
                class_id=int(s["class_id"]),
                position=tuple(tuple(map(float, kf)) for kf in s["position"]),
                size=tuple(tuple(map(float, kf)) for kf in s["size"]),
                depth=tuple(tuple(map(float, kf)) for kf in s["depth"]),
                contrast=float(s.get("contrast", 70.0)),
                texture_cells=int(s.get("texture_cells", 12)),
            ))
        return SceneScript(
            name=str(scene.get("name", path.stem)),
            width=int(scene["width"]),
            height=int(scene["height"]),
            duration=int(scene["duration"]),
            seed=int(scene.get("seed", 0)),
            background=BackgroundSpec(
                cell=int(bg.get("cell", 16)),
                amplitude=float(bg.get("amplitude", 18.0)),
                base=float(bg.get("base", 150.0)),
            ),
            sprites=tuple(sprites),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed scene script ({exc})") from exc


@dataclass(frozen=True)
class RenderedFrame:
    frame: RgbFrame
    detections: tuple
    depth: DepthMap
    flow: np.ndarray  # (h, w, 2) scripted displacement to the next frame


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(e) for e in entropy]))


def _value_noise(rng, height, width, cell) -> np.ndarray:
    """Smooth noise in [-1, 1]: a coarse random grid bilinearly upsampled."""
    gh = height // cell + 2
    gw = width // cell + 2
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    ys = np.arange(height, dtype=np.float64) / cell
    xs = np.arange(width, dtype=np.float64) / cell
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    top = g00 + fx * (g01 - g00)
    bot = g10 + fx * (g11 - g10)
    return top + fy * (bot - top)


class SceneRenderer:
    """Rasterizes one script deterministically: same (script, t, seed) in,
    identical frame/ground-truth out. The last few rendered frames are
    cached so oracle backends reuse the pipeline's current frame."""

    def __init__(self, script: SceneScript, seed: int = 0):
        self.script = script
        self.seed = seed
        bg_rng = _rng(seed, script.seed, 0xB6)
        noise = _value_noise(bg_rng, script.height, script.width,
                             script.background.cell)
        self._background = np.clip(
            script.background.base + script.background.amplitude * noise,
            0.0, 255.0)
        self._textures = []
        for i, sp in enumerate(script.sprites):
            t_rng = _rng(seed, script.seed, 1 + i)
            cells = max(sp.texture_cells, 2)
            self._textures.append(t_rng.uniform(-1.0, 1.0, size=(cells, cells)))
        self._cache: dict = {}

    def render(self, t: int) -> RenderedFrame:
        if t in self._cache:
            return self._cache[t]
        script = self.script
        if not 0 <= t < script.duration:
            raise ValueError(f"frame {t} outside scene duration {script.duration}")
        h, w = script.height, script.width
        canvas = self._background.copy()
        depth = np.full((h, w), 255.0, dtype=np.float32)
        flow = np.zeros((h, w, 2), dtype=np.float32)
        detections = []
        t_next = min(t + 1, script.duration - 1)

        for sp, tex in zip(script.sprites, self._textures):
            box = sp.box_at(t)
            x0, y0, x1, y1 = box
            xi0, yi0 = int(math.ceil(x0)), int(math.ceil(y0))
            xi1, yi1 = int(math.floor(x1)) + 1, int(math.floor(y1)) + 1
            xs = np.arange(xi0, xi1, dtype=np.float64)
            ys = np.arange(yi0, yi1, dtype=np.float64)
            if xs.size == 0 or ys.size == 0:
                continue
            # texture coordinates through the continuous box
            u = np.clip((xs - x0) / (x1 - x0), 0.0, 1.0)
            v = np.clip((ys - y0) / (y1 - y0), 0.0, 1.0)
            cells = tex.shape[0]
            tx = u * (cells - 1)
            ty = v * (cells - 1)
            tx0 = np.minimum(np.floor(tx).astype(np.intp), cells - 2)
            ty0 = np.minimum(np.floor(ty).astype(np.intp), cells - 2)
            fx = (tx - tx0)[None, :]
            fy = (ty - ty0)[:, None]
            g00 = tex[np.ix_(ty0, tx0)]
            g01 = tex[np.ix_(ty0, tx0 + 1)]
            g10 = tex[np.ix_(ty0 + 1, tx0)]
            g11 = tex[np.ix_(ty0 + 1, tx0 + 1)]
            patch = (g00 + fx * (g01 - g00)) * (1 - fy) + (g10 + fx * (g11 - g10)) * fy
            canvas[yi0:yi1, xi0:xi1] = np.clip(128.0 + sp.contrast * patch, 0.0, 255.0)
            depth[yi0:yi1, xi0:xi1] = sp.depth_at(t)

            # scripted displacement of every covered pixel to the next frame
            cx, cy = sp.center_at(t)
            nw, nh = sp.size_at(t_next)
            ww, hh = sp.size_at(t)
            ncx, ncy = sp.center_at(t_next)
            fxs = (ncx - cx) + (nw / ww - 1.0) * (xs - cx)
            fys = (ncy - cy) + (nh / hh - 1.0) * (ys - cy)
            flow[yi0:yi1, xi0:xi1, 0] = fxs[None, :]
            flow[yi0:yi1, xi0:xi1, 1] = fys[:, None]

            detections.append(Detection(bbox=box, class_id=sp.class_id, score=1.0))

        gray8 = np.rint(canvas).astype(np.uint8)
        frame = RgbFrame.from_array(gray8, frame_index=t)
        flow.setflags(write=False)
        rendered = RenderedFrame(frame=frame, detections=tuple(detections),
                                 depth=DepthMap.from_array(depth), flow=flow)
        self._cache[t] = rendered
        if len(self._cache) > 3:
            self._cache.pop(min(self._cache))
        return rendered


def render(script: SceneScript, t: int, seed: int = 0) -> RenderedFrame:
    """One-shot render; prefer SceneRenderer for frame loops."""
    return SceneRenderer(script, seed).render(t)


class SceneGroundTruth:
    """Oracle provider for detect/depth backends, bound to one renderer."""

    def __init__(self, renderer: SceneRenderer):
        self.renderer = renderer

    def detections_at(self, frame_index: int):
        return self.renderer.render(frame_index).detections

    def depth_at(self, frame_index: int) -> DepthMap:
        return self.renderer.render(frame_index).depth


# ---------------------------------------------------------------------------
# Backend perturbation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    dropout: float = 0.0
    jitter_px: float = 0.0
    depth_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError("dropout probability must lie in [0, 1]")
        if self.jitter_px < 0 or self.depth_sigma < 0:
            raise ValueError("noise magnitudes must be >= 0")


class PerturbedProvider:
    """Ground-truth provider wrapper: drops detections, jitters box corners,
    and adds clamped 8-bit Gaussian depth noise, all seeded per frame."""

    def __init__(self, inner, noise: NoiseSpec, seed: int, frame_size):
        self.inner = inner
        self.noise = noise
        self.seed = seed
        self.frame_size = frame_size  # (width, height)

    def detections_at(self, frame_index: int):
        dets = self.inner.detections_at(frame_index)
        n = self.noise
        if n.dropout == 0.0 and n.jitter_px == 0.0:
            return dets
        rng = _rng(self.seed, frame_index, 0xD0)
        w, h = self.frame_size
        out = []
        for det in dets:
            if n.dropout > 0.0 and rng.uniform() < n.dropout:
                continue
            box = det.bbox
            if n.jitter_px > 0.0:
                j = rng.uniform(-n.jitter_px, n.jitter_px, size=4)
                x0, y0, x1, y1 = (box[0] + j[0], box[1] + j[1],
                                  box[2] + j[2], box[3] + j[3])
                x0, x1 = min(x0, x1), max(x0, x1)
                y0, y1 = min(y0, y1), max(y0, y1)
                x0 = float(np.clip(x0, 0.0, w - 2.0))
                y0 = float(np.clip(y0, 0.0, h - 2.0))
                x1 = float(np.clip(max(x1, x0 + 1.0), 1.0, w - 1.0))
                y1 = float(np.clip(max(y1, y0 + 1.0), 1.0, h - 1.0))
                box = (x0, y0, x1, y1)
            out.append(replace(det, bbox=box))
        return tuple(out)

    def depth_at(self, frame_index: int) -> DepthMap:
        depth = self.inner.depth_at(frame_index)
        if self.noise.depth_sigma == 0.0:
            return depth
        rng = _rng(self.seed, frame_index, 0xDE)
        noisy = depth.values + rng.normal(0.0, self.noise.depth_sigma,
                                          size=depth.values.shape)
        noisy = np.rint(np.clip(noisy, 0.0, 255.0)).astype(np.float32)
        return DepthMap.from_array(noisy)


def perturb_backend(backend: BackendSpec, noise: NoiseSpec, seed: int,
                    frame_size=None) -> BackendSpec:
    """Wrap an oracle backend with seeded detector/depth imperfection."""
    if backend.kind != "oracle":
        raise ValueError("only oracle (provider) backends can be perturbed")
    if frame_size is None:
        renderer = getattr(backend.source, "renderer", None)
        if renderer is None:
            raise ValueError("frame_size required when the provider has no renderer")
        frame_size = (renderer.script.width, renderer.script.height)
    provider = PerturbedProvider(backend.source, noise, seed, frame_size)
    return BackendSpec(kind="oracle", source=provider, strict=backend.strict)


# ---------------------------------------------------------------------------
# Scenario harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ApproachEvent:
    """Maximal scripted interval where a sprite is both getting nearer and
    below its zone's depth gate."""

    sprite_index: int
    start: int
    end: int  # inclusive
    zones: tuple


@dataclass(frozen=True)
class EventOutcome:
    event: ApproachEvent
    matched_frame: int | None = None
    matched_zone: str | None = None


@dataclass(frozen=True)
class ScenarioReport:
    script_name: str
    expected_approaches: int
    warnings_emitted: int
    correct: int
    false_positives: int
    outcomes: tuple
    warnings: tuple

    def __post_init__(self):
        if self.correct > min(self.expected_approaches, self.warnings_emitted):
            raise ValueError("correct count exceeds expected/emitted bounds")

    def summary(self) -> str:
        return (f"{self.script_name}: {self.correct}/{self.expected_approaches} "
                f"correct, {self.warnings_emitted} emitted, "
                f"{self.false_positives} false positives")

    def event_rows(self):
        """Delimited per-event log rows: index, span, zones, matched warning."""
        rows = []
        for i, oc in enumerate(self.outcomes):
            e = oc.event
            matched = "-" if oc.matched_frame is None else str(oc.matched_frame)
            rows.append(f"{i}\t{e.sprite_index}\t{e.start}\t{e.end}\t"
                        f"{'/'.join(e.zones)}\t{matched}")
        return rows


def approach_events(script: SceneScript, zone_cfg: ZoneConfig):
    """Extract the scripted approach intervals a correct pipeline must warn on."""
    events = []
    for i, sp in enumerate(script.sprites):
        run_start = None
        zones: set = set()
        prev_depth = sp.depth_at(0)
        for t in range(1, script.duration):
            d = sp.depth_at(t)
            cx = 0.5 * (sp.box_at(t)[0] + sp.box_at(t)[2])
            zone = zone_of(cx, zone_cfg)
            hit = d < prev_depth - 1e-9 and d < zone_cfg.gate(zone)
            if hit:
                if run_start is None:
                    run_start = t
                    zones = set()
                zones.add(zone.label)
            elif run_start is not None:
                events.append(ApproachEvent(sprite_index=i, start=run_start,
                                            end=t - 1, zones=tuple(sorted(zones))))
                run_start = None
            prev_depth = d
        if run_start is not None:
            events.append(ApproachEvent(sprite_index=i, start=run_start,
                                        end=script.duration - 1,
                                        zones=tuple(sorted(zones))))
    events.sort(key=lambda e: (e.start, e.sprite_index))
    return events


def match_warnings(events, warnings, slack: int = MATCH_SLACK_FRAMES):
    """Greedy chronological matching of emitted warnings to scripted events."""
    outcomes = {id(e): EventOutcome(event=e) for e in events}
    unmatched = []
    open_events = list(events)
    for wv in warnings:
        hit = None
        for e in open_events:
            if (wv.zone.label in e.zones
                    and e.start - slack <= wv.frame_index <= e.end + slack):
                hit = e
                break
        if hit is None:
            unmatched.append(wv)
        else:
            open_events.remove(hit)
            outcomes[id(hit)] = EventOutcome(event=hit,
                                             matched_frame=wv.frame_index,
                                             matched_zone=wv.zone.label)
    return [outcomes[id(e)] for e in events], unmatched


def run_scenario(script: SceneScript, config, seed: int = 0,
                 noise: NoiseSpec | None = None) -> ScenarioReport:
    """Run the full pipeline over a scripted scene and score its warnings.

    ``config`` is a PipelineConfig; its input section is ignored in favor of
    the script. Oracle backends are bound to this render, optionally wrapped
    with ``noise``.
    """
    from .pipeline import Pipeline  # local import to keep layering acyclic

    renderer = SceneRenderer(script, seed)
    truth = SceneGroundTruth(renderer)
    detect_spec = BackendSpec(kind="oracle", source=truth)
    depth_spec = BackendSpec(kind="oracle", source=truth)
    if noise is not None:
        detect_spec = perturb_backend(detect_spec, noise, seed)
        depth_spec = perturb_backend(depth_spec, noise, seed)

    pipe = Pipeline.from_config(config, frame_width=script.width,
                                frame_height=script.height,
                                detect_backend=detect_spec,
                                depth_backend=depth_spec, seed=seed)
    warnings = []
    try:
        for t in range(script.duration):
            result = pipe.process_frame(renderer.render(t).frame)
            warnings.extend(result.events)
    finally:
        pipe.close()

    zone_cfg = pipe.zone_config
    events = approach_events(script, zone_cfg)
    outcomes, unmatched = match_warnings(events, warnings)
    correct = sum(1 for oc in outcomes if oc.matched_frame is not None)
    return ScenarioReport(
        script_name=script.name,
        expected_approaches=len(events),
        warnings_emitted=len(warnings),
        correct=correct,
        false_positives=len(unmatched),
        outcomes=tuple(outcomes),
        warnings=tuple(warnings),
    )
