"""Pipeline configuration: YAML loading, validation, defaults.

Every tunable defaults to the production parameter set (15x15 flow window,
5 pyramid levels, 200/0.03/10 corners, 0.35/0.65 zone boundaries with
210/220/210 depth gates, loss lambda 0.5, 30-frame warning cooldown), so a
minimal config only needs to name its input.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .flow import FlowConfig
from .guidance import SinkConfig
from .perception import BackendSpec
from .pipeline import CornerParams, GuidanceParams


class ParseError(ValueError):
    """Config file could not be parsed; message carries line/column."""


class ValidationError(ValueError):
    """Config parsed but a parameter is invalid; .parameter names it."""

    def __init__(self, parameter: str, message: str):
        super().__init__(f"{parameter}: {message}")
        self.parameter = parameter


@dataclass
class ZoneParams:
    left_boundary_ratio: float = 0.35
    center_boundary_ratio: float = 0.65
    left_gate: float = 210.0
    center_gate: float = 220.0
    right_gate: float = 210.0


@dataclass
class OutputConfig:
    event_log: Path | None = None
    annotate_dir: Path | None = None
    annotate_every: int = 10
    figures: bool = False


@dataclass
class PipelineConfig:
    input_kind: str
    input_path: Path
    seed: int = 0
    detect_backend: BackendSpec | None = None
    depth_backend: BackendSpec | None = None
    flow: FlowConfig = field(default_factory=FlowConfig)
    corners: CornerParams = field(default_factory=CornerParams)
    zones: ZoneParams = field(default_factory=ZoneParams)
    guidance: GuidanceParams = field(default_factory=GuidanceParams)
    si_lambda: float = 0.5
    sink: SinkConfig | None = None
    output: OutputConfig = field(default_factory=OutputConfig)
    lenient: bool = False


_TOP_KEYS = {"input", "seed", "backends", "flow", "corners", "zones",
             "guidance", "loss", "sink", "output", "lenient"}


def _require_mapping(node, where: str) -> dict:
    if node is None:
        return {}
    if not isinstance(node, dict):
        raise ValidationError(where, f"expected a mapping, got {type(node).__name__}")
    return node


def _num(node: dict, key: str, where: str, default, lo=None, hi=None,
         integer=False, lo_open=False, hi_open=False):
    val = node.get(key, default)
    if val is None:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ValidationError(f"{where}.{key}", f"expected a number, got {val!r}")
    if integer and int(val) != val:
        raise ValidationError(f"{where}.{key}", f"expected an integer, got {val!r}")
    if lo is not None and (val <= lo if lo_open else val < lo):
        raise ValidationError(f"{where}.{key}", f"{val} below allowed range")
    if hi is not None and (val >= hi if hi_open else val > hi):
        raise ValidationError(f"{where}.{key}", f"{val} above allowed range")
    return int(val) if integer else float(val)


def _reject_unknown(node: dict, allowed, where: str):
    for key in node:
        if key not in allowed:
            raise ValidationError(f"{where}.{key}" if where else key,
                                  "unknown parameter")


def _backend_spec(node, where: str, *, for_depth: bool, input_kind: str,
                  base_dir: Path) -> BackendSpec | None:
    node = _require_mapping(node, where)
    if not node:
        return None
    _reject_unknown(node, {"kind", "path", "value", "strict"}, where)
    kind = node.get("kind")
    allowed = ("oracle", "replay", "constant", "none") if for_depth \
        else ("oracle", "replay", "none")
    if kind not in allowed:
        raise ValidationError(f"{where}.kind", f"must be one of {allowed}")
    if kind == "none":
        return None
    strict = bool(node.get("strict", True))
    if kind == "oracle":
        if input_kind != "scenario":
            raise ValidationError(f"{where}.kind",
                                  "oracle backends need a scenario input")
        return BackendSpec(kind="oracle", source=None, strict=strict)
    if kind == "constant":
        value = _num(node, "value", where, None, lo=0.0, hi=255.0)
        if value is None:
            raise ValidationError(f"{where}.value", "constant backend needs a value")
        return BackendSpec(kind="constant", source=value, strict=strict)
    path = node.get("path")
    if not path:
        raise ValidationError(f"{where}.path", "replay backend needs a path")
    path = (base_dir / path).resolve() if not Path(path).is_absolute() else Path(path)
    if not path.exists():
        raise ValidationError(f"{where}.path", f"{path} does not exist")
    return BackendSpec(kind="replay", source=path, strict=strict)


def parse_config(doc: dict, base_dir: Path) -> PipelineConfig:
    doc = _require_mapping(doc, "config")
    _reject_unknown(doc, _TOP_KEYS, "")

    inp = _require_mapping(doc.get("input"), "input")
    kind = inp.get("kind", "image_dir")
    if kind not in ("scenario", "image_dir", "gfrm"):
        raise ValidationError("input.kind",
                              "must be scenario, image_dir, or gfrm")
    raw_path = inp.get("path")
    if not raw_path:
        raise ValidationError("input.path", "an input path is required")
    path = Path(raw_path)
    if not path.is_absolute():
        path = (base_dir / path).resolve()
    if not path.exists():
        raise ValidationError("input.path", f"{path} does not exist")
    if kind == "image_dir" and not path.is_dir():
        raise ValidationError("input.path", f"{path} is not a directory")
    if kind in ("scenario", "gfrm") and not path.is_file():
        raise ValidationError("input.path", f"{path} is not a file")

    seed = _num(doc, "seed", "", 0, integer=True)

    backends = _require_mapping(doc.get("backends"), "backends")
    _reject_unknown(backends, {"detect", "depth"}, "backends")
    detect_spec = _backend_spec(backends.get("detect"), "backends.detect",
                                for_depth=False, input_kind=kind,
                                base_dir=base_dir)
    depth_spec = _backend_spec(backends.get("depth"), "backends.depth",
                               for_depth=True, input_kind=kind,
                               base_dir=base_dir)
    if kind == "scenario":
        if backends.get("detect") is None:
            detect_spec = BackendSpec(kind="oracle", source=None)
        if backends.get("depth") is None:
            depth_spec = BackendSpec(kind="oracle", source=None)
    elif backends.get("depth") is None:
        # unspecified (as opposed to an explicit "none"): far everywhere
        depth_spec = BackendSpec(kind="constant", source=255.0)

    fl = _require_mapping(doc.get("flow"), "flow")
    _reject_unknown(fl, {"window_side", "num_levels", "max_iterations_per_level",
                         "convergence_eps", "min_eigen_threshold"}, "flow")
    window_side = _num(fl, "window_side", "flow", 15, lo=3, integer=True)
    if window_side % 2 == 0:
        raise ValidationError("flow.window_side", "must be odd")
    flow_cfg = FlowConfig(
        window_side=window_side,
        num_levels=_num(fl, "num_levels", "flow", 5, lo=1, integer=True),
        max_iterations_per_level=_num(fl, "max_iterations_per_level", "flow",
                                      30, lo=1, integer=True),
        convergence_eps=_num(fl, "convergence_eps", "flow", 0.01, lo=0.0,
                             lo_open=True),
        min_eigen_threshold=_num(fl, "min_eigen_threshold", "flow", None, lo=0.0),
    )

    co = _require_mapping(doc.get("corners"), "corners")
    _reject_unknown(co, {"max_corners", "quality_level", "min_distance",
                         "block_side", "reseed_floor"}, "corners")
    block_side = _num(co, "block_side", "corners", 3, lo=1, integer=True)
    if block_side % 2 == 0:
        raise ValidationError("corners.block_side", "must be odd")
    corners_cfg = CornerParams(
        max_corners=_num(co, "max_corners", "corners", 200, lo=1, integer=True),
        quality_level=_num(co, "quality_level", "corners", 0.03, lo=0.0, hi=1.0,
                           lo_open=True, hi_open=True),
        min_distance=_num(co, "min_distance", "corners", 10.0, lo=0.0),
        block_side=block_side,
        reseed_floor=_num(co, "reseed_floor", "corners", 50, lo=0, integer=True),
    )

    zo = _require_mapping(doc.get("zones"), "zones")
    _reject_unknown(zo, {"left_boundary_ratio", "center_boundary_ratio",
                         "left_gate", "center_gate", "right_gate"}, "zones")
    zones_cfg = ZoneParams(
        left_boundary_ratio=_num(zo, "left_boundary_ratio", "zones", 0.35,
                                 lo=0.0, hi=1.0, lo_open=True, hi_open=True),
        center_boundary_ratio=_num(zo, "center_boundary_ratio", "zones", 0.65,
                                   lo=0.0, hi=1.0, lo_open=True, hi_open=True),
        left_gate=_num(zo, "left_gate", "zones", 210.0, lo=0.0, hi=255.0,
                       lo_open=True),
        center_gate=_num(zo, "center_gate", "zones", 220.0, lo=0.0, hi=255.0,
                         lo_open=True),
        right_gate=_num(zo, "right_gate", "zones", 210.0, lo=0.0, hi=255.0,
                        lo_open=True),
    )
    if zones_cfg.left_boundary_ratio >= zones_cfg.center_boundary_ratio:
        raise ValidationError("zones.center_boundary_ratio",
                              "must exceed left_boundary_ratio")

    gu = _require_mapping(doc.get("guidance"), "guidance")
    _reject_unknown(gu, {"alpha", "beta", "approach_threshold",
                         "cooldown_frames", "history_frames"}, "guidance")
    guidance_cfg = GuidanceParams(
        alpha=_num(gu, "alpha", "guidance", 0.5, lo=0.0),
        beta=_num(gu, "beta", "guidance", 0.5, lo=0.0),
        approach_threshold=_num(gu, "approach_threshold", "guidance", 0.01,
                                lo=0.0),
        cooldown_frames=_num(gu, "cooldown_frames", "guidance", 30, lo=0,
                             integer=True),
        history_frames=_num(gu, "history_frames", "guidance", 5, lo=2,
                            integer=True),
    )

    lo = _require_mapping(doc.get("loss"), "loss")
    _reject_unknown(lo, {"lambda"}, "loss")
    si_lambda = _num(lo, "lambda", "loss", 0.5, lo=0.0, hi=1.0)

    sink_node = _require_mapping(doc.get("sink"), "sink")
    sink_cfg = None
    if sink_node:
        _reject_unknown(sink_node, {"kind", "target", "timeout"}, "sink")
        sink_kind = sink_node.get("kind", "stream")
        if sink_kind not in ("stream", "file", "command"):
            raise ValidationError("sink.kind",
                                  "must be stream, file, or command")
        sink_cfg = SinkConfig(kind=sink_kind, target=sink_node.get("target"),
                              timeout=_num(sink_node, "timeout", "sink", 2.0,
                                           lo=0.0, lo_open=True))

    out = _require_mapping(doc.get("output"), "output")
    _reject_unknown(out, {"event_log", "annotate_dir", "annotate_every",
                          "figures"}, "output")

    def _out_path(key):
        v = out.get(key)
        if v is None:
            return None
        p = Path(v)
        return p if p.is_absolute() else (base_dir / p)

    output_cfg = OutputConfig(
        event_log=_out_path("event_log"),
        annotate_dir=_out_path("annotate_dir"),
        annotate_every=_num(out, "annotate_every", "output", 10, lo=1,
                            integer=True),
        figures=bool(out.get("figures", False)),
    )

    return PipelineConfig(
        input_kind=kind, input_path=path, seed=seed,
        detect_backend=detect_spec, depth_backend=depth_spec,
        flow=flow_cfg, corners=corners_cfg, zones=zones_cfg,
        guidance=guidance_cfg, si_lambda=si_lambda, sink=sink_cfg,
        output=output_cfg, lenient=bool(doc.get("lenient", False)),
    )


def load_config(path) -> PipelineConfig:
    """Parse and validate a pipeline config file."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ParseError(f"{path}{where}: {exc}") from exc
    return parse_config(doc or {}, base_dir=path.parent)


def scenario_config(script_path, seed: int = 0) -> PipelineConfig:
    """All-defaults config bound to a scenario script (used by `simulate`)."""
    script_path = Path(script_path)
    return PipelineConfig(
        input_kind="scenario", input_path=script_path, seed=seed,
        detect_backend=BackendSpec(kind="oracle", source=None),
        depth_backend=BackendSpec(kind="oracle", source=None),
    )
