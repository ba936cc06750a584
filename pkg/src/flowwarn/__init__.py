"""Obstacle-approach warnings from sparse optical flow, per-frame depth maps,
and object detections, with a left/center/right zone partition driving the
warning text."""

__version__ = "0.1.0"

from .features import Corner, CornerSet, detect_corners
from .flow import (
    ApertureDegenerate,
    Diverged,
    FlowConfig,
    FlowVector,
    LkSystem,
    Track,
    TrackLost,
    TrackSet,
    advance_tracks,
    lk_solve,
    pyramidal_flow,
    refine_at_level,
)
from .guidance import (
    ObjectState,
    WarningEvent,
    Zone,
    ZoneConfig,
    approach_score,
    debounce,
    evaluate_object,
    object_depth,
    speak,
    zone_of,
)
from .imgproc import (
    GradientWindow,
    GrayFrame,
    OutOfBounds,
    Pyramid,
    RgbFrame,
    TooSmallForLevels,
    build_pyramid,
    gradient_window,
    to_grayscale,
)
from .perception import (
    BackendSpec,
    DepthMap,
    Detection,
    DimensionMismatch,
    NonPositiveDepth,
    ReplayGap,
    detect,
    estimate_depth,
    scale_invariant_loss,
)
from .pipeline import FrameResult, Pipeline
from .sim import (
    NoiseSpec,
    SceneRenderer,
    SceneScript,
    ScenarioReport,
    load_scene_script,
    perturb_backend,
    run_scenario,
)

__all__ = [name for name in dir() if not name.startswith("_")]
