import numpy as np
import pytest
from PIL import Image

from flowwarn.config import (
    ParseError,
    ValidationError,
    load_config,
    scenario_config,
)


@pytest.fixture()
def frame_dir(tmp_path):
    d = tmp_path / "frames"
    d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        arr = rng.integers(0, 256, (48, 64), dtype=np.uint8)
        Image.fromarray(arr, mode="L").save(d / f"{i:04d}.png")
    return d


def write_config(tmp_path, text):
    p = tmp_path / "config.yaml"
    p.write_text(text)
    return p


def test_minimal_config_applies_defaults(tmp_path, frame_dir):
    p = write_config(tmp_path, f"input:\n  kind: image_dir\n  path: {frame_dir}\n")
    cfg = load_config(p)
    assert cfg.flow.window_side == 15
    assert cfg.flow.num_levels == 5
    assert cfg.corners.max_corners == 200
    assert cfg.corners.quality_level == 0.03
    assert cfg.corners.min_distance == 10.0
    assert cfg.zones.left_boundary_ratio == 0.35
    assert cfg.zones.center_boundary_ratio == 0.65
    assert (cfg.zones.left_gate, cfg.zones.center_gate,
            cfg.zones.right_gate) == (210.0, 220.0, 210.0)
    assert cfg.si_lambda == 0.5
    assert cfg.guidance.cooldown_frames == 30
    # non-scenario inputs default to a far-everything constant depth
    assert cfg.depth_backend.kind == "constant"
    assert cfg.depth_backend.source == 255.0
    assert cfg.detect_backend is None


def test_out_of_range_quality_level_named(tmp_path, frame_dir):
    p = write_config(tmp_path, f"""input:
  kind: image_dir
  path: {frame_dir}
corners:
  quality_level: 1.5
""")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert info.value.parameter == "corners.quality_level"


def test_missing_input_path(tmp_path):
    p = write_config(tmp_path, "seed: 3\n")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert info.value.parameter == "input.path"


def test_nonexistent_input_path(tmp_path):
    p = write_config(tmp_path, "input:\n  kind: image_dir\n  path: missing/\n")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert info.value.parameter == "input.path"


def test_parse_error_reports_line(tmp_path):
    p = write_config(tmp_path, "input: {kind: image_dir,\n  path: [unclosed\n")
    with pytest.raises(ParseError) as info:
        load_config(p)
    assert "line" in str(info.value)


def test_unknown_keys_rejected(tmp_path, frame_dir):
    p = write_config(tmp_path, f"""input:
  kind: image_dir
  path: {frame_dir}
flow:
  window_size: 15
""")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert info.value.parameter == "flow.window_size"


def test_even_window_rejected(tmp_path, frame_dir):
    p = write_config(tmp_path, f"""input:
  kind: image_dir
  path: {frame_dir}
flow:
  window_side: 14
""")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert info.value.parameter == "flow.window_side"


def test_oracle_backend_requires_scenario(tmp_path, frame_dir):
    p = write_config(tmp_path, f"""input:
  kind: image_dir
  path: {frame_dir}
backends:
  detect:
    kind: oracle
""")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert info.value.parameter == "backends.detect.kind"


def test_replay_backend_path_checked(tmp_path, frame_dir):
    p = write_config(tmp_path, f"""input:
  kind: image_dir
  path: {frame_dir}
backends:
  detect:
    kind: replay
    path: missing.txt
""")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert info.value.parameter == "backends.detect.path"


def test_zone_ratio_ordering_enforced(tmp_path, frame_dir):
    p = write_config(tmp_path, f"""input:
  kind: image_dir
  path: {frame_dir}
zones:
  left_boundary_ratio: 0.7
  center_boundary_ratio: 0.6
""")
    with pytest.raises(ValidationError) as info:
        load_config(p)
    assert info.value.parameter == "zones.center_boundary_ratio"


def test_explicit_none_depth_backend_respected(tmp_path, frame_dir):
    p = write_config(tmp_path, f"""input:
  kind: image_dir
  path: {frame_dir}
backends:
  depth:
    kind: none
""")
    cfg = load_config(p)
    assert cfg.depth_backend is None


def test_scenario_defaults_to_oracle_backends(tmp_path):
    script = tmp_path / "scene.yaml"
    script.write_text("scene: {name: s, width: 320, height: 240, duration: 5}\n")
    p = write_config(tmp_path, f"input:\n  kind: scenario\n  path: {script}\n")
    cfg = load_config(p)
    assert cfg.detect_backend.kind == "oracle"
    assert cfg.depth_backend.kind == "oracle"


def test_scenario_config_helper():
    cfg = scenario_config("some/script.yaml", seed=11)
    assert cfg.input_kind == "scenario"
    assert cfg.seed == 11
    assert cfg.detect_backend.kind == "oracle"
