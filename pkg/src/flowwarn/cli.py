"""Operator-facing command line.

Verbs: ``run <config>`` (frame loop + event log + optional annotated
frames), ``bench <config> --frames N`` (per-stage latency table),
``simulate <script>`` (scenario harness with scripted ground truth), and
``validate <config>``.

Exit codes: 0 success, 1 config error, 2 ingestion error, 3 backend error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ParseError, PipelineConfig, ValidationError, load_config, \
    scenario_config
from .guidance import SpeechSink
from .ingest import IngestError, iter_gfrm, iter_image_dir
from .perception import DimensionMismatch, ReplayGap
from .pipeline import STAGES, Pipeline, event_log_line
from .sim import NoiseSpec, SceneGroundTruth, SceneRenderer, load_scene_script, \
    run_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INGEST = 2
EXIT_BACKEND = 3


def _err(msg: str):
    print(f"flowwarn: {msg}", file=sys.stderr)


def _load_config_or_exit(path):
    try:
        return load_config(path)
    except (ParseError, ValidationError) as exc:
        _err(str(exc))
        raise SystemExit(EXIT_CONFIG)


def _frame_source(config: PipelineConfig):
    """Returns (frames iterable, width, height, renderer-or-None)."""
    if config.input_kind == "scenario":
        script = load_scene_script(config.input_path)
        renderer = SceneRenderer(script, config.seed)
        frames = (renderer.render(t).frame for t in range(script.duration))
        return frames, script.width, script.height, renderer
    if config.input_kind == "gfrm":
        from .ingest import read_gfrm_header

        w, h, _ = read_gfrm_header(config.input_path)
        return iter_gfrm(config.input_path), w, h, None
    frames = iter_image_dir(config.input_path)
    first = next(frames)

    def chain():
        yield first
        yield from frames

    return chain(), first.width, first.height, None


def _bind_oracles(config: PipelineConfig, renderer):
    """Point oracle backend specs at the scenario's ground truth."""
    if renderer is None:
        return
    truth = SceneGroundTruth(renderer)
    for spec in (config.detect_backend, config.depth_backend):
        if spec is not None and spec.kind == "oracle" and spec.source is None:
            spec.source = truth


def _init_backends_or_exit(config: PipelineConfig):
    for spec, for_depth in ((config.detect_backend, False),
                            (config.depth_backend, True)):
        if spec is None:
            continue
        try:
            spec.runtime(for_depth)
        except (OSError, ValueError) as exc:
            _err(f"backend initialization failed: {exc}")
            raise SystemExit(EXIT_BACKEND)


def cmd_run(args) -> int:
    config = _load_config_or_exit(args.config)
    if args.event_log:
        config.output.event_log = Path(args.event_log)
    if args.annotate_dir:
        config.output.annotate_dir = Path(args.annotate_dir)

    try:
        frames, width, height, renderer = _frame_source(config)
    except (IngestError, OSError, ValueError) as exc:
        _err(f"ingestion failed: {exc}")
        return EXIT_INGEST
    _bind_oracles(config, renderer)
    _init_backends_or_exit(config)

    sink = SpeechSink(config.sink) if config.sink is not None else None
    pipe = Pipeline.from_config(config, frame_width=width, frame_height=height,
                                sink=sink)
    annotate_dir = config.output.annotate_dir
    if annotate_dir is not None:
        annotate_dir.mkdir(parents=True, exist_ok=True)

    log_lines = []
    frames_done = 0
    try:
        for frame in frames:
            if args.frames is not None and frames_done >= args.frames:
                break
            result = pipe.process_frame(frame)
            frames_done += 1
            for event in result.events:
                line = event_log_line(event)
                log_lines.append(line)
                print(line)
            if annotate_dir is not None and (
                    result.events
                    or result.frame_index % config.output.annotate_every == 0):
                from .annotate import save_annotated_frame

                save_annotated_frame(
                    annotate_dir / f"frame_{result.frame_index:06d}.png",
                    frame, result.objects, result.events, pipe.tracks,
                    pipe.zone_config)
    except (ReplayGap, DimensionMismatch) as exc:
        _err(f"backend failure: {exc}")
        return EXIT_BACKEND
    finally:
        pipe.close()

    if config.output.event_log is not None:
        config.output.event_log.parent.mkdir(parents=True, exist_ok=True)
        with open(config.output.event_log, "w", encoding="utf-8") as fh:
            for line in log_lines:
                fh.write(line + "\n")
    print(f"# processed {frames_done} frames, {len(log_lines)} warnings",
          file=sys.stderr)
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _load_config_or_exit(args.config)
    try:
        frames, width, height, renderer = _frame_source(config)
    except (IngestError, OSError, ValueError) as exc:
        _err(f"ingestion failed: {exc}")
        return EXIT_INGEST
    _bind_oracles(config, renderer)
    _init_backends_or_exit(config)

    if renderer is not None:
        duration = renderer.script.duration
        from .imgproc import RgbFrame

        def cycle():
            for i in range(args.frames):
                base = renderer.render(i % duration).frame
                yield (base if i < duration
                       else RgbFrame.from_array(base.pixels, frame_index=i))

        frames = cycle()

    pipe = Pipeline.from_config(config, frame_width=width, frame_height=height)
    samples = {stage: [] for stage in STAGES}
    frames_done = 0
    try:
        for frame in frames:
            if frames_done >= args.frames:
                break
            result = pipe.process_frame(frame)
            frames_done += 1
            for stage in STAGES:
                samples[stage].append(result.timings[stage])
    except (ReplayGap, DimensionMismatch) as exc:
        _err(f"backend failure: {exc}")
        return EXIT_BACKEND
    finally:
        pipe.close()

    if frames_done == 0:
        _err("no frames to benchmark")
        return EXIT_INGEST

    stats = {}
    for stage in STAGES:
        arr = np.asarray(samples[stage])
        stats[stage] = {"mean": float(arr.mean()),
                        "p95": float(np.percentile(arr, 95)),
                        "p99": float(np.percentile(arr, 99))}
    totals = np.asarray([sum(samples[s][i] for s in STAGES)
                         for i in range(frames_done)])
    fps = 1e6 / float(totals.mean())

    out = sys.stdout
    out.write("stage\tmean_us\tp95_us\tp99_us\n")
    for stage in STAGES:
        s = stats[stage]
        out.write(f"{stage}\t{s['mean']:.1f}\t{s['p95']:.1f}\t{s['p99']:.1f}\n")
    out.write(f"total\t{totals.mean():.1f}\t{np.percentile(totals, 95):.1f}\t"
              f"{np.percentile(totals, 99):.1f}\n")
    out.write(f"frames\t{frames_done}\n")
    out.write(f"fps\t{fps:.2f}\n")

    if args.figure:
        from .annotate import save_bench_figure

        save_bench_figure(args.figure, stats, fps)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        script = load_scene_script(args.script)
    except (OSError, ValueError) as exc:
        _err(f"cannot load scene script: {exc}")
        return EXIT_INGEST
    if args.config:
        config = _load_config_or_exit(args.config)
    else:
        config = scenario_config(args.script, seed=args.seed)
    noise = None
    if args.noise:
        try:
            dropout, jitter, sigma = (float(v) for v in args.noise.split(","))
            noise = NoiseSpec(dropout=dropout, jitter_px=jitter,
                              depth_sigma=sigma)
        except ValueError as exc:
            _err(f"bad --noise (want dropout,jitter_px,depth_sigma): {exc}")
            return EXIT_CONFIG

    report = run_scenario(script, config, seed=args.seed, noise=noise)
    print(report.summary())
    print("event\tsprite\tstart\tend\tzones\twarned_at")
    for row in report.event_rows():
        print(row)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.summary() + "\n")
            for row in report.event_rows():
                fh.write(row + "\n")
    if args.figure:
        from .annotate import save_scenario_figure

        save_scenario_figure(args.figure, report, script.duration)
    return EXIT_OK


def cmd_validate(args) -> int:
    config = _load_config_or_exit(args.config)
    print(f"config OK: input={config.input_kind}:{config.input_path}")
    print(f"  flow: window {config.flow.window_side}, levels "
          f"{config.flow.num_levels}, eps {config.flow.convergence_eps}")
    print(f"  corners: {config.corners.max_corners} @ "
          f"{config.corners.quality_level}/{config.corners.min_distance}")
    print(f"  zones: {config.zones.left_boundary_ratio}/"
          f"{config.zones.center_boundary_ratio}, gates "
          f"{config.zones.left_gate}/{config.zones.center_gate}/"
          f"{config.zones.right_gate}")
    print(f"  loss lambda: {config.si_lambda}, cooldown: "
          f"{config.guidance.cooldown_frames}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowwarn",
        description="Obstacle-approach warnings from optical flow, depth, "
                    "and detections.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="process an input and log warnings")
    p_run.add_argument("config")
    p_run.add_argument("--frames", type=int, default=None,
                       help="stop after this many frames")
    p_run.add_argument("--event-log", help="override the event log path")
    p_run.add_argument("--annotate-dir",
                       help="write annotated frame figures here")
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="measure per-stage latency")
    p_bench.add_argument("config")
    p_bench.add_argument("--frames", type=int, default=300)
    p_bench.add_argument("--figure", help="save a latency chart PNG")
    p_bench.set_defaults(func=cmd_bench)

    p_sim = sub.add_parser("simulate",
                           help="score the pipeline on a scripted scene")
    p_sim.add_argument("script")
    p_sim.add_argument("--config", help="pipeline config (defaults apply)")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--noise",
                       help="perturb backends: dropout,jitter_px,depth_sigma")
    p_sim.add_argument("--report", help="write the per-event table here")
    p_sim.add_argument("--figure", help="save a timeline PNG")
    p_sim.set_defaults(func=cmd_simulate)

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
