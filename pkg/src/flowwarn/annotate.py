"""Matplotlib renderings saved next to the delimited outputs: annotated
frames (boxes, track polylines, zone boundaries), per-stage latency charts,
and scenario timelines."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
from matplotlib.collections import LineCollection
from matplotlib.patches import Rectangle

ZONE_COLORS = {"left": "#ffa600", "center": "#ef5675", "right": "#7a5195"}


def save_annotated_frame(path, frame, states, events, tracks, zone_cfg,
                         trail: int = 10):
    """One annotated frame: detections, recent track trails, zone boundaries,
    and the frame's warning texts."""
    fig, ax = plt.subplots(figsize=(frame.width / 96, frame.height / 96), dpi=96)
    ax.imshow(frame.pixels, interpolation="nearest")
    lb, cb = zone_cfg.boundaries
    for x in (lb, cb):
        ax.axvline(x, color="white", linestyle="--", linewidth=0.8, alpha=0.7)

    segments = []
    for tr in tracks.active():
        pts = tr.points[-trail:]
        if len(pts) >= 2:
            segments.append(pts)
    if segments:
        ax.add_collection(LineCollection(segments, colors="#00ff88",
                                         linewidths=0.8, alpha=0.9))

    for state in states:
        x0, y0, x1, y1 = state.detection.bbox
        color = ZONE_COLORS[state.zone.label]
        ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False,
                               edgecolor=color, linewidth=1.5))
        ax.text(x0, max(y0 - 4, 2),
                f"{state.detection.class_label} d={state.depth_stat:.0f}",
                color=color, fontsize=7)

    for i, event in enumerate(events):
        ax.text(6, 14 + 12 * i, event.text, color="red", fontsize=9,
                bbox={"facecolor": "black", "alpha": 0.5, "pad": 1})

    ax.set_xlim(0, frame.width)
    ax.set_ylim(frame.height, 0)
    ax.set_axis_off()
    fig.savefig(path, bbox_inches="tight", pad_inches=0)
    plt.close(fig)


def save_bench_figure(path, stage_stats, fps: float):
    """Horizontal bars of per-stage mean latency with p95/p99 whiskers."""
    stages = list(stage_stats)
    means = [stage_stats[s]["mean"] / 1000.0 for s in stages]
    p95 = [stage_stats[s]["p95"] / 1000.0 for s in stages]
    p99 = [stage_stats[s]["p99"] / 1000.0 for s in stages]

    fig, ax = plt.subplots(figsize=(7, 3.2))
    ypos = range(len(stages))
    ax.barh(ypos, means, color="#4878cf", label="mean")
    ax.plot(p95, ypos, "k|", markersize=12, label="p95")
    ax.plot(p99, ypos, "r|", markersize=12, label="p99")
    ax.set_yticks(list(ypos), stages)
    ax.invert_yaxis()
    ax.set_xlabel("per-frame latency (ms)")
    ax.set_title(f"pipeline stages, end-to-end {fps:.1f} fps")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_scenario_figure(path, report, duration: int):
    """Timeline: scripted approach spans per zone with warning markers."""
    zone_rows = {"left": 0, "center": 1, "right": 2}
    fig, ax = plt.subplots(figsize=(8, 2.8))
    for oc in report.outcomes:
        e = oc.event
        for z in e.zones:
            row = zone_rows[z]
            ok = oc.matched_frame is not None
            ax.barh(row, e.end - e.start + 1, left=e.start, height=0.6,
                    color=ZONE_COLORS[z], alpha=0.85 if ok else 0.3,
                    edgecolor="none")
    for wv in report.warnings:
        ax.plot(wv.frame_index, zone_rows[wv.zone.label], "kv", markersize=6)
    ax.set_yticks([0, 1, 2], ["left", "center", "right"])
    ax.set_xlim(0, duration)
    ax.set_xlabel("frame")
    ax.set_title(report.summary())
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
