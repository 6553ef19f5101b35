"""Benchmark figures rendered next to the JSON report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import TARGET_P50_MS, BenchReport  # noqa: E402

STAGE_COLORS = {
    "detect": "#4c72b0",
    "preprocess": "#55a868",
    "infer": "#c44e52",
    "overlay": "#8172b2",
    "end_to_end": "#333333",
}


def latency_cdf(report: BenchReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, vals in report.samples.items():
        ms = np.sort(np.asarray(vals)) / 1000.0
        frac = np.arange(1, len(ms) + 1) / len(ms)
        ax.step(ms, frac, where="post", label=name, color=STAGE_COLORS.get(name),
                lw=2.0 if name == "end_to_end" else 1.2)
    ax.axvline(TARGET_P50_MS, ls="--", color="gray", lw=1)
    ax.text(TARGET_P50_MS, 0.02, " 25 FPS budget", color="gray", fontsize=8)
    ax.set_xlabel("latency per frame (ms)")
    ax.set_ylabel("fraction of frames")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def stage_breakdown(report: BenchReport, path: Path) -> Path:
    stages = [s for s in report.latency_micros if s != "end_to_end"]
    fig, ax = plt.subplots(figsize=(6, 2.4))
    left = 0.0
    for s in stages:
        w = report.latency_micros[s].p50 / 1000.0
        ax.barh([0], [w], left=left, color=STAGE_COLORS.get(s), label=s)
        left += w
    e2e = report.latency_micros["end_to_end"].p50 / 1000.0
    ax.plot([e2e, e2e], [-0.45, 0.45], color="black", lw=2, label="end-to-end p50")
    ax.set_yticks([])
    ax.set_xlabel("median latency (ms)")
    ax.legend(frameon=False, fontsize=7, ncol=3, loc="upper center",
              bbox_to_anchor=(0.5, -0.45))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_bench_figures(report: BenchReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [latency_cdf(report, out / "latency_cdf.png"),
            stage_breakdown(report, out / "stage_breakdown.png")]
