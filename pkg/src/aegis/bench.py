"""Latency / throughput harness for the real-time target (25 FPS, 40 ms per frame)."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import graph
from .errors import ParameterError
from .pipeline import Pipeline, PipelineConfig, open_source
from .window import Frame

TARGET_FPS = 25.0
TARGET_P50_MS = 1000.0 / TARGET_FPS
BENCH_STAGES = ("detect", "preprocess", "infer", "overlay")


@dataclass
class Percentiles:
    p50: float
    p95: float
    p99: float


@dataclass
class BenchReport:
    frames_processed: int
    fps_mean: float
    latency_micros: dict[str, Percentiles]
    flops_estimate: int
    wall_seconds: float
    target_fps: float = TARGET_FPS
    samples: dict[str, list[float]] = field(default_factory=dict, repr=False)

    @property
    def end_to_end_p50_ms(self) -> float:
        return self.latency_micros["end_to_end"].p50 / 1000.0

    @property
    def meets_target(self) -> bool:
        return self.end_to_end_p50_ms <= TARGET_P50_MS

    def to_dict(self) -> dict:
        return {
            "frames_processed": self.frames_processed,
            "fps_mean": self.fps_mean,
            "latency_micros": {k: asdict(v) for k, v in self.latency_micros.items()},
            "flops_estimate": self.flops_estimate,
            "wall_seconds": self.wall_seconds,
            "target_fps": self.target_fps,
            "end_to_end_p50_ms": self.end_to_end_p50_ms,
            "meets_target": self.meets_target,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [
            f"frames measured : {self.frames_processed}",
            f"mean throughput : {self.fps_mean:.1f} FPS (target {self.target_fps:.0f} FPS)",
            f"model cost      : {self.flops_estimate / 1e6:.1f} MFLOP per window",
            "",
            f"{'stage':<12}{'p50 ms':>10}{'p95 ms':>10}{'p99 ms':>10}",
        ]
        for name, p in self.latency_micros.items():
            lines.append(f"{name:<12}{p.p50 / 1e3:>10.2f}{p.p95 / 1e3:>10.2f}"
                         f"{p.p99 / 1e3:>10.2f}")
        verdict = "meets" if self.meets_target else "MISSES"
        lines.append("")
        lines.append(f"end-to-end p50 {self.end_to_end_p50_ms:.2f} ms {verdict} the "
                     f"{TARGET_P50_MS:.0f} ms/frame budget")
        return "\n".join(lines)


def percentiles(samples) -> Percentiles:
    a = np.asarray(samples, dtype=np.float64)
    p50, p95, p99 = np.percentile(a, [50, 95, 99])
    return Percentiles(float(p50), float(p95), float(p99))


def bench(cfg: PipelineConfig, warmup_frames: int, measure_frames: int) -> BenchReport:
    """Run the stages in-process on looped input and report per-stage latency.

    Frames are decoded once up front; nothing is written to disk.
    """
    if measure_frames < 1:
        raise ParameterError("measure_frames must be >= 1")
    if warmup_frames < 0:
        raise ParameterError("warmup_frames must be >= 0")
    pipe = Pipeline(cfg)
    frames, _, close = open_source(cfg)
    try:
        source = list(pipe._decode(frames))
    finally:
        close()
    if not source:
        raise ParameterError("bench input has no frames")

    names = (*BENCH_STAGES, "end_to_end")
    samples: dict[str, list[float]] = {k: [] for k in names}
    wall = 0.0
    for i in range(warmup_frames + measure_frames):
        src = source[i % len(source)]
        frame = Frame(i, src.timestamp_micros, src.pixels.copy())
        t0 = time.perf_counter_ns()
        d = pipe._guard("detect", pipe.detect_stage, frame)
        c = pipe._guard("classify", pipe.classify_stage, d)
        _, _, overlay_us = pipe._guard("overlay", pipe.render_stage, c)
        e2e = (time.perf_counter_ns() - t0) / 1000.0
        if i < warmup_frames:
            continue
        wall += e2e / 1e6
        samples["detect"].append(d.detect_us)
        samples["preprocess"].append(sum(f.preprocess_us for f in c.faces))
        samples["infer"].append(sum(f.infer_us for f in c.faces))
        samples["overlay"].append(overlay_us)
        samples["end_to_end"].append(e2e)

    return BenchReport(
        frames_processed=measure_frames,
        fps_mean=measure_frames / wall if wall > 0 else float("inf"),
        latency_micros={k: percentiles(v) for k, v in samples.items()},
        flops_estimate=graph.flops_estimate(pipe.graph),
        wall_seconds=wall,
        samples=samples,
    )
