"""End-to-end orchestration: decode -> detect -> window + infer -> overlay -> write.

Each stage is a callable object owning its own state (the tracker lives in
the detect stage, the per-track time windows in the classify stage), so the
same stage objects can be driven sequentially or from one thread each.
"""

from __future__ import annotations

import json
import logging
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from . import graph
from .detect import BoundingBox, Cascade, ScanConfig, Tracker, detect, load_cascade
from .errors import AegisError, ConfigError, StageError
from .media import (DEFAULT_FPS, Y4MWriter, encode_ppm, parse_y4m, read_frame_dir)
from .model_io import CLASS_LABELS, load_model
from .overlay import OverlayConfig, load_sprites, place_emoji, place_text
from .window import (Frame, NormalizationSpec, TimeWindow, crop_clamped, push_frame,
                     to_luma)

log = logging.getLogger(__name__)

MODES = ("deterministic_file", "realtime_drop")
STAGES = ("detect", "preprocess", "infer", "overlay")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    model_path: Path
    cascade_path: Path
    input: dict  # {"frames": dir} or {"y4m": path or "-"}
    output: dict  # {"frames": dir} or {"y4m": path}, plus {"predictions": path}
    t: int = 3
    scan: ScanConfig = field(default_factory=ScanConfig)
    overlay: OverlayConfig = field(default_factory=lambda: OverlayConfig(
        "emoji", default_sprite_map()))
    mode: str = "deterministic_file"
    iou_min: float = 0.3
    max_misses: int = 5
    queue_depth: int = 2
    pipelined: bool = False
    pace: bool = True
    base_dir: Path = field(default_factory=Path.cwd)


def default_sprite_map() -> dict[str, str]:
    root = resources.files("aegis") / "data" / "sprites"
    return {label: str(root / f"{label}.pam") for label in CLASS_LABELS}


def default_cascade_path() -> str:
    return str(resources.files("aegis") / "data" / "square_cascade.json")


def _get(doc: dict, key: str, typ, default=None, required=False):
    if key not in doc:
        if required:
            raise ConfigError(f"config is missing {key!r}")
        return default
    v = doc[key]
    if typ is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, typ) or (typ is int and isinstance(v, bool)):
        raise ConfigError(f"config field {key!r} must be {typ.__name__}, got {v!r}")
    return v


def _one_of(doc: dict, where: str, keys: tuple[str, ...]) -> dict:
    chosen = [k for k in keys if k in doc]
    if len(chosen) != 1:
        raise ConfigError(f"config {where!r} must name exactly one of {keys}")
    if not isinstance(doc[chosen[0]], str):
        raise ConfigError(f"config {where}.{chosen[0]} must be a path string")
    return {chosen[0]: doc[chosen[0]]}


_KNOWN_KEYS = {"model_path", "cascade_path", "scan", "t", "overlay", "input", "output",
               "mode", "tracking", "queue_depth", "pipelined", "pace"}


def config_from_dict(doc: dict, base_dir: Path | None = None) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    base = Path(base_dir) if base_dir is not None else Path.cwd()

    scan_doc = _get(doc, "scan", dict, {})
    scan = ScanConfig(_get(scan_doc, "scale_factor", float, 1.25),
                      _get(scan_doc, "step", int, 2),
                      _get(scan_doc, "min_neighbors", int, 0))
    ov = _get(doc, "overlay", dict, {})
    mode = _get(ov, "mode", str, "emoji")
    sprite_map = _get(ov, "sprite_map", dict, None)
    if sprite_map is None:
        sprite_map = default_sprite_map()
    overlay = OverlayConfig(mode, {k: str(v) for k, v in sprite_map.items()})

    inp = _one_of(_get(doc, "input", dict, required=True), "input", ("frames", "y4m"))
    out_doc = _get(doc, "output", dict, required=True)
    out = _one_of({k: v for k, v in out_doc.items() if k != "predictions"},
                  "output", ("frames", "y4m"))
    out["predictions"] = _get(out_doc, "predictions", str, required=True)

    tracking = _get(doc, "tracking", dict, {})
    run_mode = _get(doc, "mode", str, "deterministic_file")
    if run_mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {run_mode!r}")
    depth = _get(doc, "queue_depth", int, 2)
    if depth < 1:
        raise ConfigError("queue_depth must be >= 1")
    return PipelineConfig(
        model_path=base / _get(doc, "model_path", str, required=True),
        cascade_path=base / _get(doc, "cascade_path", str, default_cascade_path()),
        input=inp, output=out, t=_get(doc, "t", int, 3), scan=scan, overlay=overlay,
        mode=run_mode, iou_min=_get(tracking, "iou_min", float, 0.3),
        max_misses=_get(tracking, "max_misses", int, 5), queue_depth=depth,
        pipelined=_get(doc, "pipelined", bool, False), pace=_get(doc, "pace", bool, True),
        base_dir=base)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(doc, path.parent)


# ---------------------------------------------------------------------------
# records


@dataclass
class PredictionRecord:
    frame_index: int
    track_id: int
    box: tuple[int, int, int, int]
    label: str
    probabilities: list[float]
    latency_micros: dict[str, float]

    def to_json_line(self) -> str:
        return json.dumps({
            "frame_index": self.frame_index,
            "track_id": self.track_id,
            "box": list(self.box),
            "label": self.label,
            "probabilities": self.probabilities,
            "latency_micros": self.latency_micros,
        }, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# stages


def _micros(t0: int) -> float:
    return (time.perf_counter_ns() - t0) / 1000.0


@dataclass
class Detected:
    frame: Frame
    luma: np.ndarray
    faces: list[tuple[int, BoundingBox]]
    retired: list[int]
    detect_us: float


@dataclass
class FaceResult:
    track_id: int
    box: BoundingBox
    result: graph.InferenceResult
    preprocess_us: float
    infer_us: float


@dataclass
class Classified:
    frame: Frame
    faces: list[FaceResult]
    detect_us: float


class DetectStage:
    def __init__(self, cascade: Cascade, scan: ScanConfig, tracker: Tracker):
        self.cascade = cascade
        self.scan = scan
        self.tracker = tracker

    def __call__(self, frame: Frame) -> Detected:
        t0 = time.perf_counter_ns()
        luma = to_luma(frame.pixels)
        boxes = detect(self.cascade, luma, self.scan)
        tracks = self.tracker.associate(boxes)
        # only faces seen in this frame are classified; coasting tracks keep their window
        faces = [(tr.track_id, tr.box) for tr in tracks if tr.misses == 0]
        faces.sort(key=lambda f: f[0])
        return Detected(frame, luma, faces, list(self.tracker.retired), _micros(t0))


class ClassifyStage:
    def __init__(self, g: graph.CompiledGraph, norm: NormalizationSpec):
        self.graph = g
        self.norm = norm
        self.t = g.input_spec[2]
        self.windows: dict[int, TimeWindow] = {}

    def __call__(self, d: Detected) -> Classified:
        for tid in d.retired:
            self.windows.pop(tid, None)
        out = []
        for tid, box in d.faces:
            stage = "preprocess"
            try:
                t0 = time.perf_counter_ns()
                win = self.windows.setdefault(tid, TimeWindow(self.t))
                push_frame(win, crop_clamped(d.luma, box), self.norm)
                x = win.stack()
                pre_us = _micros(t0)
                stage = "infer"
                t0 = time.perf_counter_ns()
                res = graph.infer(self.graph, x)
                inf_us = _micros(t0)
            except AegisError as exc:
                raise StageError(str(exc), d.frame.index, stage, exc.exit_code) from exc
            out.append(FaceResult(tid, box, res, pre_us, inf_us))
        return Classified(d.frame, out, d.detect_us)


class RenderStage:
    def __init__(self, overlay: OverlayConfig, base_dir: Path, record_latency: bool):
        self.overlay = overlay
        self.sprites = (load_sprites(overlay.sprite_map, base_dir)
                        if overlay.mode == "emoji" else {})
        self.record_latency = record_latency

    def __call__(self, c: Classified) -> tuple[Frame, list[PredictionRecord], float]:
        t0 = time.perf_counter_ns()
        for f in c.faces:
            label = CLASS_LABELS[f.result.argmax_index]
            if self.overlay.mode == "emoji":
                place_emoji(c.frame, f.box, label, self.sprites)
            else:
                place_text(c.frame, f.box, label, f.result.confidence)
        overlay_us = _micros(t0)
        records = []
        for f in c.faces:
            lat = {"detect": c.detect_us, "preprocess": f.preprocess_us,
                   "infer": f.infer_us, "overlay": overlay_us}
            if not self.record_latency:
                lat = {k: 0 for k in lat}
            else:
                lat = {k: round(v, 1) for k, v in lat.items()}
            records.append(PredictionRecord(
                c.frame.index, f.track_id, tuple(f.box.as_list()),
                CLASS_LABELS[f.result.argmax_index],
                [float(p) for p in f.result.probabilities], lat))
        return c.frame, records, overlay_us


# ---------------------------------------------------------------------------
# I/O


def open_source(cfg: PipelineConfig) -> tuple[Iterator[Frame], Fraction, Callable[[], None]]:
    """Return (frames, fps, close)."""
    if "frames" in cfg.input:
        if not (cfg.base_dir / cfg.input["frames"]).is_dir():
            raise ConfigError(f"input frame directory not found: {cfg.input['frames']}")
        return read_frame_dir(cfg.base_dir / cfg.input["frames"]), DEFAULT_FPS, lambda: None
    spec = cfg.input["y4m"]
    try:
        stream = sys.stdin.buffer if spec == "-" else open(cfg.base_dir / spec, "rb")
    except OSError as exc:
        raise ConfigError(f"cannot open input {spec}: {exc}") from None
    try:
        _, _, fps, reader = parse_y4m(stream)
    except BaseException:
        if stream is not sys.stdin.buffer:
            stream.close()
        raise
    close = (lambda: None) if stream is sys.stdin.buffer else stream.close
    return iter(reader), fps, close


class FrameSink:
    def __init__(self, cfg: PipelineConfig, fps: Fraction):
        self.cfg = cfg
        self.fps = fps
        self.y4m: Y4MWriter | None = None
        self._y4m_file = None
        if "frames" in cfg.output:
            self.frames_dir = cfg.base_dir / cfg.output["frames"]
            self.frames_dir.mkdir(parents=True, exist_ok=True)
        pred = cfg.base_dir / cfg.output["predictions"]
        pred.parent.mkdir(parents=True, exist_ok=True)
        self.predictions = open(pred, "w", encoding="utf-8", newline="\n")

    def write(self, frame: Frame, records: list[PredictionRecord]) -> None:
        if "frames" in self.cfg.output:
            (self.frames_dir / f"frame_{frame.index:06d}.ppm").write_bytes(
                encode_ppm(frame.pixels))
        else:
            if self.y4m is None:
                path = self.cfg.base_dir / self.cfg.output["y4m"]
                path.parent.mkdir(parents=True, exist_ok=True)
                self._y4m_file = open(path, "wb")
                cs = frame.source[0] if frame.source is not None else "420jpeg"
                self.y4m = Y4MWriter(self._y4m_file, frame.width, frame.height, self.fps, cs)
            self.y4m.write(frame)
        for r in records:
            self.predictions.write(r.to_json_line())

    def close(self) -> None:
        self.predictions.close()
        if self._y4m_file is not None:
            self._y4m_file.close()


# ---------------------------------------------------------------------------
# queues


_END = object()


class StageQueue:
    """Bounded FIFO between two stages.

    With ``drop=True`` a put on a full queue evicts the oldest queued item
    (latest wins) and never blocks; otherwise the producer waits for space.
    The end-of-stream marker is always accepted.
    """

    def __init__(self, depth: int, drop: bool, name: str, on_drop=None):
        self.depth = depth
        self.drop = drop
        self.name = name
        self.on_drop = on_drop
        self._items: deque = deque()
        self._cond = threading.Condition()
        self.closed = False

    def put(self, item) -> None:
        with self._cond:
            if item is not _END:
                while not self.drop and len(self._items) >= self.depth and not self.closed:
                    self._cond.wait(0.05)
                if self.drop and len(self._items) >= self.depth:
                    evicted = self._items.popleft()
                    if self.on_drop is not None:
                        self.on_drop(evicted, self.name)
            self._items.append(item)
            self._cond.notify_all()

    def get(self):
        with self._cond:
            while not self._items:
                if self.closed:
                    return _END
                self._cond.wait(0.05)
            item = self._items.popleft()
            self._cond.notify_all()
            return item

    def close(self) -> None:
        with self._cond:
            self.closed = True
            self._cond.notify_all()


# ---------------------------------------------------------------------------
# runner


@dataclass
class RunSummary:
    frames_in: int = 0
    frames_out: int = 0
    records: int = 0
    dropped: list[int] = field(default_factory=list)


def _frame_index_of(item) -> int | None:
    for attr in ("index", "frame"):
        v = getattr(item, attr, None)
        if isinstance(v, int):
            return v
        if isinstance(v, Frame):
            return v.index
    return None


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        if cfg.mode not in MODES:
            raise ConfigError(f"unknown mode {cfg.mode!r}")
        for what, p in (("model", cfg.model_path), ("cascade", cfg.cascade_path)):
            if not Path(p).is_file():
                raise ConfigError(f"{what} file not found: {p}")
        manifest, weights = load_model(cfg.model_path)
        if manifest.t != cfg.t:
            raise ConfigError(f"config t={cfg.t} but model expects t={manifest.t}")
        self.graph = graph.compile(manifest, weights)
        self.cascade = load_cascade(cfg.cascade_path)
        self.norm = NormalizationSpec(*manifest.normalization)
        self.detect_stage = DetectStage(self.cascade, cfg.scan,
                                        Tracker(cfg.iou_min, cfg.max_misses))
        self.classify_stage = ClassifyStage(self.graph, self.norm)
        self.render_stage = RenderStage(cfg.overlay, cfg.base_dir,
                                        record_latency=cfg.mode == "realtime_drop")

    @staticmethod
    def _guard(stage: str, fn, item):
        try:
            return fn(item)
        except StageError:
            raise
        except AegisError as exc:
            raise StageError(str(exc), _frame_index_of(item), stage, exc.exit_code) from exc
        except OSError as exc:
            raise StageError(str(exc), _frame_index_of(item), stage) from exc

    def _decode(self, frames: Iterator[Frame]) -> Iterator[Frame]:
        last = None
        while True:
            try:
                frame = next(frames)
            except StopIteration:
                return
            except AegisError as exc:
                idx = getattr(exc, "frame_index", None)
                idx = idx if idx is not None else (0 if last is None else last + 1)
                raise StageError(str(exc), idx, "decode", exc.exit_code) from exc
            last = frame.index
            yield frame

    def run(self) -> RunSummary:
        frames, fps, close = open_source(self.cfg)
        sink = None
        try:
            sink = FrameSink(self.cfg, fps)
            if self.cfg.mode == "deterministic_file" and not self.cfg.pipelined:
                return self._run_sequential(self._decode(frames), sink)
            return self._run_threaded(self._decode(frames), fps, sink)
        finally:
            close()
            if sink is not None:
                sink.close()

    def _run_sequential(self, frames, sink: FrameSink) -> RunSummary:
        summary = RunSummary()
        for frame in frames:
            summary.frames_in += 1
            d = self._guard("detect", self.detect_stage, frame)
            c = self._guard("classify", self.classify_stage, d)
            out, records, _ = self._guard("overlay", self.render_stage, c)
            self._guard("write", lambda o: sink.write(o, records), out)
            summary.frames_out += 1
            summary.records += len(records)
        return summary

    def _run_threaded(self, frames, fps: Fraction, sink: FrameSink) -> RunSummary:
        drop = self.cfg.mode == "realtime_drop"
        summary = RunSummary()
        lock = threading.Lock()
        errors: list[BaseException] = []

        def on_drop(item, queue_name):
            idx = _frame_index_of(item)
            with lock:
                summary.dropped.append(idx)
            log.info("dropped frame %s at %s queue", idx, queue_name)

        depth = self.cfg.queue_depth
        queues = [StageQueue(depth, drop, n, on_drop) for n in ("detect", "classify", "render")]

        def stop_all():
            for q in queues:
                q.close()

        def reader():
            try:
                start = time.perf_counter()
                period = float(1 / fps)
                for i, frame in enumerate(frames):
                    if drop and self.cfg.pace:
                        delay = start + i * period - time.perf_counter()
                        if delay > 0:
                            time.sleep(delay)
                    with lock:
                        summary.frames_in += 1
                    queues[0].put(frame)
                    if queues[0].closed:
                        return
            except BaseException as exc:  # surfaced by the main thread
                errors.append(exc)
                stop_all()
            finally:
                queues[0].put(_END)

        def worker(name, fn, q_in, q_out):
            try:
                while True:
                    item = q_in.get()
                    if item is _END:
                        break
                    q_out.put(self._guard(name, fn, item))
            except BaseException as exc:
                errors.append(exc)
                stop_all()
            finally:
                q_out.put(_END)

        threads = [
            threading.Thread(target=reader, name="aegis-decode", daemon=True),
            threading.Thread(target=worker, args=("detect", self.detect_stage, queues[0],
                                                  queues[1]), name="aegis-detect", daemon=True),
            threading.Thread(target=worker, args=("classify", self.classify_stage, queues[1],
                                                  queues[2]), name="aegis-classify", daemon=True),
        ]
        for th in threads:
            th.start()
        try:
            while not errors:
                item = queues[2].get()
                if item is _END:
                    break
                out, records, _ = self._guard("overlay", self.render_stage, item)
                self._guard("write", lambda o: sink.write(o, records), out)
                summary.frames_out += 1
                summary.records += len(records)
        except BaseException as exc:
            errors.append(exc)
            stop_all()
        for th in threads:
            th.join()
        if errors:
            raise errors[0]
        summary.dropped.sort()
        return summary


def execute(cfg: PipelineConfig) -> RunSummary:
    return Pipeline(cfg).run()


def run(cfg: PipelineConfig) -> int:
    """Run the pipeline and return a process exit status."""
    try:
        summary = execute(cfg)
    except AegisError as exc:
        print(f"aegis: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if summary.dropped:
        log.info("dropped %d frames: %s", len(summary.dropped), summary.dropped)
    return 0
