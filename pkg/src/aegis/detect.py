"""Haar-cascade face detection over integral images, plus IoU track association.

Window evaluation is vectorised over all candidate positions of one scale;
stages are applied to the surviving positions only, which is the batch form
of per-window early rejection.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import BoundsError, ConfigError

CASCADE_TAG = "aegis_cascade_v1"


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    def clamp(self, width: int, height: int) -> "BoundingBox":
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x + self.w, width), min(self.y + self.h, height)
        return BoundingBox(x0, y0, max(x1 - x0, 0), max(y1 - y0, 0))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.w * a.h + b.w * b.h - inter)


# ---------------------------------------------------------------------------
# integral images


@dataclass(frozen=True)
class IntegralImage:
    """Exclusive prefix sums: ``sum[i, j]`` covers rows ``[0, i)`` and cols ``[0, j)``."""

    sum: np.ndarray  # (h+1, w+1) uint64
    sqsum: np.ndarray  # (h+1, w+1) uint64

    @property
    def width(self) -> int:
        return self.sum.shape[1] - 1

    @property
    def height(self) -> int:
        return self.sum.shape[0] - 1

    def rect_sum(self, x: int, y: int, w: int, h: int) -> int:
        s = self.sum
        return (int(s[y + h, x + w]) - int(s[y, x + w]) - int(s[y + h, x])
                + int(s[y, x]))


def integral(luma: np.ndarray) -> IntegralImage:
    if luma.ndim != 2 or min(luma.shape) < 1:
        raise ValueError(f"integral needs a non-empty 2-D image, got {luma.shape}")
    v = luma.astype(np.uint64)
    h, w = v.shape
    s = np.zeros((h + 1, w + 1), dtype=np.uint64)
    q = np.zeros((h + 1, w + 1), dtype=np.uint64)
    s[1:, 1:] = v.cumsum(axis=0).cumsum(axis=1)
    q[1:, 1:] = (v * v).cumsum(axis=0).cumsum(axis=1)
    return IntegralImage(s, q)


def _box_sums(table: np.ndarray, x, y, w, h) -> np.ndarray:
    # wrap-around in uint64 cancels out, so the result is exact
    return (table[y + h, x + w] - table[y, x + w] - table[y + h, x]
            + table[y, x]).astype(np.float64)


# ---------------------------------------------------------------------------
# cascades


@dataclass(frozen=True)
class WeightedRect:
    x: int
    y: int
    w: int
    h: int
    weight: float


@dataclass(frozen=True)
class WeakClassifier:
    feature: tuple[WeightedRect, ...]
    threshold: float
    pass_value: float
    fail_value: float


@dataclass(frozen=True)
class Stage:
    threshold: float
    weak: tuple[WeakClassifier, ...]


@dataclass(frozen=True)
class Cascade:
    base_window: tuple[int, int]  # (w, h)
    stages: tuple[Stage, ...]

    def __post_init__(self):
        bw, bh = self.base_window
        if bw < 1 or bh < 1:
            raise ConfigError(f"cascade base window must be positive, got {self.base_window}")
        if not self.stages:
            raise ConfigError("cascade needs at least one stage")
        for si, stage in enumerate(self.stages):
            if not stage.weak:
                raise ConfigError(f"cascade stage {si} has no weak classifiers")
            for weak in stage.weak:
                if not weak.feature:
                    raise ConfigError(f"cascade stage {si} has an empty feature")
                for r in weak.feature:
                    if r.x < 0 or r.y < 0 or r.w < 1 or r.h < 1 or r.x + r.w > bw \
                            or r.y + r.h > bh:
                        raise ConfigError(
                            f"cascade stage {si}: rect {r} outside base window {self.base_window}")

    def to_json(self) -> dict:
        return {
            "format": CASCADE_TAG,
            "base_window": list(self.base_window),
            "stages": [{
                "threshold": s.threshold,
                "weak": [{
                    "feature": [{"x": r.x, "y": r.y, "w": r.w, "h": r.h, "weight": r.weight}
                                for r in wk.feature],
                    "threshold": wk.threshold,
                    "pass_value": wk.pass_value,
                    "fail_value": wk.fail_value,
                } for wk in s.weak],
            } for s in self.stages],
        }

    @classmethod
    def from_json(cls, doc) -> "Cascade":
        try:
            if doc["format"] != CASCADE_TAG:
                raise ConfigError(f"cascade format tag must be {CASCADE_TAG!r}")
            bw, bh = (int(v) for v in doc["base_window"])
            stages = tuple(
                Stage(float(s["threshold"]), tuple(
                    WeakClassifier(
                        tuple(WeightedRect(int(r["x"]), int(r["y"]), int(r["w"]),
                                           int(r["h"]), float(r["weight"]))
                              for r in wk["feature"]),
                        float(wk["threshold"]), float(wk["pass_value"]),
                        float(wk["fail_value"]))
                    for wk in s["weak"]))
                for s in doc["stages"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed cascade document: {exc!r}") from None
        return cls((bw, bh), stages)


def load_cascade(path) -> Cascade:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read cascade {path}: {exc}") from None
    return Cascade.from_json(doc)


def save_cascade(path, cascade: Cascade) -> None:
    Path(path).write_text(json.dumps(cascade.to_json(), indent=1) + "\n", encoding="utf-8")


def _round(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True)
class _ScaledWeak:
    rects: tuple[tuple[int, int, int, int, float], ...]
    threshold: float
    pass_value: float
    fail_value: float


def _scaled_window(c: Cascade, scale: float) -> tuple[int, int]:
    return _round(c.base_window[0] * scale), _round(c.base_window[1] * scale)


def _scale_cascade(c: Cascade, scale: float):
    ww, wh = _scaled_window(c, scale)
    stages = []
    for stage in c.stages:
        weak = []
        for wk in stage.weak:
            rects = []
            for r in wk.feature:
                x, y = _round(r.x * scale), _round(r.y * scale)
                w = max(1, min(_round(r.w * scale), ww - x))
                h = max(1, min(_round(r.h * scale), wh - y))
                rects.append((x, y, w, h, r.weight))
            weak.append(_ScaledWeak(tuple(rects), wk.threshold, wk.pass_value, wk.fail_value))
        stages.append((stage.threshold, tuple(weak)))
    return (ww, wh), stages


def _window_norm(ii: IntegralImage, xs, ys, ww, wh) -> np.ndarray:
    """Window std-dev (floored at 1.0) times window area, per position."""
    area = float(ww * wh)
    s = _box_sums(ii.sum, xs, ys, ww, wh)
    q = _box_sums(ii.sqsum, xs, ys, ww, wh)
    mean = s / area
    std = np.sqrt(np.maximum(q / area - mean * mean, 0.0))
    return np.maximum(std, 1.0) * area


def _stage_passes(ii: IntegralImage, stage, xs, ys, norm) -> np.ndarray:
    threshold, weaks = stage
    total = np.zeros(xs.shape, dtype=np.float64)
    for wk in weaks:
        f = np.zeros(xs.shape, dtype=np.float64)
        for rx, ry, rw, rh, weight in wk.rects:
            f += weight * _box_sums(ii.sum, xs + rx, ys + ry, rw, rh)
        total += np.where(f / norm >= wk.threshold, wk.pass_value, wk.fail_value)
    return total >= threshold


def _eval_positions(c: Cascade, ii: IntegralImage, xs: np.ndarray, ys: np.ndarray,
                    scale: float) -> np.ndarray:
    (ww, wh), stages = _scale_cascade(c, scale)
    norm = _window_norm(ii, xs, ys, ww, wh)
    alive = np.arange(xs.size)
    for stage in stages:
        if alive.size == 0:
            break
        alive = alive[_stage_passes(ii, stage, xs[alive], ys[alive], norm[alive])]
    mask = np.zeros(xs.size, dtype=bool)
    mask[alive] = True
    return mask


def eval_window(c: Cascade, ii: IntegralImage, origin: tuple[int, int], scale: float) -> bool:
    ww, wh = _scaled_window(c, scale)
    x, y = origin
    if x < 0 or y < 0 or x + ww > ii.width or y + wh > ii.height:
        raise BoundsError(
            f"window {ww}x{wh} at {origin} does not fit a {ii.width}x{ii.height} image")
    return bool(_eval_positions(c, ii, np.array([x]), np.array([y]), scale)[0])


@dataclass(frozen=True)
class ScanConfig:
    scale_factor: float = 1.25
    step: int = 2
    min_neighbors: int = 0

    def __post_init__(self):
        if not self.scale_factor > 1:
            raise ConfigError(f"scale_factor must be > 1, got {self.scale_factor}")
        if self.step < 1:
            raise ConfigError(f"step must be >= 1, got {self.step}")
        if self.min_neighbors < 0:
            raise ConfigError(f"min_neighbors must be >= 0, got {self.min_neighbors}")


GROUP_IOU = 0.3


def _adjacent(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU >= 0.3 test between two box arrays, in exact integer arithmetic."""
    iw = np.minimum.outer(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) \
        - np.maximum.outer(a[:, 0], b[:, 0])
    ih = np.minimum.outer(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) \
        - np.maximum.outer(a[:, 1], b[:, 1])
    np.maximum(iw, 0, out=iw)
    np.maximum(ih, 0, out=ih)
    inter = iw * ih
    union = np.add.outer(a[:, 2] * a[:, 3], b[:, 2] * b[:, 3]) - inter
    return 10 * inter >= 3 * union


def group_boxes(boxes: np.ndarray, min_neighbors: int) -> list[BoundingBox]:
    """Merge hits whose IoU >= 0.3 (transitively) and average each group.

    Groups come out ordered by their lowest member index.
    """
    n = len(boxes)
    if n == 0:
        return []
    boxes = np.asarray(boxes, dtype=np.int64)
    area = boxes[:, 2] * boxes[:, 3]
    # IoU <= min(area) / max(area), so only size classes within 0.3x can touch
    sizes = np.unique(area)
    members = [np.flatnonzero(area == s) for s in sizes]
    rows, cols = [np.arange(n)], [np.arange(n)]
    for i, si in enumerate(sizes):
        for j in range(i, len(sizes)):
            if 10 * si < 3 * sizes[j]:
                break
            adj = _adjacent(boxes[members[i]], boxes[members[j]])
            r, c = np.nonzero(adj)
            rows.append(members[i][r])
            cols.append(members[j][c])
    r, c = np.concatenate(rows), np.concatenate(cols)
    graph = csr_matrix((np.ones(len(r), dtype=bool), (r, c)), shape=(n, n))
    n_groups, labels = connected_components(graph, directed=False)
    out = []
    for g in range(n_groups):
        m = boxes[labels == g]
        k = len(m)
        if k < min_neighbors:
            continue
        # round-half-up integer mean
        mean = (2 * m.sum(axis=0) + k) // (2 * k)
        out.append(BoundingBox(*(int(v) for v in mean)))
    return out


def _grid_sums(table: np.ndarray, rx: int, ry: int, w: int, h: int, stride: int,
               nx: int, ny: int) -> np.ndarray:
    """Rect sums at every grid origin ``(i*stride + rx, j*stride + ry)`` via slicing."""
    def view(dy, dx):
        return table[ry + dy: ry + dy + (ny - 1) * stride + 1: stride,
                     rx + dx: rx + dx + (nx - 1) * stride + 1: stride]
    return (view(h, w) - view(0, w) - view(h, 0) + view(0, 0)).astype(np.float64)


def _eval_grid(c: Cascade, ii: IntegralImage, scale: float, stride: int):
    """Accepted window origins for every grid position at one scale."""
    (ww, wh), stages = _scale_cascade(c, scale)
    nx = (ii.width - ww) // stride + 1
    ny = (ii.height - wh) // stride + 1
    area = float(ww * wh)
    s = _grid_sums(ii.sum, 0, 0, ww, wh, stride, nx, ny)
    q = _grid_sums(ii.sqsum, 0, 0, ww, wh, stride, nx, ny)
    mean = s / area
    norm = (np.maximum(np.sqrt(np.maximum(q / area - mean * mean, 0.0)), 1.0) * area).ravel()
    # first stage on the full grid, later stages only on survivors
    threshold, weaks = stages[0]
    total = np.zeros(nx * ny, dtype=np.float64)
    for wk in weaks:
        f = np.zeros((ny, nx), dtype=np.float64)
        for rx, ry, rw, rh, weight in wk.rects:
            f += weight * _grid_sums(ii.sum, rx, ry, rw, rh, stride, nx, ny)
        total += np.where(f.ravel() / norm >= wk.threshold, wk.pass_value, wk.fail_value)
    alive = np.flatnonzero(total >= threshold)
    xs, ys = (alive % nx) * stride, (alive // nx) * stride
    for stage in stages[1:]:
        if alive.size == 0:
            break
        ok = _stage_passes(ii, stage, xs, ys, norm[alive])
        alive, xs, ys = alive[ok], xs[ok], ys[ok]
    return xs, ys, ww, wh


def detect(c: Cascade, luma: np.ndarray, cfg: ScanConfig,
           ii: IntegralImage | None = None) -> list[BoundingBox]:
    h, w = luma.shape
    if ii is None:
        ii = integral(luma)
    hits = []
    k = 0
    while True:
        scale = cfg.scale_factor ** k
        ww, wh = _scaled_window(c, scale)
        if ww > w or wh > h:
            break
        stride = max(1, _round(cfg.step * scale))
        xs, ys, ww, wh = _eval_grid(c, ii, scale, stride)
        hits.append(np.stack([xs, ys, np.full_like(xs, ww), np.full_like(ys, wh)], axis=1))
        k += 1
    allhits = np.concatenate(hits) if hits else np.zeros((0, 4), dtype=np.int64)
    grouped = group_boxes(allhits, cfg.min_neighbors)
    boxes = [b.clamp(w, h) for b in grouped]
    return sorted((b for b in boxes if b.w > 0 and b.h > 0), key=lambda b: (b.y, b.x))


# ---------------------------------------------------------------------------
# tracking


@dataclass
class FaceTrack:
    track_id: int
    box: BoundingBox
    misses: int = 0
    age: int = 0


@dataclass
class Tracker:
    """Greedy IoU association of per-frame detections to persistent tracks."""

    iou_min: float = 0.3
    max_misses: int = 5
    tracks: list[FaceTrack] = field(default_factory=list)
    next_id: int = 1
    retired: list[int] = field(default_factory=list)

    def associate(self, detections: list[BoundingBox]) -> list[FaceTrack]:
        pairs = []
        for ti, tr in enumerate(self.tracks):
            for di, det in enumerate(detections):
                score = iou(tr.box, det)
                if score >= self.iou_min:
                    # highest IoU first, then the older track, then detection order
                    pairs.append((-score, tr.track_id, di, ti))
        pairs.sort()
        used_t, used_d = set(), set()
        for _, _, di, ti in pairs:
            if ti in used_t or di in used_d:
                continue
            used_t.add(ti)
            used_d.add(di)
            tr = self.tracks[ti]
            tr.box = detections[di]
            tr.misses = 0
        self.retired = []
        survivors = []
        for ti, tr in enumerate(self.tracks):
            tr.age += 1
            if ti not in used_t:
                tr.misses += 1
                if tr.misses > self.max_misses:
                    self.retired.append(tr.track_id)
                    continue
            survivors.append(tr)
        for di, det in enumerate(detections):
            if di not in used_d:
                survivors.append(FaceTrack(self.next_id, det))
                self.next_id += 1
        self.tracks = survivors
        return survivors


def associate(tracks: list[FaceTrack], detections: list[BoundingBox],
              iou_min: float = 0.3, max_misses: int = 5,
              next_id: int | None = None) -> list[FaceTrack]:
    """Functional form of :meth:`Tracker.associate`; mutates the given tracks."""
    if next_id is None:
        next_id = max((t.track_id for t in tracks), default=0) + 1
    tracker = Tracker(iou_min, max_misses, list(tracks), next_id)
    return tracker.associate(detections)
