"""Per-face preprocessing and the FIFO time window fed to the classifier."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .detect import BoundingBox
from .errors import CropError, NotReadyError, ParameterError
from .tensor import bilinear_resize

FACE_SIZE = 48


@dataclass
class Frame:
    index: int
    timestamp_micros: int
    pixels: np.ndarray  # (H, W, 3) uint8
    # (colorspace, payload) of the decoded Y4M frame, for lossless passthrough
    source: tuple[str, bytes] | None = None
    augmented: bool = False

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class NormalizationSpec:
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if self.scale == 0:
            raise ParameterError("normalization scale must be non-zero")


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma, ``round(0.299 R + 0.587 G + 0.114 B)`` with halves rounded up."""
    v = rgb.astype(np.int32)
    y = (299 * v[..., 0] + 587 * v[..., 1] + 114 * v[..., 2] + 500) // 1000
    return np.clip(y, 0, 255).astype(np.uint8)


def crop_clamped(img: np.ndarray, box: BoundingBox) -> np.ndarray:
    if box.w < 1 or box.h < 1:
        raise CropError(f"crop box must have positive size, got {box}")
    c = box.clamp(img.shape[1], img.shape[0])
    if c.w == 0 or c.h == 0:
        raise CropError(f"crop box {box} does not intersect the {img.shape[1]}x{img.shape[0]} image")
    return img[c.y:c.y + c.h, c.x:c.x + c.w].copy()


def preprocess_face(face: np.ndarray, n: NormalizationSpec) -> np.ndarray:
    """Resize a u8 crop to 48x48 and map it to ``scale * (x / 255) + offset``."""
    x = np.ascontiguousarray(face, dtype=np.float32)[..., None]
    resized = bilinear_resize(x, FACE_SIZE, FACE_SIZE)[..., 0]
    plane = (resized / np.float32(255)) * np.float32(n.scale) + np.float32(n.offset)
    plane = plane.astype(np.float32)
    plane.flags.writeable = False
    return plane


class TimeWindow:
    """Fixed-capacity FIFO of preprocessed 48x48 planes, oldest first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ParameterError(f"window capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.slots: deque[np.ndarray] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.slots)

    def push(self, plane: np.ndarray) -> None:
        self.slots.append(plane)

    def stack(self) -> np.ndarray:
        """HxWxt tensor; missing leading channels replicate the oldest plane."""
        if not self.slots:
            raise NotReadyError("time window is empty")
        planes = list(self.slots)
        planes = [planes[0]] * (self.capacity - len(planes)) + planes
        out = np.stack(planes, axis=-1).astype(np.float32)
        out.flags.writeable = False
        return out


def push_frame(w: TimeWindow, face: np.ndarray, n: NormalizationSpec) -> None:
    w.push(preprocess_face(face, n))


def stack(w: TimeWindow) -> np.ndarray:
    return w.stack()
