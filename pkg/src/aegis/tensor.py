"""Dense float32 tensors and the operator set used by the classifier.

Tensors are plain C-contiguous ``numpy.float32`` arrays in HWC layout
(channel fastest). Every kernel returns a fresh read-only array. Reductions
accumulate in float64 and round to float32 once at the end. :func:`conv2d`
sums one GEMM per kernel tap in kh -> kw order, so the reduction order is
fixed and results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

PADDINGS = ("same_zero", "valid")


def as_tensor(data, shape=None) -> np.ndarray:
    """Build a validated read-only float32 tensor (rank 1..4, all dims >= 1)."""
    arr = np.array(data, dtype=np.float32, order="C", copy=True)
    if shape is not None:
        shape = tuple(int(d) for d in shape)
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} elements as shape {shape}")
        arr = arr.reshape(shape)
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f"tensor rank must be 1..4, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"tensor dims must be >= 1, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _finish(x: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(x, dtype=np.float32)
    out.flags.writeable = False
    return out


def _require_hwc(x: np.ndarray, what: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{what} expects an HWC tensor, got shape {x.shape}")


@dataclass(frozen=True)
class ConvParams:
    kernel: np.ndarray  # (kh, kw, in_ch, out_ch)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1
    padding: str = "same_zero"
    _kernel64: np.ndarray = field(init=False, repr=False, compare=False)
    _bias64: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        k = self.kernel
        if k.ndim != 4:
            raise ShapeError(f"conv kernel must be (kh, kw, in, out), got {k.shape}")
        if k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
            raise ShapeError(f"conv kernel spatial dims must be odd, got {k.shape}")
        if self.bias.shape != (k.shape[3],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match out_ch {k.shape[3]}")
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ShapeError(f"conv stride must be a positive int, got {self.stride!r}")
        if self.padding not in PADDINGS:
            raise ShapeError(f"unknown padding {self.padding!r}")
        object.__setattr__(self, "_kernel64", k.astype(np.float64))
        object.__setattr__(self, "_bias64", self.bias.astype(np.float64))


@dataclass(frozen=True)
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    _scale64: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        shapes = {v.shape for v in
                  (self.gamma, self.beta, self.running_mean, self.running_var)}
        if len(shapes) != 1 or self.gamma.ndim != 1:
            raise ShapeError(f"batchnorm vectors must share one 1-D shape, got {shapes}")
        if np.any(self.running_var < 0):
            raise ShapeError("batchnorm running_var must be non-negative")
        if not self.epsilon >= 0:
            raise ShapeError(f"batchnorm epsilon must be >= 0, got {self.epsilon}")
        inv = self.gamma.astype(np.float64) / np.sqrt(
            self.running_var.astype(np.float64) + float(self.epsilon))
        object.__setattr__(self, "_scale64", inv)


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int,
                   padding: str) -> tuple[int, int]:
    if padding == "same_zero":
        return -(-h // stride), -(-w // stride)
    if h < kh or w < kw:
        raise ShapeError(
            f"valid conv needs input >= kernel, got input {(h, w)} kernel {(kh, kw)}")
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x: np.ndarray, p: ConvParams) -> np.ndarray:
    _require_hwc(x, "conv2d")
    kh, kw, cin, cout = p.kernel.shape
    if x.shape[2] != cin:
        raise ShapeError(
            f"conv2d channel mismatch: input shape {x.shape}, kernel shape {p.kernel.shape}")
    h, w, _ = x.shape
    oh, ow = conv_output_hw(h, w, kh, kw, p.stride, p.padding)
    s = p.stride
    if p.padding == "same_zero":
        pt, pb = _same_pads(h, kh, s)
        pl, pr = _same_pads(w, kw, s)
        xd = np.zeros((h + pt + pb, w + pl + pr, cin), dtype=np.float64)
        xd[pt:pt + h, pl:pl + w] = x
    else:
        xd = x.astype(np.float64)
    k64 = p._kernel64
    out = np.empty((oh * ow, cout), dtype=np.float64)
    out[:] = p._bias64
    for i in range(kh):
        for j in range(kw):
            tap = xd[i:i + (oh - 1) * s + 1:s, j:j + (ow - 1) * s + 1:s]
            out += tap.reshape(oh * ow, cin) @ k64[i, j]
    return _finish(out.reshape(oh, ow, cout))


def batchnorm_infer(x: np.ndarray, p: BatchNormParams) -> np.ndarray:
    if x.shape[-1] != p.gamma.shape[0]:
        raise ShapeError(
            f"batchnorm channel mismatch: input shape {x.shape}, params length {p.gamma.shape[0]}")
    out = (x.astype(np.float64) - p.running_mean.astype(np.float64)) * p._scale64
    out += p.beta.astype(np.float64)
    return _finish(out)


def relu(x: np.ndarray) -> np.ndarray:
    return _finish(np.maximum(x, np.float32(0)))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _finish(np.add(a, b, dtype=np.float32))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    _require_hwc(x, "global_avg_pool")
    h, w, c = x.shape
    flat = x.astype(np.float64).reshape(h * w, c)
    return _finish((flat.sum(axis=0) / (h * w)).reshape(1, 1, c))


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    if x.ndim != 3 or x.shape[:2] != (1, 1):
        raise ShapeError(f"dense expects a (1, 1, C) input, got {x.shape}")
    c = x.shape[2]
    if weights.ndim != 2 or weights.shape[0] != c:
        raise ShapeError(f"dense dim mismatch: input {x.shape}, weights {weights.shape}")
    k = weights.shape[1]
    if bias.shape != (k,):
        raise ShapeError(f"dense dim mismatch: weights {weights.shape}, bias {bias.shape}")
    out = x.astype(np.float64).reshape(1, c) @ weights.astype(np.float64)
    out += bias.astype(np.float64)
    return _finish(out.reshape(1, 1, k))


def softmax(logits: np.ndarray) -> np.ndarray:
    if logits.size < 1:
        raise ShapeError("softmax needs at least one logit")
    z = logits.astype(np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received a non-finite logit")
    e = np.exp(z - z.max())
    return _finish(e / e.sum())


def _resize_axis(n_in: int, n_out: int):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-centre bilinear resize with edge clamping.

    Source coordinate for output index ``d`` is ``(d + 0.5) * in / out - 0.5``,
    clamped to ``[0, in - 1]``.
    """
    _require_hwc(x, "bilinear_resize")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be >= 1x1, got {(out_h, out_w)}")
    h, w, _ = x.shape
    y0, y1, fy = _resize_axis(h, out_h)
    x0, x1, fx = _resize_axis(w, out_w)
    xd = x.astype(np.float64)
    fx = fx[None, :, None]
    top = xd[y0][:, x0] + fx * (xd[y0][:, x1] - xd[y0][:, x0])
    bot = xd[y1][:, x0] + fx * (xd[y1][:, x1] - xd[y1][:, x0])
    return _finish(top + fy[:, None, None] * (bot - top))
