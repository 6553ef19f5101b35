"""TCVN model container: JSON manifest plus named float32 weight records.

Layout (all integers little-endian)::

    b"TCVN"  u16 version  u32 manifest_len  manifest (UTF-8 JSON)
    repeated until EOF:
        u16 name_len  name (UTF-8)  u8 rank  u32 dims[rank]  float32 payload

Weight records are written in sorted-name order so a given model always
serializes to the same bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (ModelFormatError, ModelTruncationError,
                     ModelValidationError, ParameterError)
from .tensor import PADDINGS, conv_output_hw

MAGIC = b"TCVN"
FORMAT_VERSION = 1
NUM_CLASSES = 7
CLASS_LABELS = ("anger", "disgust", "fear", "happiness", "sadness", "surprise",
                "neutral")
INPUT_HW = 48
MAX_T = 16

SUPPORTED_OPS = ("conv2d", "batchnorm", "relu", "add", "global_avg_pool",
                 "dense", "softmax")
# Reserved for other compact backbones; recognised but not executable.
RESERVED_OPS = ("depthwise_conv2d", "separable_conv2d")

# op -> (weight suffixes, allowed params with their required types)
_OP_SIGNATURES: dict[str, tuple[tuple[str, ...], dict[str, type]]] = {
    "conv2d": (("kernel", "bias"), {"stride": int, "padding": str}),
    "batchnorm": (("gamma", "beta", "mean", "var"), {"epsilon": float}),
    "relu": ((), {}),
    "add": ((), {"from": str}),
    "global_avg_pool": ((), {}),
    "dense": (("weights", "bias"), {}),
    "softmax": ((), {}),
}

INPUT_ID = "input"

WeightTable = dict  # name -> float32 ndarray


@dataclass(frozen=True)
class LayerDecl:
    id: str
    op: str
    params: dict = field(default_factory=dict)
    weight_refs: tuple[str, ...] = ()
    # None means "the preceding layer" (or the graph input for layer 0).
    input: str | None = None

    def to_json(self) -> dict:
        d = {"id": self.id, "op": self.op, "params": dict(self.params),
             "weight_refs": list(self.weight_refs)}
        if self.input is not None:
            d["input"] = self.input
        return d


@dataclass(frozen=True)
class ModelManifest:
    input_spec: tuple[int, int, int]  # (height, width, channels=t)
    layers: tuple[LayerDecl, ...]
    class_labels: tuple[str, ...] = CLASS_LABELS
    normalization: tuple[float, float] = (1.0, 0.0)  # (scale, offset)
    format_version: int = FORMAT_VERSION

    @property
    def t(self) -> int:
        return self.input_spec[2]

    def to_json(self) -> dict:
        h, w, c = self.input_spec
        scale, offset = self.normalization
        return {
            "format_version": self.format_version,
            "input_spec": {"height": h, "width": w, "channels": c},
            "class_labels": list(self.class_labels),
            "normalization": {"scale": scale, "offset": offset},
            "layers": [layer.to_json() for layer in self.layers],
        }

    def source_of(self, index: int) -> str:
        layer = self.layers[index]
        if layer.input is not None:
            return layer.input
        return INPUT_ID if index == 0 else self.layers[index - 1].id


# ---------------------------------------------------------------------------
# manifest parsing and validation


def _expect(cond: bool, message: str, layer_index: int | None = None) -> None:
    if not cond:
        raise ModelValidationError(message, layer_index)


def _expect_keys(obj, required: set, optional: set, where: str,
                 layer_index: int | None = None) -> None:
    _expect(isinstance(obj, dict), f"{where} must be a JSON object", layer_index)
    keys = set(obj)
    missing = required - keys
    unknown = keys - required - optional
    _expect(not missing, f"{where} missing keys {sorted(missing)}", layer_index)
    _expect(not unknown, f"{where} has unknown keys {sorted(unknown)}", layer_index)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v) -> bool:
    if _is_int(v):
        return abs(v) <= 2 ** 53
    return isinstance(v, float) and math.isfinite(v)


def manifest_from_json(doc) -> ModelManifest:
    _expect_keys(doc, {"format_version", "input_spec", "class_labels",
                       "normalization", "layers"}, set(), "manifest")
    version = doc["format_version"]
    _expect(_is_int(version) and version == FORMAT_VERSION,
            f"unsupported manifest format_version {version!r}")

    spec = doc["input_spec"]
    _expect_keys(spec, {"height", "width", "channels"}, set(), "input_spec")
    dims = (spec["height"], spec["width"], spec["channels"])
    _expect(all(_is_int(d) for d in dims), "input_spec dims must be integers")
    _expect(dims[:2] == (INPUT_HW, INPUT_HW),
            f"input_spec must be {INPUT_HW}x{INPUT_HW}, got {dims[0]}x{dims[1]}")
    _expect(1 <= dims[2] <= MAX_T, f"input channels t must be in 1..{MAX_T}, got {dims[2]}")

    labels = doc["class_labels"]
    _expect(isinstance(labels, list) and all(isinstance(s, str) for s in labels),
            "class_labels must be a list of strings")
    _expect(len(labels) == NUM_CLASSES,
            f"expected {NUM_CLASSES} classes in class_labels, got {len(labels)}")
    _expect(tuple(labels) == CLASS_LABELS,
            f"class_labels must be in canonical order {list(CLASS_LABELS)}")

    norm = doc["normalization"]
    _expect_keys(norm, {"scale", "offset"}, set(), "normalization")
    _expect(_is_number(norm["scale"]) and _is_number(norm["offset"]),
            "normalization scale/offset must be finite numbers")
    _expect(norm["scale"] != 0, "normalization scale must be non-zero")

    raw_layers = doc["layers"]
    _expect(isinstance(raw_layers, list) and raw_layers, "layers must be a non-empty list")
    layers = []
    for i, raw in enumerate(raw_layers):
        _expect_keys(raw, {"id", "op", "params", "weight_refs"}, {"input"},
                     f"layer {i}", i)
        lid, op = raw["id"], raw["op"]
        _expect(isinstance(lid, str) and lid and lid != INPUT_ID,
                f"layer {i}: invalid id {lid!r}", i)
        _expect(isinstance(op, str), f"layer {i}: op must be a string", i)
        _expect(op not in RESERVED_OPS,
                f"layer {i}: op {op!r} is reserved but not supported", i)
        _expect(op in SUPPORTED_OPS, f"layer {i}: unknown op {op!r}", i)
        refs = raw["weight_refs"]
        _expect(isinstance(refs, list) and all(isinstance(r, str) for r in refs),
                f"layer {i}: weight_refs must be a list of strings", i)
        src = raw.get("input")
        _expect(src is None or isinstance(src, str), f"layer {i}: input must be a string", i)
        params = raw["params"]
        _expect(isinstance(params, dict), f"layer {i}: params must be an object", i)
        layers.append(LayerDecl(lid, op, dict(params), tuple(refs), src))

    return ModelManifest(
        input_spec=dims, layers=tuple(layers), class_labels=tuple(labels),
        normalization=(float(norm["scale"]), float(norm["offset"])),
        format_version=version)


def _check_params(i: int, layer: LayerDecl) -> None:
    suffixes, allowed = _OP_SIGNATURES[layer.op]
    _expect(len(layer.weight_refs) == len(suffixes),
            f"layer {i} ({layer.id}): {layer.op} takes {len(suffixes)} weight refs, "
            f"got {len(layer.weight_refs)}", i)
    unknown = set(layer.params) - set(allowed)
    _expect(not unknown, f"layer {i} ({layer.id}): unknown params {sorted(unknown)}", i)
    missing = set(allowed) - set(layer.params)
    _expect(not missing, f"layer {i} ({layer.id}): missing params {sorted(missing)}", i)
    for key, typ in allowed.items():
        v = layer.params[key]
        ok = _is_number(v) if typ is float else (
            _is_int(v) if typ is int else isinstance(v, typ))
        _expect(ok, f"layer {i} ({layer.id}): param {key!r} has wrong type", i)
    if layer.op == "conv2d":
        _expect(layer.params["stride"] >= 1, f"layer {i} ({layer.id}): stride must be >= 1", i)
        _expect(layer.params["padding"] in PADDINGS,
                f"layer {i} ({layer.id}): padding must be one of {PADDINGS}", i)
    if layer.op == "batchnorm":
        _expect(layer.params["epsilon"] > 0, f"layer {i} ({layer.id}): epsilon must be > 0", i)


def infer_shapes(manifest: ModelManifest, weights: WeightTable) -> list[tuple[int, ...]]:
    """Validate the layer graph against the weights and return each layer's output shape.

    Raises ModelValidationError naming the first offending layer.
    """
    shapes: dict[str, tuple[int, ...]] = {INPUT_ID: tuple(manifest.input_spec)}
    order: dict[str, int] = {INPUT_ID: -1}
    used: set[str] = set()
    out_shapes = []
    for i, layer in enumerate(manifest.layers):
        where = f"layer {i} ({layer.id})"
        _expect(layer.id not in order, f"{where}: duplicate layer id", i)
        _check_params(i, layer)
        for ref in layer.weight_refs:
            _expect(ref in weights, f"{where}: missing weight ref {ref!r}", i)
        used.update(layer.weight_refs)
        src = manifest.source_of(i)
        _expect(src in order, f"{where}: input {src!r} is not an earlier layer", i)
        x = shapes[src]
        w = [tuple(weights[r].shape) for r in layer.weight_refs]

        if layer.op == "conv2d":
            _expect(len(x) == 3, f"{where}: conv2d needs HWC input, got {x}", i)
            k, b = w
            _expect(len(k) == 4 and k[0] % 2 == 1 and k[1] % 2 == 1,
                    f"{where}: kernel shape {k} must be (odd kh, odd kw, in, out)", i)
            _expect(k[2] == x[2],
                    f"{where}: input shape {x} does not match kernel shape {k}", i)
            _expect(b == (k[3],), f"{where}: bias shape {b} does not match kernel shape {k}", i)
            stride, padding = layer.params["stride"], layer.params["padding"]
            _expect(padding == "same_zero" or (x[0] >= k[0] and x[1] >= k[1]),
                    f"{where}: valid conv input {x} smaller than kernel {k}", i)
            y = (*conv_output_hw(x[0], x[1], k[0], k[1], stride, padding), k[3])
        elif layer.op == "batchnorm":
            _expect(all(s == (x[-1],) for s in w),
                    f"{where}: input shape {x} does not match batchnorm params {w}", i)
            _expect(np.all(weights[layer.weight_refs[3]] >= 0),
                    f"{where}: running variance must be non-negative", i)
            y = x
        elif layer.op == "relu":
            y = x
        elif layer.op == "add":
            other = layer.params["from"]
            _expect(other in shapes, f"{where}: add.from {other!r} is not an earlier layer", i)
            _expect(shapes[other] == x,
                    f"{where}: add operands differ: {x} vs {shapes[other]}", i)
            y = x
        elif layer.op == "global_avg_pool":
            _expect(len(x) == 3, f"{where}: global_avg_pool needs HWC input, got {x}", i)
            y = (1, 1, x[2])
        elif layer.op == "dense":
            _expect(len(x) == 3 and x[:2] == (1, 1),
                    f"{where}: dense needs (1, 1, C) input, got {x}", i)
            wt, b = w
            _expect(len(wt) == 2 and wt[0] == x[2],
                    f"{where}: input shape {x} does not match weights shape {wt}", i)
            _expect(b == (wt[1],), f"{where}: bias shape {b} does not match weights {wt}", i)
            y = (1, 1, wt[1])
        else:  # softmax
            _expect(len(x) == 3 and x[:2] == (1, 1),
                    f"{where}: softmax needs (1, 1, K) input, got {x}", i)
            y = x
        shapes[layer.id] = y
        order[layer.id] = i
        out_shapes.append(y)

    last = len(manifest.layers) - 1
    _expect(manifest.layers[-1].op == "softmax",
            f"layer {last} ({manifest.layers[-1].id}): last layer must be softmax", last)
    _expect(out_shapes[-1] == (1, 1, NUM_CLASSES),
            f"layer {last} ({manifest.layers[-1].id}): expected {NUM_CLASSES} classes, "
            f"got output shape {out_shapes[-1]}", last)
    unused = sorted(set(weights) - used)
    _expect(not unused, f"weight table has unreferenced entries {unused}")
    return out_shapes


def validate(manifest: ModelManifest, weights: WeightTable) -> list[tuple[int, ...]]:
    for name, arr in weights.items():
        _expect(arr.dtype == np.float32, f"weight {name!r} must be float32")
        _expect(bool(np.all(np.isfinite(arr))), f"weight {name!r} has non-finite values")
    return infer_shapes(manifest, weights)


# ---------------------------------------------------------------------------
# container encoding


def encode_model(manifest: ModelManifest, weights: WeightTable) -> bytes:
    text = json.dumps(manifest.to_json(), sort_keys=True, separators=(",", ":"))
    body = text.encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(body)), body]
    for name in sorted(weights):
        arr = np.ascontiguousarray(weights[name], dtype="<f4")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelTruncationError(
                f"truncated {what} at offset {self.pos}: need {n} bytes, "
                f"{len(self.data) - self.pos} available", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_weights(reader: _Reader) -> Iterator[tuple[str, np.ndarray]]:
    while reader.pos < len(reader.data):
        start = reader.pos
        (name_len,) = reader.unpack("<H", "weight name length")
        try:
            name = reader.take(name_len, "weight name").decode("utf-8")
        except UnicodeDecodeError:
            raise ModelFormatError(f"weight name at offset {start} is not UTF-8") from None
        (rank,) = reader.unpack("<B", f"rank of {name!r}")
        if not 1 <= rank <= 4:
            raise ModelFormatError(f"weight {name!r} at offset {start} has rank {rank}")
        dims = reader.unpack(f"<{rank}I", f"dims of {name!r}")
        if min(dims) < 1:
            raise ModelFormatError(f"weight {name!r} at offset {start} has zero dim {dims}")
        count = math.prod(dims)
        payload = reader.take(4 * count, f"payload of {name!r}")
        yield name, np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)


def decode_model(data: bytes) -> tuple[ModelManifest, WeightTable]:
    reader = _Reader(data)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, length = reader.unpack("<HI", "header")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported container version {version}")
    body = reader.take(length, "manifest")
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as exc:
        raise ModelFormatError(f"manifest is not valid UTF-8 JSON: {exc}") from None
    manifest = manifest_from_json(doc)
    weights: WeightTable = {}
    for name, arr in _read_weights(reader):
        if name in weights:
            raise ModelFormatError(f"duplicate weight name {name!r}")
        weights[name] = arr
    validate(manifest, weights)
    return manifest, weights


def load_model(path) -> tuple[ModelManifest, WeightTable]:
    return decode_model(Path(path).read_bytes())


def save_model(path, manifest: ModelManifest, weights: WeightTable) -> None:
    Path(path).write_bytes(encode_model(manifest, weights))


# ---------------------------------------------------------------------------
# reference graph and fixtures


class _GraphBuilder:
    def __init__(self):
        self.layers: list[LayerDecl] = []
        self.shapes: dict[str, tuple[int, ...]] = {}

    @property
    def last(self) -> str:
        return self.layers[-1].id

    def add(self, lid, op, params=None, weights=(), input=None, weight_shapes=()):
        refs = tuple(f"{lid}.{s}" for s in weights)
        self.layers.append(LayerDecl(lid, op, params or {}, refs, input))
        for ref, shape in zip(refs, weight_shapes):
            self.shapes[ref] = shape
        return lid

    def conv_bn(self, name, cin, cout, k, stride, input=None):
        self.add(f"{name}.conv", "conv2d", {"stride": stride, "padding": "same_zero"},
                 ("kernel", "bias"), input, ((k, k, cin, cout), (cout,)))
        self.add(f"{name}.bn", "batchnorm", {"epsilon": 1e-5},
                 ("gamma", "beta", "mean", "var"), None, [(cout,)] * 4)
        return self.last


def _resnet20_builder(t: int) -> _GraphBuilder:
    if not (isinstance(t, int) and 1 <= t <= MAX_T):
        raise ParameterError(f"t must be an integer in 1..{MAX_T}, got {t!r}")
    g = _GraphBuilder()
    # spatiotemporal encoding layer: mixes the t stacked frames
    g.conv_bn("stem", t, 16, 3, 1, input=INPUT_ID)
    g.add("stem.relu", "relu")
    cin = 16
    for stage, width in enumerate((16, 32, 64), start=1):
        for block in range(3):
            name = f"s{stage}b{block}"
            block_in = g.last
            stride = 2 if stage > 1 and block == 0 else 1
            g.conv_bn(f"{name}.a", cin, width, 3, stride)
            g.add(f"{name}.a.relu", "relu")
            main = g.conv_bn(f"{name}.b", width, width, 3, 1)
            if stride != 1 or cin != width:
                shortcut = g.conv_bn(f"{name}.proj", cin, width, 1, stride, input=block_in)
                g.add(f"{name}.add", "add", {"from": main}, input=shortcut)
            else:
                g.add(f"{name}.add", "add", {"from": block_in})
            g.add(f"{name}.relu", "relu")
            cin = width
    g.add("pool", "global_avg_pool")
    g.add("fc", "dense", {}, ("weights", "bias"), None, ((64, NUM_CLASSES), (NUM_CLASSES,)))
    g.add("softmax", "softmax")
    return g


def reference_resnet20_manifest(t: int) -> ModelManifest:
    """Encoding conv (3x3, t->16) followed by a 3-stage ResNet20 and a 7-way head."""
    g = _resnet20_builder(t)
    return ModelManifest(input_spec=(INPUT_HW, INPUT_HW, t), layers=tuple(g.layers))


def reference_weight_shapes(t: int) -> dict[str, tuple[int, ...]]:
    return dict(_resnet20_builder(t).shapes)


_MASK64 = (1 << 64) - 1


def splitmix64(seed: int) -> Iterator[int]:
    state = seed & _MASK64
    while True:
        state = (state + _GOLDEN_GAMMA) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        yield z ^ (z >> 31)


_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64_block(seed: int, start: int, n: int) -> np.ndarray:
    """Outputs ``start .. start+n-1`` (0-based) of :func:`splitmix64`, vectorised."""
    idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + idx * np.uint64(_GOLDEN_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def fixture_weights(seed: int, t: int) -> WeightTable:
    """Uniform(-0.05, 0.05) weights drawn in sorted-name order.

    Batchnorm gamma and running_var are shifted to 1 + u so the fixture stays
    a valid, non-degenerate model.
    """
    shapes = reference_weight_shapes(t)
    weights: WeightTable = {}
    drawn = 0
    for name in sorted(shapes):
        n = math.prod(shapes[name])
        bits = splitmix64_block(seed, drawn, n)
        drawn += n
        u = (bits >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        vals = -0.05 + 0.1 * u
        if name.endswith(".gamma") or name.endswith(".var"):
            vals = vals + 1.0
        weights[name] = vals.astype(np.float32).reshape(shapes[name])
    return weights


def gen_fixture(seed: int, t: int, path) -> None:
    save_model(path, reference_resnet20_manifest(t), fixture_weights(seed, t))
