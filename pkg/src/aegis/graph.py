"""Compile a validated manifest into an execution plan and run it."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import CompileError, ModelValidationError, ShapeError
from .model_io import INPUT_ID, ModelManifest, WeightTable, infer_shapes


@dataclass(frozen=True)
class Step:
    layer_id: str
    op: str
    source: int  # index into the value list; 0 is the graph input
    other: int | None  # second operand for add
    fn: Callable
    output_shape: tuple[int, ...]
    macs: int


@dataclass(frozen=True)
class CompiledGraph:
    steps: tuple[Step, ...]
    input_spec: tuple[int, int, int]
    class_labels: tuple[str, ...]
    normalization: tuple[float, float]

    def shape_chain(self) -> list[tuple[str, str, tuple[int, ...]]]:
        return [(s.layer_id, s.op, s.output_shape) for s in self.steps]


@dataclass(frozen=True)
class InferenceResult:
    probabilities: np.ndarray  # (7,) float32
    argmax_index: int
    per_layer_micros: list[tuple[str, float]]

    @property
    def confidence(self) -> float:
        return float(self.probabilities[self.argmax_index])


def _bind(op: str, params: dict, w: list[np.ndarray]) -> Callable:
    if op == "conv2d":
        p = T.ConvParams(w[0], w[1], params["stride"], params["padding"])
        return lambda x: T.conv2d(x, p)
    if op == "batchnorm":
        p = T.BatchNormParams(w[0], w[1], w[2], w[3], params["epsilon"])
        return lambda x: T.batchnorm_infer(x, p)
    if op == "dense":
        return lambda x: T.dense(x, w[0], w[1])
    simple = {"relu": T.relu, "global_avg_pool": T.global_avg_pool,
              "softmax": T.softmax, "add": T.add}
    return simple[op]


def compile(manifest: ModelManifest, weights: WeightTable) -> CompiledGraph:
    try:
        shapes = infer_shapes(manifest, weights)
    except ModelValidationError as exc:
        raise CompileError(str(exc), exc.layer_index) from exc

    slot = {INPUT_ID: 0}
    steps = []
    for i, layer in enumerate(manifest.layers):
        w = [weights[r] for r in layer.weight_refs]
        out = shapes[i]
        if layer.op == "conv2d":
            kh, kw, cin, cout = w[0].shape
            macs = out[0] * out[1] * kh * kw * cin * cout
        elif layer.op == "dense":
            macs = w[0].shape[0] * w[0].shape[1]
        else:
            macs = 0
        other = slot[layer.params["from"]] if layer.op == "add" else None
        steps.append(Step(layer.id, layer.op, slot[manifest.source_of(i)], other,
                          _bind(layer.op, layer.params, w), out, macs))
        slot[layer.id] = i + 1
    return CompiledGraph(tuple(steps), tuple(manifest.input_spec),
                         tuple(manifest.class_labels), tuple(manifest.normalization))


def infer(g: CompiledGraph, window: np.ndarray) -> InferenceResult:
    """Evaluate the graph on an already-normalized HxWxt window."""
    if tuple(window.shape) != g.input_spec:
        raise ShapeError(f"window shape {tuple(window.shape)} != model input {g.input_spec}")
    values = [np.ascontiguousarray(window, dtype=np.float32)]
    timings = []
    for step in g.steps:
        t0 = time.perf_counter_ns()
        x = values[step.source]
        y = step.fn(x) if step.other is None else step.fn(x, values[step.other])
        timings.append((step.layer_id, (time.perf_counter_ns() - t0) / 1000.0))
        values.append(y)
    probs = values[-1].reshape(-1)
    return InferenceResult(probs, int(np.argmax(probs)), timings)


def flops_estimate(g: CompiledGraph) -> int:
    return sum(2 * s.macs for s in g.steps)
