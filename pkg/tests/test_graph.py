import dataclasses
import statistics
import threading
import time

import numpy as np
import pytest

from aegis import graph
from aegis import tensor as T
from aegis.errors import CompileError, ShapeError
from aegis.model_io import (LayerDecl, ModelManifest, fixture_weights, load_model,
                            reference_resnet20_manifest)
from aegis.window import NormalizationSpec, TimeWindow, preprocess_face


@pytest.fixture(scope="module")
def seed42(seed42_model):
    m, w = load_model(seed42_model)
    return m, w, graph.compile(m, w)


def seeded_window(seed=3, t=3):
    return np.random.default_rng(seed).uniform(0, 1, (48, 48, t)).astype(np.float32)


# ---------------------------------------------------------------------------
# compile


def test_compile_golden_path(seed42):
    m, _, g = seed42
    assert len(g.steps) == len(m.layers)
    assert g.input_spec == (48, 48, 3)
    assert g.steps[-1].output_shape == (1, 1, 7)


def test_dense_64x6_fails_compile():
    m = reference_resnet20_manifest(3)
    w = fixture_weights(42, 3)
    w["fc.weights"] = np.zeros((64, 6), np.float32)
    with pytest.raises(CompileError) as ei:
        graph.compile(m, w)
    assert "fc" in str(ei.value) and "(64, 6)" in str(ei.value)
    assert m.layers[ei.value.layer_index].id == "fc"


def test_add_from_later_layer_fails_compile():
    m = reference_resnet20_manifest(3)
    layers = list(m.layers)
    i = next(k for k, layer in enumerate(layers) if layer.op == "add")
    layers[i] = dataclasses.replace(layers[i], params={"from": layers[i + 3].id})
    with pytest.raises(CompileError, match="not an earlier layer") as ei:
        graph.compile(dataclasses.replace(m, layers=tuple(layers)), fixture_weights(42, 3))
    assert ei.value.layer_index == i


def test_shape_chain_lists_every_layer(seed42):
    _, _, g = seed42
    chain = g.shape_chain()
    assert chain[0] == ("stem.conv", "conv2d", (48, 48, 16))
    assert chain[-1] == ("softmax", "softmax", (1, 1, 7))


# ---------------------------------------------------------------------------
# infer


def test_all_zero_window_normalized(seed42):
    res = graph.infer(seed42[2], np.zeros((48, 48, 3), np.float32))
    assert abs(float(res.probabilities.astype(np.float64).sum()) - 1) <= 1e-6
    assert res.probabilities.dtype == np.float32


def test_same_window_twice_identical_bytes(seed42):
    x = seeded_window()
    a, b = graph.infer(seed42[2], x), graph.infer(seed42[2], x)
    assert a.probabilities.tobytes() == b.probabilities.tobytes()
    assert [k for k, _ in a.per_layer_micros] == [s.layer_id for s in seed42[2].steps]


def test_window_shape_mismatch(seed42):
    with pytest.raises(ShapeError):
        graph.infer(seed42[2], np.zeros((48, 48, 4), np.float32))


def straight_line_resnet20(w, x):
    """Hand-written forward pass calling the tensor ops directly."""

    def conv_bn(name, v, stride):
        v = T.conv2d(v, T.ConvParams(w[f"{name}.conv.kernel"], w[f"{name}.conv.bias"],
                                     stride, "same_zero"))
        return T.batchnorm_infer(v, T.BatchNormParams(
            w[f"{name}.bn.gamma"], w[f"{name}.bn.beta"], w[f"{name}.bn.mean"],
            w[f"{name}.bn.var"], 1e-5))

    v = T.relu(conv_bn("stem", x, 1))
    for stage in (1, 2, 3):
        for block in range(3):
            name = f"s{stage}b{block}"
            stride = 2 if stage > 1 and block == 0 else 1
            main = conv_bn(f"{name}.b", T.relu(conv_bn(f"{name}.a", v, stride)), 1)
            short = conv_bn(f"{name}.proj", v, stride) if stride == 2 else v
            v = T.relu(T.add(short, main) if stride == 2 else T.add(main, short))
    v = T.dense(T.global_avg_pool(v), w["fc.weights"], w["fc.bias"])
    return T.softmax(v).reshape(-1)


def test_matches_straight_line_interpreter_0_ulp(seed42):
    _, w, g = seed42
    for seed in range(3):
        x = seeded_window(seed)
        assert graph.infer(g, x).probabilities.tobytes() == \
            straight_line_resnet20(w, x).tobytes()


def tiny_graph(logit_bias):
    layers = (LayerDecl("pool", "global_avg_pool"),
              LayerDecl("fc", "dense", {}, ("fc.w", "fc.b")),
              LayerDecl("softmax", "softmax"))
    w = {"fc.w": np.zeros((1, 7), np.float32), "fc.b": np.asarray(logit_bias, np.float32)}
    return graph.compile(ModelManifest((48, 48, 1), layers), w)


def test_argmax_tie_breaks_to_lowest_index():
    g = tiny_graph([0, 2, 1, 2, 2, 0, 0])
    res = graph.infer(g, np.zeros((48, 48, 1), np.float32))
    assert res.argmax_index == 1
    assert res.confidence == pytest.approx(float(res.probabilities[3]))


def test_concurrent_infer_is_reentrant(seed42):
    g = seed42[2]
    xs = [seeded_window(s) for s in range(4)]
    expected = [graph.infer(g, x).probabilities.tobytes() for x in xs]
    got = [None] * 4

    def work(i):
        got[i] = graph.infer(g, xs[i]).probabilities.tobytes()

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    assert got == expected


def test_layer_timings_sum_close_to_wall_clock(seed42):
    g = seed42[2]
    x = seeded_window()
    ratios = []
    for _ in range(7):
        t0 = time.perf_counter_ns()
        res = graph.infer(g, x)
        wall = (time.perf_counter_ns() - t0) / 1000.0
        ratios.append(sum(us for _, us in res.per_layer_micros) / wall)
    assert 0.9 <= statistics.median(ratios) <= 1.0


def test_normalization_applied_exactly_once():
    m = dataclasses.replace(reference_resnet20_manifest(1), normalization=(2.0, -1.0))
    g = graph.compile(m, fixture_weights(42, 1))
    face = np.random.default_rng(8).integers(0, 256, (48, 48)).astype(np.uint8)
    raw = np.ascontiguousarray((face / np.float32(255)).astype(np.float32)[..., None])
    norm = NormalizationSpec(*m.normalization)
    win = TimeWindow(1)
    win.push(preprocess_face(face, norm))
    once = graph.infer(g, win.stack()).probabilities
    assert once.tobytes() != graph.infer(g, raw).probabilities.tobytes()
    np.testing.assert_allclose(win.stack(), 2.0 * raw - 1.0, atol=1e-6)
    # identity normalization leaves the window untouched
    win1 = TimeWindow(1)
    win1.push(preprocess_face(face, NormalizationSpec(1.0, 0.0)))
    np.testing.assert_allclose(win1.stack(), raw, atol=1e-7)


# ---------------------------------------------------------------------------
# flops


def test_flops_single_1x1_conv():
    layers = (LayerDecl("c", "conv2d", {"stride": 1, "padding": "same_zero"}, ("k", "b")),
              LayerDecl("pool", "global_avg_pool"),
              LayerDecl("fc", "dense", {}, ("w", "bb")),
              LayerDecl("softmax", "softmax"))
    w = {"k": np.ones((1, 1, 1, 1), np.float32), "b": np.zeros(1, np.float32),
         "w": np.zeros((1, 7), np.float32), "bb": np.zeros(7, np.float32)}
    g = graph.compile(ModelManifest((48, 48, 1), layers), w)
    assert g.steps[0].macs * 2 == 2 * 48 * 48 == 4608


def test_flops_relu_only_graph_is_zero():
    # manifests must end in a 7-way softmax, so build the relu-only plan directly
    steps = tuple(graph.Step(f"r{i}", "relu", i, None, T.relu, (48, 48, 1), 0)
                  for i in range(3))
    g = graph.CompiledGraph(steps, (48, 48, 1), (), (1.0, 0.0))
    assert graph.flops_estimate(g) == 0
    compiled = graph.compile(*_relu_chain())
    assert [s.macs for s in compiled.steps if s.op == "relu"] == [0, 0]


def _relu_chain():
    layers = (LayerDecl("r1", "relu"), LayerDecl("r2", "relu"),
              LayerDecl("pool", "global_avg_pool"),
              LayerDecl("fc", "dense", {}, ("w", "b")), LayerDecl("s", "softmax"))
    w = {"w": np.zeros((1, 7), np.float32), "b": np.zeros(7, np.float32)}
    return ModelManifest((48, 48, 1), layers), w


def test_flops_resnet20_hand_tally(seed42):
    conv3 = 3 * 3
    tally = (
        48 * 48 * conv3 * 3 * 16                       # encoding conv
        + 6 * 48 * 48 * conv3 * 16 * 16                # stage 1
        + 24 * 24 * conv3 * 16 * 32 + 5 * 24 * 24 * conv3 * 32 * 32 + 24 * 24 * 16 * 32
        + 12 * 12 * conv3 * 32 * 64 + 5 * 12 * 12 * conv3 * 64 * 64 + 12 * 12 * 32 * 64
        + 64 * 7                                       # classifier
    )
    assert graph.flops_estimate(seed42[2]) == 2 * tally == 183_657_344
