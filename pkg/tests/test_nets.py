import dataclasses

import numpy as np
import pytest

from icanet import nets
from icanet.dataio import glorot_weights
from icanet.nets import CaParams, DenseSpec, LayerSpec
from icanet.tensor import ShapeError

from oracles import extent, hswish, sigmoid

I3D_TABLE = [
    ("conv3d_1a_7x7", (64, 40, 112, 112)),
    ("maxpool3d_2a_3x3", (64, 40, 56, 56)),
    ("conv3d_2b_1x1", (64, 40, 56, 56)),
    ("conv3d_2c_3x3", (192, 40, 56, 56)),
    ("maxpool3d_3a_3x3", (192, 40, 28, 28)),
    ("mixed_3b", (256, 40, 28, 28)),
    ("mixed_3c", (480, 40, 28, 28)),
    ("maxpool3d_4a_3x3", (480, 20, 14, 14)),
    ("mixed_4b", (512, 20, 14, 14)),
    ("mixed_4c", (512, 20, 14, 14)),
    ("mixed_4d", (512, 20, 14, 14)),
    ("mixed_4e", (528, 20, 14, 14)),
    ("mixed_4f", (832, 20, 14, 14)),
    ("maxpool3d_5a_2x2", (832, 10, 7, 7)),
    ("mixed_5b", (832, 10, 7, 7)),
    ("mixed_5c", (1024, 10, 7, 7)),
    ("avgpool", (1024, 9, 1, 1)),
    ("logits", (4, 9, 1, 1)),
    ("temporal_mean", (4,)),
]

INCEPTION_OUT = {"mixed_3b": 256, "mixed_3c": 480, "mixed_4b": 512, "mixed_4c": 512,
                 "mixed_4d": 512, "mixed_4e": 528, "mixed_4f": 832, "mixed_5b": 832,
                 "mixed_5c": 1024}


def oracle_trace(net, shape):
    """Re-derive every row from the extent formula alone."""
    rows = []
    for layer in net.layers:
        p = layer.params
        if layer.kind in ("conv", "pool"):
            rank = len(shape) - 1
            k = p.kernel if isinstance(p.kernel, tuple) else (p.kernel,) * rank
            s = p.stride if isinstance(p.stride, tuple) else (p.stride,) * rank
            pad = p.padding if isinstance(p.padding, tuple) else (p.padding,) * rank
            c = p.out_channels if layer.kind == "conv" else shape[0]
            shape = (c,) + tuple(extent(*a) for a in zip(shape[1:], k, s, pad))
        elif layer.kind == "inception_block":
            shape = (p.b0 + p.b1[1] + p.b2[1] + p.b3,) + shape[1:]
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "dense":
            shape = (p.out_features,)
        elif layer.kind == "temporal_mean":
            shape = (shape[0],)
        rows.append((layer.name, shape))
    return rows


# ---------------------------------------------------------------- traces

def test_i3d_rgb_trace_table():
    net = nets.build_network("rgb_i3d")
    assert nets.shape_trace(net, (3, 79, 224, 224)) == I3D_TABLE


def test_i3d_flow_differs_only_in_input_channels():
    rgb, flo = nets.build_network("rgb_i3d"), nets.build_network("flow_i3d")
    assert flo.input_shape == (2, 79, 224, 224)
    assert nets.shape_trace(flo) == nets.shape_trace(rgb)
    assert flo.parameter_shapes()["conv3d_1a_7x7.weight"] == (64, 2, 7, 7, 7)


def test_inception_channel_arithmetic():
    net = nets.build_network("rgb_i3d")
    blocks = {l.name: l.params for l in net.layers if l.kind == "inception_block"}
    assert {n: b.out_channels for n, b in blocks.items()} == INCEPTION_OUT
    prev = 192
    for name in INCEPTION_OUT:
        assert blocks[name].in_channels == prev
        prev = blocks[name].out_channels


def test_cavgg16_trace():
    net = nets.build_network("cavgg16-3")
    rows = nets.shape_trace(net)
    assert len(rows) == 25
    assert [d for _, d in rows[-5:]] == [(512, 7, 7), (25088,), (4096,), (4096,), (4,)]
    assert [n for n, _ in rows if n.startswith("ca")] == ["ca1", "ca4", "ca5"]


def test_ca_counts():
    for name, want in (("cavgg16-3", 3), ("cavgg16-5", 5)):
        net = nets.build_network(name)
        assert sum(l.kind == "ca_module" for l in net.layers) == want
    assert len(nets.shape_trace(nets.build_network("cavgg16-5"))) == 27


@pytest.mark.parametrize("name", nets.NETWORKS)
@pytest.mark.parametrize("frames,size", [(79, 224), (32, 112)])
def test_trace_matches_independent_oracle(name, frames, size):
    net = nets.build_network(name, frames, size)
    assert nets.shape_trace(net) == oracle_trace(net, net.input_shape)


def test_small_profile_head():
    i3d = nets.build_network("rgb_i3d", 32, 112)
    rows = dict(nets.shape_trace(i3d))
    assert rows["mixed_5c"] == (1024, 4, 3, 3)
    assert rows["avgpool"] == (1024, 3, 1, 1)
    vgg = dict(nets.shape_trace(nets.build_network("cavgg16-3", size=112)))
    assert vgg["flatten"] == (4608,)


def test_corrupted_dense_names_layer():
    net = nets.build_network("cavgg16-3")
    layers = list(net.layers)
    i = [l.name for l in layers].index("fc6")
    layers[i] = LayerSpec("fc6", "dense", DenseSpec(25089, 4096), relu=True)
    bad = dataclasses.replace(net, layers=tuple(layers))
    with pytest.raises(ShapeError, match="fc6") as e:
        nets.shape_trace(bad)
    assert "25088" in str(e.value)


def test_format_trace_lists_every_layer():
    net = nets.build_network("rgb_i3d")
    text = nets.format_trace(net)
    assert "64x40x112x112" in text
    assert len(text.splitlines()) == 2 + 19


def test_unknown_network():
    with pytest.raises(ValueError, match="unknown network"):
        nets.build_network("resnet")


# ---------------------------------------------------------------- coordinate attention

def ca_weights(params, rng=None, zero=False, scale=0.3):
    shapes = {}
    for name, spec in params.transforms():
        shapes[f"{name}.weight"] = spec.weight_shape(1)
        shapes[f"{name}.bias"] = (spec.out_channels,)
    if zero:
        return {k: np.zeros(v, np.float32) for k, v in shapes.items()}
    return {k: rng.uniform(-scale, scale, v).astype(np.float32) for k, v in shapes.items()}


def test_ca_mid_channels():
    assert CaParams(64).mid_channels == 8
    assert CaParams(512).mid_channels == 32


@pytest.mark.parametrize("shape", [(8, 5, 7), (64, 28, 28)])
def test_ca_zero_gates_give_quarter(shape):
    x = np.random.default_rng(0).standard_normal(shape).astype(np.float32)
    params = CaParams(shape[0])
    y = nets.coordinate_attention(x, params, ca_weights(params, zero=True))
    assert y.shape == x.shape
    np.testing.assert_allclose(y, 0.25 * x, atol=1e-6)


def test_ca_gates_bounded():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.standard_normal((16, 6, 9)).astype(np.float32)
        params = CaParams(16)
        w = ca_weights(params, rng, scale=0.5)
        g_h, g_w = nets.ca_gates(x, params, w)
        assert ((g_h > 0) & (g_h < 1)).all() and ((g_w > 0) & (g_w < 1)).all()
        y = nets.coordinate_attention(x, params, w)
        assert y.shape == x.shape
        assert (np.abs(y) <= np.abs(x)).all()


def test_ca_gates_saturate_in_float32():
    # huge pre-activations round the gate to exactly 1; the output then equals x
    params = CaParams(8)
    w = ca_weights(params, zero=True)
    w["conv_h.bias"][:] = 100.0
    w["conv_w.bias"][:] = 100.0
    x = np.random.default_rng(0).standard_normal((8, 3, 3)).astype(np.float32)
    np.testing.assert_array_equal(nets.coordinate_attention(x, params, w), x)


def test_ca_straight_line_oracle():
    # every output cell recomputed from the pooled means with scalar arithmetic
    rng = np.random.default_rng(2)
    c, h, w = 8, 3, 4
    params = CaParams(c)
    weights = ca_weights(params, rng)
    x = rng.standard_normal((c, h, w))
    w1, b1 = weights["conv1.weight"][:, :, 0].astype(float), weights["conv1.bias"].astype(float)
    wh, bh = weights["conv_h.weight"][:, :, 0].astype(float), weights["conv_h.bias"].astype(float)
    ww, bw = weights["conv_w.weight"][:, :, 0].astype(float), weights["conv_w.bias"].astype(float)
    want = np.zeros_like(x)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                zh = [sum(x[k, i, jj] for jj in range(w)) / w for k in range(c)]
                zw = [sum(x[k, ii, j] for ii in range(h)) / h for k in range(c)]
                mh = [hswish(sum(w1[m, k] * zh[k] for k in range(c)) + b1[m]) for m in range(w1.shape[0])]
                mw = [hswish(sum(w1[m, k] * zw[k] for k in range(c)) + b1[m]) for m in range(w1.shape[0])]
                gh = sigmoid(sum(wh[ch, m] * mh[m] for m in range(len(mh))) + bh[ch])
                gw = sigmoid(sum(ww[ch, m] * mw[m] for m in range(len(mw))) + bw[ch])
                want[ch, i, j] = x[ch, i, j] * gh * gw
    got = nets.coordinate_attention(x.astype(np.float32), params, weights)
    np.testing.assert_allclose(got, want, atol=1e-5)


def test_ca_channel_mismatch():
    params = CaParams(8)
    with pytest.raises(ShapeError):
        nets.coordinate_attention(np.zeros((4, 3, 3)), params, ca_weights(params, zero=True))


# ---------------------------------------------------------------- forward

@pytest.fixture(scope="module")
def tiny_i3d():
    net = nets.build_network("flow_i3d", 16, 64)
    return net, glorot_weights(net.parameter_shapes(), 42)


def test_forward_probabilities(tiny_i3d):
    net, w = tiny_i3d
    x = np.random.default_rng(0).uniform(-1, 1, net.input_shape).astype(np.float32)
    p = nets.forward(net, w, x)
    assert p.shape == (4,)
    assert abs(float(p.astype(np.float64).sum()) - 1) < 1e-6
    assert p.tobytes() == nets.forward(net, glorot_weights(net.parameter_shapes(), 42), x).tobytes()


def test_forward_zero_weights_uniform():
    net = nets.build_network("cavgg16-3", size=32)
    shapes = net.parameter_shapes()
    w = {k: np.zeros(v, np.float32) if k.endswith("weight") else np.full(v, 0.7, np.float32)
         for k, v in shapes.items()}
    x = np.random.default_rng(3).standard_normal(net.input_shape).astype(np.float32)
    np.testing.assert_allclose(nets.forward(net, w, x), 0.25, atol=1e-7)


def test_glorot_biases_zero_and_bounded():
    net = nets.build_network("cavgg16-3", size=32)
    store = glorot_weights(net.parameter_shapes(), 42)
    for name, arr in store.items():
        if name.endswith(".bias"):
            assert not arr.any()
        else:
            fan_out = arr.shape[0] * int(np.prod(arr.shape[2:]))
            fan_in = int(np.prod(arr.shape[1:]))
            bound = np.sqrt(6 / (fan_in + fan_out))
            assert np.abs(arr).max() <= bound


def test_missing_weight_names_layer(tiny_i3d):
    net, w = tiny_i3d
    broken = dict(w)
    del broken["mixed_4c.b2b.weight"]
    with pytest.raises(ShapeError, match="mixed_4c.*missing tensor"):
        nets.forward(net, broken, np.zeros(net.input_shape, np.float32))


def test_misshapen_weight_names_layer(tiny_i3d):
    net, w = tiny_i3d
    broken = dict(w)
    broken["logits.weight"] = np.zeros((5, 1024, 1, 1, 1), np.float32)
    with pytest.raises(ShapeError, match="'logits'"):
        nets.validate_weights(net, broken)


def test_wrong_input_shape(tiny_i3d):
    net, w = tiny_i3d
    with pytest.raises(ShapeError, match="input shape"):
        nets.forward(net, w, np.zeros((3,) + net.input_shape[1:], np.float32))
