import numpy as np
import pytest

from axgcn.autodiff import Tensor, finite_diff_check
from axgcn.errors import ConfigurationError, DimensionError
from axgcn.gcn import (
    GcnLayerParams, StreamEncoderParams, encoder_param_count, gcn_layer, node_aggregation_oracle,
    residual_group, stream_encode,
)
from axgcn.graph import JointGraph, build_part_graph, distance_partition, multiscale_partition
from axgcn.model import ModelConfig, TwoStreamModel
from axgcn.skeleton import DEFAULT_PARTS, UPPER_BODY


def layer(rng, k, c_in, c_out, bias=True, grad=False):
    w = Tensor(rng.normal(size=(k, c_in, c_out)), requires_grad=grad)
    b = Tensor(rng.normal(size=c_out) if bias else np.zeros(c_out), requires_grad=grad)
    return GcnLayerParams(w, b)


def random_tree(rng, n):
    return JointGraph(n, tuple((int(rng.integers(0, i)), i) for i in range(1, n)))


def encoder(rng, k, hidden, feat, scale=0.3, grad=False):
    def t(*shape):
        return Tensor(rng.uniform(-scale, scale, shape), requires_grad=grad)
    blocks = [GcnLayerParams(t(k, hidden, hidden), t(hidden)) for _ in range(9)]
    return StreamEncoderParams(t(2, hidden), t(hidden), blocks, t(hidden, feat), t(feat))


def test_single_node_layer():
    g = JointGraph(1, ())
    pg = multiscale_partition(g, 1)
    assert pg.masks[0, 0, 0] == 1.0
    rng = np.random.default_rng(0)
    p = layer(rng, 1, 3, 4, bias=False)
    x = rng.normal(size=(5, 1, 3))
    assert np.allclose(gcn_layer(Tensor(x), pg, p).data, np.maximum(x @ p.weight.data[0], 0), rtol=0, atol=1e-14)


def test_zero_weights_zero_output():
    g = build_part_graph(DEFAULT_PARTS[UPPER_BODY])
    pg = multiscale_partition(g, 3)
    p = GcnLayerParams(Tensor(np.zeros((3, 2, 4))), Tensor(np.zeros(4)))
    out = gcn_layer(Tensor(np.random.default_rng(1).normal(size=(6, 8, 2))), pg, p)
    assert np.array_equal(out.data, np.zeros((6, 8, 4)))


def test_layer_matches_node_oracle_on_random_tree():
    rng = np.random.default_rng(2)
    g = random_tree(rng, 4)
    p = layer(rng, 2, 3, 5)
    x = rng.normal(size=(7, 4, 3))
    ours = gcn_layer(Tensor(x), distance_partition(g), p).data
    ref = node_aggregation_oracle(x, g, p.weight.data, p.bias.data, activation=True)
    assert np.max(np.abs(ours - ref)) <= 1e-10


def test_star_graph_hand_sum():
    # K_{1,3}: center 0, leaves 1..3, uniform features
    g = JointGraph(4, ((0, 1), (0, 2), (0, 3)))
    rng = np.random.default_rng(3)
    w = rng.normal(size=(2, 2, 3))
    xv = rng.normal(size=2)
    x = np.broadcast_to(xv, (1, 4, 2)).copy()
    y = node_aggregation_oracle(x, g, w)
    center = xv @ w[0] + 3 * (xv @ w[1]) / np.sqrt(3 * 1)
    leaf = xv @ w[0] + (xv @ w[1]) / np.sqrt(1 * 3)
    assert np.allclose(y[0, 0], center, atol=1e-12)
    assert np.allclose(y[0, 1:], leaf, atol=1e-12)
    ours = gcn_layer(Tensor(x), distance_partition(g), GcnLayerParams(Tensor(w), Tensor(np.zeros(3))),
                     activation=False).data
    assert np.max(np.abs(ours - y)) <= 1e-12


def test_oracle_single_node():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(2, 3, 2))
    x = rng.normal(size=(2, 1, 3))
    assert np.allclose(node_aggregation_oracle(x, JointGraph(1, ()), w), x @ w[0], atol=1e-15)


def test_layer_shape_errors():
    pg = multiscale_partition(JointGraph(2, ((0, 1),)), 2)
    rng = np.random.default_rng(5)
    with pytest.raises(DimensionError):
        gcn_layer(Tensor(np.ones((3, 3, 2))), pg, layer(rng, 2, 2, 2))
    with pytest.raises(DimensionError):
        gcn_layer(Tensor(np.ones((3, 2, 2))), pg, layer(rng, 3, 2, 2))


def test_zero_weight_group_is_identity():
    pg = multiscale_partition(build_part_graph(DEFAULT_PARTS[UPPER_BODY]), 3)
    zero = [GcnLayerParams(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros(4))) for _ in range(3)]
    x = np.random.default_rng(6).normal(size=(5, 8, 4))
    assert np.array_equal(residual_group(Tensor(x), pg, zero).data, x)


def test_bias_only_group_trace():
    pg = multiscale_partition(build_part_graph(DEFAULT_PARTS[UPPER_BODY]), 3)
    biases = [np.array([0.5, -1.0, 2.0]), np.array([-0.3, 0.4, 1.0]), np.array([1.5, -2.0, 0.25])]
    blocks = [GcnLayerParams(Tensor(np.zeros((3, 3, 3))), Tensor(b)) for b in biases]
    x = np.random.default_rng(7).normal(size=(4, 8, 3))
    out = residual_group(Tensor(x), pg, blocks).data
    assert np.array_equal(out, x + np.maximum(biases[-1], 0))


def test_residual_channel_change_rejected():
    pg = multiscale_partition(JointGraph(2, ((0, 1),)), 1)
    rng = np.random.default_rng(8)
    with pytest.raises(ConfigurationError):
        residual_group(Tensor(np.ones((1, 2, 3))), pg, [layer(rng, 1, 3, 4)])


def test_parameter_count_oracle():
    for strategy, k in [("distance", 2), ("multiscale", 3)]:
        cfg = ModelConfig(hidden=6, feature_dim=10, cell_hidden=4, body_strategy=strategy, scales=k,
                          variant="body-only")
        model = TwoStreamModel(cfg)
        enc = sum(v.size for n, v in model.params.items() if n.startswith("body."))
        expected = 9 * k * 6 * 6 + 9 * 6 + (2 * 6 + 6) + (6 * 10 + 10)
        assert enc == expected == encoder_param_count(k, 6, 10)


def test_stream_encode_shape_default_feature_dim():
    rng = np.random.default_rng(9)
    pg = multiscale_partition(build_part_graph(DEFAULT_PARTS[UPPER_BODY]), 3)
    out = stream_encode(Tensor(rng.normal(size=(12, 8, 2))), pg, encoder(rng, 3, 8, 256))
    assert out.shape == (12, 256)


def test_stream_encode_frame_permutation_equivariant():
    rng = np.random.default_rng(10)
    pg = distance_partition(build_part_graph(range(5)))
    sep = encoder(rng, 2, 6, 5)
    x = rng.normal(size=(9, 5, 2))
    perm = rng.permutation(9)
    a = stream_encode(Tensor(x), pg, sep).data
    b = stream_encode(Tensor(x[perm]), pg, sep).data
    assert np.array_equal(a[perm], b)


def test_stream_encode_gradient():
    rng = np.random.default_rng(11)
    pg = multiscale_partition(build_part_graph(DEFAULT_PARTS[UPPER_BODY]), 2)
    sep = encoder(rng, 2, 4, 3, scale=0.6, grad=True)
    x = Tensor(np.clip(rng.normal(size=(3, 8, 2)), -3, 3))
    params = [t for _, t in sep.tensors()]
    assert finite_diff_check(lambda _: stream_encode(x, pg, sep).mean(), params, 1e-5) <= 1e-4


def test_stream_encode_node_mismatch():
    rng = np.random.default_rng(12)
    pg = distance_partition(build_part_graph(range(5)))
    with pytest.raises(DimensionError):
        stream_encode(Tensor(np.ones((3, 4, 2))), pg, encoder(rng, 2, 4, 3))
