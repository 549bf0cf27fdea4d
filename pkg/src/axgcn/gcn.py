"""Graph-convolution layers and the per-stream residual GCN encoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError
from .graph import JointGraph, PartitionedGraph, shortest_paths

NUM_BLOCKS = 9
GROUP_SIZE = 3


@dataclass
class GcnLayerParams:
    weight: Tensor  # (K, C_in, C_out), one matrix per partition
    bias: Tensor  # (C_out,)

    @property
    def num_partitions(self) -> int:
        return self.weight.shape[0]


def _stacked_masks(pg: PartitionedGraph) -> np.ndarray:
    # (N, K*N) with block k holding A_k
    k, n, _ = pg.masks.shape
    return np.ascontiguousarray(pg.masks.transpose(1, 0, 2).reshape(n, k * n))


def gcn_layer(x: Tensor, pg: PartitionedGraph, p: GcnLayerParams, activation: bool = True) -> Tensor:
    """``relu(sum_k A_k X W_k + b)`` applied independently to every frame.

    ``x`` has shape ``(..., N, C_in)``; all leading axes are treated as frames.
    """
    k, c_in, c_out = p.weight.shape
    n = pg.num_nodes
    if x.ndim < 2 or x.shape[-2] != n or x.shape[-1] != c_in:
        raise DimensionError(f"gcn_layer: input {x.shape} does not match N={n}, C_in={c_in}")
    if k != pg.num_partitions:
        raise DimensionError(f"gcn_layer: {k} weight matrices for {pg.num_partitions} partitions")
    lead = x.shape[:-2]
    m = int(np.prod(lead)) if lead else 1

    w_cat = p.weight.transpose(1, 0, 2).reshape(c_in, k * c_out)
    xw = ad.matmul(x.reshape(m * n, c_in), w_cat)  # (M*N, K*C_out)
    xw = xw.reshape(m, n, k, c_out).transpose(2, 1, 0, 3).reshape(k * n, m * c_out)
    y = ad.matmul(Tensor(_stacked_masks(pg)), xw)  # (N, M*C_out)
    y = y.reshape(n, m, c_out).transpose(1, 0, 2)
    y = y + ad.broadcast_to(p.bias, (m, n, c_out))
    if activation:
        y = ad.relu(y)
    return y.reshape(tuple(lead) + (n, c_out))


def gcn_block(x: Tensor, pg: PartitionedGraph, p: GcnLayerParams) -> Tensor:
    return gcn_layer(x, pg, p)


def residual_group(x: Tensor, pg: PartitionedGraph, blocks: list[GcnLayerParams]) -> Tensor:
    """Run a chain of blocks and add the group input to the result."""
    c = x.shape[-1]
    h = x
    for p in blocks:
        h = gcn_block(h, pg, p)
    if h.shape[-1] != c:
        raise ConfigurationError(f"residual group changes channels {c} -> {h.shape[-1]}")
    return h + x


def node_aggregation_oracle(x: np.ndarray, g: JointGraph, weights: np.ndarray,
                            bias: np.ndarray | None = None, activation: bool = False) -> np.ndarray:
    """Literal per-node neighbourhood summation under distance labelling.

    For every root i and neighbour j with hop distance <= 1 the label is
    ``d(i, j) + 1`` and the contribution ``X_j W_label / Z`` uses
    ``Z = sqrt(|S_i| * |S_j|)``, where ``S_i`` is the subset of N(i) sharing
    j's label and ``S_j`` the subset of N(j) sharing i's label.  This is the
    node-wise reading of the symmetrically normalized matrix form.

    ``x`` has shape (T, N, C_in) and ``weights`` (2, C_in, C_out).
    """
    x = np.asarray(x, dtype=np.float64)
    dist = shortest_paths(g)
    n = g.num_nodes
    if x.shape[1] != n:
        raise DimensionError(f"oracle: input has {x.shape[1]} nodes, graph has {n}")
    t_len, _, _ = x.shape
    c_out = weights.shape[2]

    def label(i, j):
        return int(dist[i, j]) + 1

    def subset_size(i, lab):
        return sum(1 for u in range(n) if dist[i, u] <= 1 and label(i, u) == lab)

    y = np.zeros((t_len, n, c_out))
    for t in range(t_len):
        for i in range(n):
            acc = np.zeros(c_out)
            for j in range(n):
                if dist[i, j] > 1:
                    continue
                lab = label(i, j)
                z = np.sqrt(subset_size(i, lab) * subset_size(j, label(j, i)))
                acc += x[t, j] @ weights[lab - 1] / z
            if bias is not None:
                acc = acc + bias
            y[t, i] = np.maximum(acc, 0.0) if activation else acc
    return y


@dataclass
class StreamEncoderParams:
    in_weight: Tensor  # (2, H)
    in_bias: Tensor  # (H,)
    blocks: list[GcnLayerParams]
    out_weight: Tensor  # (H, F)
    out_bias: Tensor  # (F,)

    def __post_init__(self):
        if len(self.blocks) % GROUP_SIZE:
            raise ConfigurationError(f"block count {len(self.blocks)} is not a multiple of {GROUP_SIZE}")

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = [("in_weight", self.in_weight), ("in_bias", self.in_bias)]
        for b, blk in enumerate(self.blocks):
            out += [(f"block{b}.weight", blk.weight), (f"block{b}.bias", blk.bias)]
        out += [("out_weight", self.out_weight), ("out_bias", self.out_bias)]
        return out


def stream_encode(coords: Tensor, pg: PartitionedGraph, sep: StreamEncoderParams) -> Tensor:
    """Map per-frame part coordinates ``(..., T, N, 2)`` to features ``(..., T, F)``.

    Input projection, residual groups of GCN blocks, a global residual back to
    the projected input, node mean-pooling and a linear output projection.
    """
    coords = ad.as_tensor(coords)
    if coords.ndim < 3 or coords.shape[-2] != pg.num_nodes:
        raise DimensionError(f"stream_encode: coords {coords.shape} do not match "
                             f"{pg.num_nodes} graph nodes")
    lead = coords.shape[:-2]
    n, c = coords.shape[-2:]
    m = int(np.prod(lead))
    hidden = sep.in_weight.shape[1]

    proj = ad.matmul(coords.reshape(m * n, c), sep.in_weight)
    proj = (proj + ad.broadcast_to(sep.in_bias, (m * n, hidden))).reshape(m, n, hidden)

    h = proj
    for g in range(0, len(sep.blocks), GROUP_SIZE):
        h = residual_group(h, pg, sep.blocks[g:g + GROUP_SIZE])
    h = h + proj

    pooled = h.mean(axis=1)  # (M, H)
    feat = ad.matmul(pooled, sep.out_weight)
    feat = feat + ad.broadcast_to(sep.out_bias, feat.shape)
    return feat.reshape(tuple(lead) + (sep.out_weight.shape[1],))


def encoder_param_count(num_partitions: int, hidden: int, feature_dim: int,
                        in_channels: int = 2, num_blocks: int = NUM_BLOCKS) -> int:
    blocks = num_blocks * (num_partitions * hidden * hidden + hidden)
    return blocks + in_channels * hidden + hidden + hidden * feature_dim + feature_dim
