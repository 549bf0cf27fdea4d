"""Two-stream GCN + (attention) recurrent classifier assembly."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .axlstm import CELLS, FORGET_MODES, AttentionParams, CellParams, axlstm_forward
from .errors import ParameterError
from .fusion import FusionParams, fuse, fusion_weights
from .gcn import NUM_BLOCKS, GcnLayerParams, StreamEncoderParams, stream_encode
from .graph import PartitionedGraph, build_part_graph, partition
from .skeleton import DEFAULT_PARTS, HEAD, UPPER_BODY

VARIANTS = ("head-only", "body-only", "fused", "fused+attention")
STRATEGIES = ("distance", "multiscale", "exact")


@dataclass
class ModelConfig:
    num_frames: int = 64
    hidden: int = 64
    feature_dim: int = 256
    cell_hidden: int = 64
    scales: int = 3
    lam: float = 1.0
    window: int = 16
    cell: str = "slstm"
    forget_mode: str = "sigmoid"
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    variant: str = "fused+attention"
    head_strategy: str = "distance"
    body_strategy: str = "multiscale"
    num_blocks: int = NUM_BLOCKS
    threshold: float = 0.3
    head_joints: tuple[int, ...] = DEFAULT_PARTS[HEAD]
    body_joints: tuple[int, ...] = DEFAULT_PARTS[UPPER_BODY]

    def __post_init__(self):
        self.head_joints = tuple(int(j) for j in self.head_joints)
        self.body_joints = tuple(int(j) for j in self.body_joints)
        self.validate()

    def validate(self) -> None:
        for name in ("num_frames", "hidden", "feature_dim", "cell_hidden", "scales", "window",
                     "epochs", "batch_size", "num_blocks"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        for name in ("lam", "lr"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")
        if self.num_blocks % 3:
            raise ParameterError("num_blocks must be a multiple of 3")
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.cell not in CELLS:
            raise ParameterError(f"cell must be one of {CELLS}, got {self.cell!r}")
        if self.forget_mode not in FORGET_MODES:
            raise ParameterError(f"forget_mode must be one of {FORGET_MODES}")
        for s in (self.head_strategy, self.body_strategy):
            if s not in STRATEGIES:
                raise ParameterError(f"partition strategy must be one of {STRATEGIES}, got {s!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ParameterError("threshold must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["head_joints"] = list(self.head_joints)
        d["body_joints"] = list(self.body_joints)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @property
    def streams(self) -> tuple[str, ...]:
        if self.variant == "head-only":
            return ("head",)
        if self.variant == "body-only":
            return ("body",)
        return ("head", "body")

    @property
    def uses_attention(self) -> bool:
        return self.variant == "fused+attention"


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def build_partitions(cfg: ModelConfig) -> dict[str, PartitionedGraph]:
    head = partition(build_part_graph(cfg.head_joints), cfg.head_strategy, cfg.scales)
    body = partition(build_part_graph(cfg.body_joints), cfg.body_strategy, cfg.scales)
    return {"head": head, "body": body}


class TwoStreamModel:
    """Parameters and forward pass for one configuration.

    ``params`` is an ordered name -> Tensor mapping; its order is the
    serialization order and the optimizer's update order.
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None,
                 partitions: dict[str, PartitionedGraph] | None = None):
        self.config = cfg
        self.partitions = partitions if partitions is not None else build_partitions(cfg)
        if params is None:
            params = self._init_params(np.random.default_rng(cfg.seed))
        self.params = params
        for name, t in self.params.items():
            t.name = name
            t.requires_grad = True

    # -- construction ------------------------------------------------------------
    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        cfg = self.config
        shapes: dict[str, tuple[int, ...]] = {}
        h, f, n = cfg.hidden, cfg.feature_dim, cfg.cell_hidden
        for s in cfg.streams:
            k = self.partitions[s].num_partitions
            shapes[f"{s}.in_weight"] = (2, h)
            shapes[f"{s}.in_bias"] = (h,)
            for b in range(cfg.num_blocks):
                shapes[f"{s}.block{b}.weight"] = (k, h, h)
                shapes[f"{s}.block{b}.bias"] = (h,)
            shapes[f"{s}.out_weight"] = (h, f)
            shapes[f"{s}.out_bias"] = (f,)
        if len(cfg.streams) == 2:
            shapes["fusion.omega"] = (2,)
        shapes["cell.w_x"] = (f, 4 * n)
        shapes["cell.w_h"] = (n, 4 * n)
        shapes["cell.bias"] = (4 * n,)
        if cfg.uses_attention:
            shapes["attention.weight"] = (cfg.window, n)
            shapes["attention.bias"] = (cfg.window, n)
            shapes["attention.query"] = (f + n, n)
        shapes["head_cls.weight"] = (n, 2)
        shapes["head_cls.bias"] = (2,)
        return shapes

    def _init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        params = {}
        for name, shape in self.param_shapes().items():
            if name == "fusion.omega" or len(shape) == 1 or name == "attention.bias":
                data = np.zeros(shape)
            elif len(shape) == 3:
                data = glorot(rng, shape[1], shape[2], shape)
            elif name == "cell.w_x" or name == "cell.w_h":
                data = glorot(rng, shape[0], shape[1] // 4, shape)
            else:
                data = glorot(rng, shape[0], shape[1], shape)
            params[name] = Tensor(data, requires_grad=True, name=name)
        return params

    def param_count(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    # -- views ---------------------------------------------------------------------
    def encoder(self, stream: str) -> StreamEncoderParams:
        p = self.params
        blocks = [GcnLayerParams(p[f"{stream}.block{b}.weight"], p[f"{stream}.block{b}.bias"])
                  for b in range(self.config.num_blocks)]
        return StreamEncoderParams(p[f"{stream}.in_weight"], p[f"{stream}.in_bias"], blocks,
                                   p[f"{stream}.out_weight"], p[f"{stream}.out_bias"])

    def cell_params(self) -> CellParams:
        p = self.params
        return CellParams(p["cell.w_x"], p["cell.w_h"], p["cell.bias"], self.config.forget_mode)

    def attention_params(self) -> AttentionParams | None:
        if not self.config.uses_attention:
            return None
        p = self.params
        return AttentionParams(p["attention.weight"], p["attention.bias"], p["attention.query"])

    def fusion_params(self) -> FusionParams:
        return FusionParams(self.params["fusion.omega"], self.config.lam)

    # -- forward -------------------------------------------------------------------
    def features(self, head: np.ndarray, body: np.ndarray) -> Tensor:
        """Per-frame (B, T, F) features after stream encoding and fusion."""
        inputs = {"head": head, "body": body}
        feats = [stream_encode(Tensor(inputs[s]), self.partitions[s], self.encoder(s))
                 for s in self.config.streams]
        if len(feats) == 1:
            return feats[0]
        return fuse(feats, fusion_weights(self.fusion_params()))

    def embed(self, head: np.ndarray, body: np.ndarray) -> Tensor:
        feats = self.features(head, body)
        return axlstm_forward(feats, self.config.cell, self.cell_params(), self.attention_params())

    def forward(self, head: np.ndarray, body: np.ndarray) -> Tensor:
        """Class logits (B, 2) for batched stream inputs (B, T, N_part, 2)."""
        emb = self.embed(head, body)
        return classify(emb, self.params["head_cls.weight"], self.params["head_cls.bias"])


def classify(embedding: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map from (B, n) embeddings to (B, 2) logits."""
    embedding = ad.as_tensor(embedding)
    if embedding.ndim == 1:
        embedding = embedding.reshape(1, embedding.shape[0])
    logits = ad.matmul(embedding, weight)
    return logits + ad.broadcast_to(bias, logits.shape)


def probabilities(logits: Tensor) -> np.ndarray:
    return ad.softmax(logits, axis=-1).data
