"""End-to-end gradient verification of the full two-stream model at small size."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import finite_diff_check
from .model import ModelConfig, TwoStreamModel
from .trainer import cross_entropy

# 5-node subgraphs: head (nose, eyes, ears) and shoulders + left/right arm chain
GRADCHECK_HEAD = (0, 1, 2, 3, 4)
GRADCHECK_BODY = (5, 6, 7, 8, 9)


@dataclass(frozen=True)
class GradcheckResult:
    max_relative_error: float
    worst: dict
    num_parameters: int
    seconds: float


def gradcheck_config(seed: int = 7, cell: str = "slstm", variant: str = "fused+attention"
                     ) -> ModelConfig:
    return ModelConfig(num_frames=12, hidden=8, feature_dim=8, cell_hidden=8, window=4,
                       seed=seed, cell=cell, variant=variant,
                       head_joints=GRADCHECK_HEAD, body_joints=GRADCHECK_BODY)


def run_gradcheck(seed: int = 7, eps: float = 1e-5, cell: str = "slstm",
                  variant: str = "fused+attention", batch: int = 2) -> GradcheckResult:
    """Finite-difference check of the cross-entropy gradient w.r.t. every parameter.

    Biases, fusion weights and attention offsets are drawn at random too, so no
    ReLU sits exactly on its kink (zero-initialised biases feeding dead units
    would).  Inputs are standard normal clipped to [-3, 3].
    """
    cfg = gradcheck_config(seed, cell, variant)
    model = TwoStreamModel(cfg)
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if p.ndim == 1 or name == "attention.bias":
            p.data[...] = rng.uniform(-0.5, 0.5, size=p.shape)
    t = cfg.num_frames
    head = np.clip(rng.normal(size=(batch, t, len(GRADCHECK_HEAD), 2)), -3, 3)
    body = np.clip(rng.normal(size=(batch, t, len(GRADCHECK_BODY), 2)), -3, 3)
    labels = np.arange(batch) % 2
    params = list(model.params.values())
    start = time.perf_counter()
    err, worst = finite_diff_check(lambda ps: cross_entropy(model.forward(head, body), labels),
                                   params, eps, return_details=True)
    return GradcheckResult(err, worst, model.param_count(), time.perf_counter() - start)
