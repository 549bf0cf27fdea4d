"""Adaptive softmax-weighted fusion of per-frame stream features."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, ParameterError


@dataclass
class FusionParams:
    omega: Tensor = field(default_factory=lambda: Tensor(np.zeros(2), requires_grad=True, name="fusion.omega"))
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ParameterError(f"reinforcement factor must be positive, got {self.lam}")


def fusion_weights(fp: FusionParams) -> Tensor:
    """``alpha_m = softmax(lam * omega)_m``; max-subtracted inside ``softmax``."""
    if not fp.lam > 0:
        raise ParameterError(f"reinforcement factor must be positive, got {fp.lam}")
    if not np.all(np.isfinite(fp.omega.data)):
        raise ParameterError("fusion weights omega must be finite")
    return ad.softmax(ad.mul(fp.omega, fp.lam), axis=0)


def fuse(features: Sequence[Tensor], alpha: Tensor) -> Tensor:
    """Convex combination ``sum_m alpha_m * features[m]``."""
    if len(features) != alpha.shape[0]:
        raise DimensionError(f"{len(features)} streams for {alpha.shape[0]} fusion weights")
    shapes = {f.shape for f in features}
    if len(shapes) != 1:
        raise DimensionError(f"stream features differ in shape: {sorted(shapes)}")
    out = None
    for m, feat in enumerate(features):
        term = ad.mul(alpha[m], feat)
        out = term if out is None else out + term
    return out
