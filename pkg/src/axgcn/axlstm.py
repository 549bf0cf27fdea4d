"""Recurrent temporal modelling: LSTM and sLSTM cells plus windowed attention pooling.

Gate weights are stored stacked along the output axis in the order
input, forget, output, candidate: ``w_x`` is (D, 4n), ``w_h`` is (n, 4n) and
``bias`` is (4n,).  All step functions operate on a batch of row vectors.

The sLSTM keeps its cell and normalizer states divided by ``exp(m)`` where
``m`` is a running log-domain maximum of the gate magnitudes.  Because the
output only depends on ``C / N``, the rescaling is invisible in ``H`` while
keeping the exponential gates finite.  ``m`` is carried outside the tape: the
output does not depend on it, so treating it as a constant leaves all
gradients unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError, NumericalError, ParameterError

CELLS = ("lstm", "slstm")
FORGET_MODES = ("sigmoid", "exp")


@dataclass
class CellParams:
    w_x: Tensor
    w_h: Tensor
    bias: Tensor
    forget_mode: str = "sigmoid"

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    def __post_init__(self):
        n = self.w_h.shape[0]
        if self.w_h.shape != (n, 4 * n) or self.w_x.shape[1] != 4 * n or self.bias.shape != (4 * n,):
            raise DimensionError(f"inconsistent cell shapes w_x={self.w_x.shape}, "
                                 f"w_h={self.w_h.shape}, bias={self.bias.shape}")
        if self.forget_mode not in FORGET_MODES:
            raise ParameterError(f"forget mode must be one of {FORGET_MODES}")

    @classmethod
    def from_gates(cls, w_x: dict, w_h: dict, b: dict, forget_mode: str = "sigmoid") -> "CellParams":
        """Build from per-gate arrays keyed ``i``, ``f``, ``o``, ``c``."""
        order = ("i", "f", "o", "c")
        return cls(Tensor(np.concatenate([np.asarray(w_x[g], float) for g in order], axis=1)),
                   Tensor(np.concatenate([np.asarray(w_h[g], float) for g in order], axis=1)),
                   Tensor(np.concatenate([np.asarray(b[g], float) for g in order])),
                   forget_mode)


@dataclass
class SLstmState:
    c: Tensor
    n: Tensor
    h: Tensor
    m: np.ndarray  # stabilizer, log domain, not differentiated

    @classmethod
    def zeros(cls, batch: int, hidden: int) -> "SLstmState":
        z = np.zeros((batch, hidden))
        return cls(Tensor(z), Tensor(z), Tensor(z), z.copy())

    def naive_c(self) -> np.ndarray:
        return self.c.data * np.exp(self.m)

    def naive_n(self) -> np.ndarray:
        return self.n.data * np.exp(self.m)


def _gates(x: Tensor, h: Tensor, p: CellParams, x_proj: Tensor | None = None) -> Tensor:
    # x_proj: precomputed x @ w_x + bias
    if x_proj is None:
        x_proj = ad.matmul(x, p.w_x) + ad.broadcast_to(p.bias, (x.shape[0], p.bias.shape[0]))
    return x_proj + ad.matmul(h, p.w_h)


def _split(z: Tensor, n: int) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    return z[:, 0:n], z[:, n:2 * n], z[:, 2 * n:3 * n], z[:, 3 * n:4 * n]


def lstm_step(x: Tensor, h: Tensor, c: Tensor, p: CellParams,
              x_proj: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Standard LSTM recurrence; returns ``(h', c')``."""
    n = p.hidden
    zi, zf, zo, zc = _split(_gates(x, h, p, x_proj), n)
    i, f, o = ad.sigmoid(zi), ad.sigmoid(zf), ad.sigmoid(zo)
    c_new = f * c + i * ad.tanh(zc)
    return o * ad.tanh(c_new), c_new


def slstm_step(x: Tensor, s: SLstmState, p: CellParams, x_proj: Tensor | None = None,
               step: int = 0) -> SLstmState:
    """One stabilized sLSTM step with exponential input gate and normalizer."""
    n = p.hidden
    z = _gates(x, s.h, p, x_proj)
    zi, zf, zo, zc = _split(z, n)
    log_f = ad.log_sigmoid(zf) if p.forget_mode == "sigmoid" else zf
    fresh = s.n.data == 0  # no history yet: C and N are zero, any m works
    m_new = np.where(fresh, zi.data, np.maximum(log_f.data + s.m, zi.data))
    i_s = ad.exp(zi - Tensor(m_new))
    # fresh entries multiply zero state; a zero forget weight avoids inf * 0
    f_s = ad.exp(log_f + Tensor(np.where(fresh, -np.inf, s.m - m_new)))
    u = ad.tanh(zc)
    o = ad.sigmoid(zo)
    c_new = f_s * s.c + i_s * u
    n_new = f_s * s.n + i_s
    h_new = o * ad.tanh(c_new / n_new)
    if not (np.all(np.isfinite(h_new.data)) and np.all(np.isfinite(c_new.data))
            and np.all(np.isfinite(n_new.data))):
        raise NumericalError(f"non-finite sLSTM state at step {step}; "
                             f"max |pre-activation| = {float(np.abs(z.data).max()):.4g}")
    return SLstmState(c_new, n_new, h_new, m_new)


def slstm_naive_rollout(xs: np.ndarray, p: CellParams) -> dict[str, np.ndarray]:
    """Unstabilized sLSTM recurrence in plain numpy, used as a reference.

    ``xs`` has shape (T, B, D).  Returns stacked ``h``, ``c``, ``n`` per step.
    """
    n = p.hidden
    wx, wh, b = p.w_x.data, p.w_h.data, p.bias.data
    t_len, batch, _ = xs.shape
    h = np.zeros((batch, n))
    c = np.zeros((batch, n))
    nn = np.zeros((batch, n))
    hs, cs, ns = [], [], []
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for t in range(t_len):
            z = xs[t] @ wx + b + h @ wh
            zi, zf, zo, zc = z[:, :n], z[:, n:2 * n], z[:, 2 * n:3 * n], z[:, 3 * n:]
            i = np.exp(zi)
            f = 1.0 / (1.0 + np.exp(-zf)) if p.forget_mode == "sigmoid" else np.exp(zf)
            o = 1.0 / (1.0 + np.exp(-zo))
            c = f * c + i * np.tanh(zc)
            nn = f * nn + i
            h = o * np.tanh(c / nn)
            hs.append(h)
            cs.append(c)
            ns.append(nn)
    return {"h": np.stack(hs), "c": np.stack(cs), "n": np.stack(ns)}


@dataclass
class AttentionParams:
    weight: Tensor  # (w, n)
    bias: Tensor  # (w, n)
    query: Tensor  # (D + n, n): projects [x_t, h_{t-1}] to a hidden-sized row

    @property
    def window(self) -> int:
        return self.weight.shape[0]

    def __post_init__(self):
        if self.weight.shape != self.bias.shape:
            raise DimensionError(f"attention weight {self.weight.shape} vs bias {self.bias.shape}")
        if self.query.shape[1] != self.weight.shape[1]:
            raise DimensionError("attention query projection does not match hidden size")


def attention_pool(h_window: Tensor, ap: AttentionParams, x_t: Tensor, h_prev: Tensor
                   ) -> tuple[Tensor, Tensor]:
    """Window attention over hidden states.

    ``h_window`` is (B, w, n); ``x_t`` (B, D) and ``h_prev`` (B, n).  Scores are
    ``e_i = mean_j(W_ij * q_j + b_ij)`` with ``q = [x_t, h_prev] @ query``,
    weights ``alpha = softmax(e)`` and the result ``relu(sum_i alpha_i h_i)``.
    Returns ``(l, alpha)`` with shapes (B, n) and (B, w).
    """
    batch, w, n = h_window.shape
    if w != ap.window:
        raise DimensionError(f"window holds {w} states, attention expects {ap.window}")
    q = ad.matmul(ad.concat([x_t, h_prev], axis=1), ap.query)  # (B, n)
    q = ad.broadcast_to(q.reshape(batch, 1, n), (batch, w, n))
    scores = ad.broadcast_to(ap.weight, (batch, w, n)) * q + ad.broadcast_to(ap.bias, (batch, w, n))
    e = scores.mean(axis=2)  # (B, w)
    alpha = ad.softmax(e, axis=1)
    weighted = ad.broadcast_to(alpha.reshape(batch, w, 1), (batch, w, n)) * h_window
    return ad.relu(weighted.sum(axis=1)), alpha


def run_cell(features: Tensor, cell: str, p: CellParams) -> list[Tensor]:
    """Run the recurrence over ``features`` (B, T, D); returns the T hidden states."""
    if cell not in CELLS:
        raise ParameterError(f"cell must be one of {CELLS}, got {cell!r}")
    batch, t_len, d = features.shape
    if d != p.input_dim:
        raise DimensionError(f"features have {d} channels, cell expects {p.input_dim}")
    n = p.hidden
    x_proj = ad.matmul(features.reshape(batch * t_len, d), p.w_x)
    x_proj = (x_proj + ad.broadcast_to(p.bias, (batch * t_len, 4 * n))).reshape(batch, t_len, 4 * n)
    hs = []
    if cell == "lstm":
        h = Tensor(np.zeros((batch, n)))
        c = Tensor(np.zeros((batch, n)))
        for t in range(t_len):
            h, c = lstm_step(None, h, c, p, x_proj[:, t, :])
            hs.append(h)
    else:
        s = SLstmState.zeros(batch, n)
        for t in range(t_len):
            s = slstm_step(None, s, p, x_proj[:, t, :], step=t)
            hs.append(s.h)
    return hs


def axlstm_forward(features: Tensor, cell: str, params: CellParams,
                   attention: AttentionParams | None = None) -> Tensor:
    """Sequence embedding (B, n).

    With ``attention`` the final window of hidden states is pooled (shorter
    sequences are left-padded with zero states); without it the last hidden
    state is returned.
    """
    features = ad.as_tensor(features)
    if features.ndim == 2:
        features = features.reshape(1, *features.shape)
    batch, t_len, _ = features.shape
    if t_len < 1:
        raise DimensionError("sequence must have at least one frame")
    hs = run_cell(features, cell, params)
    if attention is None:
        return hs[-1]
    n = params.hidden
    w = attention.window
    zero = Tensor(np.zeros((batch, n)))
    window = hs[-w:]
    if len(window) < w:
        window = [zero] * (w - len(window)) + window
    h_window = ad.stack(window, axis=1)
    h_prev = hs[-2] if t_len >= 2 else zero
    x_last = features[:, t_len - 1, :]
    pooled, _ = attention_pool(h_window, attention, x_last, h_prev)
    return pooled
