import numpy as np
import pytest

from axgcn.autodiff import Tensor, finite_diff_check
from axgcn.axlstm import (
    AttentionParams, CellParams, SLstmState, attention_pool, axlstm_forward, lstm_step, run_cell,
    slstm_naive_rollout, slstm_step,
)
from axgcn.errors import DimensionError, NumericalError, ParameterError


def cell(rng, d, n, scale=0.5, mode="sigmoid", grad=False):
    def t(*s):
        return Tensor(rng.uniform(-scale, scale, s), requires_grad=grad)
    return CellParams(t(d, 4 * n), t(n, 4 * n), t(4 * n), mode)


def zero_cell(d, n, mode="sigmoid"):
    return CellParams(Tensor(np.zeros((d, 4 * n))), Tensor(np.zeros((n, 4 * n))),
                      Tensor(np.zeros(4 * n)), mode)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# -- LSTM -------------------------------------------------------------------

def test_lstm_zero_fixed_point():
    p = zero_cell(3, 2)
    h, c = lstm_step(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), p)
    assert np.array_equal(h.data, np.zeros((1, 2))) and np.array_equal(c.data, np.zeros((1, 2)))


def test_lstm_large_input_gate_zero_candidate():
    p = zero_cell(3, 2)
    p.bias.data[:2] = 1e3
    h, c = lstm_step(Tensor(np.ones((1, 3))), Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))), p)
    assert np.array_equal(c.data, np.zeros((1, 2)))


def test_lstm_matches_scalar_recurrence():
    rng = np.random.default_rng(0)
    d, n = 3, 4
    p = cell(rng, d, n, 1.0)
    xs = rng.normal(size=(6, d))
    h, c = Tensor(np.zeros((1, n))), Tensor(np.zeros((1, n)))
    hr, cr = np.zeros(n), np.zeros(n)
    wx, wh, b = p.w_x.data, p.w_h.data, p.bias.data
    for x in xs:
        h, c = lstm_step(Tensor(x[None]), h, c, p)
        new_h = np.zeros(n)
        for k in range(n):  # one unit at a time
            z = [sum(x[j] * wx[j, g * n + k] for j in range(d)) + sum(hr[j] * wh[j, g * n + k] for j in range(n))
                 + b[g * n + k] for g in range(4)]
            i, f, o = sigmoid(z[0]), sigmoid(z[1]), sigmoid(z[2])
            cr[k] = f * cr[k] + i * np.tanh(z[3])
            new_h[k] = o * np.tanh(cr[k])
        hr = new_h
        assert np.max(np.abs(h.data[0] - hr)) <= 1e-12
        assert np.max(np.abs(c.data[0] - cr)) <= 1e-12


# -- sLSTM ------------------------------------------------------------------

def test_slstm_zero_weight_trace():
    s = slstm_step(Tensor(np.ones((1, 3))), SLstmState.zeros(1, 2), zero_cell(3, 2))
    assert np.array_equal(s.naive_c(), np.zeros((1, 2)))
    assert np.array_equal(s.naive_n(), np.ones((1, 2)))
    assert np.array_equal(s.h.data, np.zeros((1, 2)))


def test_slstm_large_candidate_bias():
    p = zero_cell(3, 1)
    p.bias.data[3] = 40.0  # u = tanh(40) == 1 in double precision
    s = slstm_step(Tensor(np.zeros((1, 3))), SLstmState.zeros(1, 1), p)
    assert s.naive_c()[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert s.naive_n()[0, 0] == 1.0
    assert s.h.data[0, 0] == pytest.approx(0.5 * np.tanh(1.0), abs=1e-12)
    assert s.h.data[0, 0] == pytest.approx(0.3808, abs=1e-4)


@pytest.mark.parametrize("mode", ["sigmoid", "exp"])
def test_stabilized_matches_naive(mode):
    rng = np.random.default_rng(1)
    d, n, t_len = 4, 5, 40
    p = cell(rng, d, n, 0.6, mode)
    xs = rng.uniform(-2, 2, (t_len, 8, d))
    ref = slstm_naive_rollout(xs, p)
    s = SLstmState.zeros(8, n)
    for t in range(t_len):
        s = slstm_step(Tensor(xs[t]), s, p)
        ok = np.isfinite(ref["h"][t])
        assert np.all(s.n.data > 0)
        assert np.max(np.abs(s.h.data[ok] - ref["h"][t][ok]), initial=0.0) <= 1e-6


def test_stabilizer_survives_naive_overflow():
    rng = np.random.default_rng(2)
    p = cell(rng, 2, 3, 0.5, "exp")
    p.bias.data[:6] = 400.0  # exp(400)^2 overflows in the naive path
    xs = rng.uniform(-1, 1, (4, 1, 2))
    ref = slstm_naive_rollout(xs, p)
    assert not np.all(np.isfinite(ref["h"]))
    s = SLstmState.zeros(1, 3)
    for t in range(4):
        s = slstm_step(Tensor(xs[t]), s, p)
        assert np.all(np.isfinite(s.h.data))


def test_scaled_state_same_output():
    # C/N is scale free: shifting m by log(k) while scaling C and N by 1/k
    rng = np.random.default_rng(3)
    p = cell(rng, 2, 3, 0.7)
    x = Tensor(rng.normal(size=(1, 2)))
    s = slstm_step(x, SLstmState.zeros(1, 3), p)
    k = 1e3
    scaled = SLstmState(s.c * (1 / k), s.n * (1 / k), s.h, s.m + np.log(k))
    a, b = slstm_step(x, s, p), slstm_step(x, scaled, p)
    assert np.max(np.abs(a.h.data - b.h.data)) <= 1e-12


def test_slstm_nonfinite_reports_step():
    p = zero_cell(1, 1)
    x = Tensor(np.array([[np.nan]]))
    with pytest.raises(NumericalError, match="step 7"):
        slstm_step(x, SLstmState.zeros(1, 1), p, step=7)


def test_slstm_gradient_through_steps():
    rng = np.random.default_rng(4)
    p = cell(rng, 3, 2, 0.5, "exp", grad=True)
    xs = Tensor(np.clip(rng.normal(size=(1, 6, 3)), -3, 3))
    assert finite_diff_check(lambda _: run_cell(xs, "slstm", p)[-1].sum(),
                             [p.w_x, p.w_h, p.bias], 1e-5) <= 1e-4


# -- attention --------------------------------------------------------------

def attention(rng, w, n, d, scale=0.5, grad=False):
    def t(*s):
        return Tensor(rng.uniform(-scale, scale, s), requires_grad=grad)
    return AttentionParams(t(w, n), t(w, n), t(d + n, n))


def test_uniform_scores():
    rng = np.random.default_rng(5)
    w, n, d = 4, 3, 2
    ap = AttentionParams(Tensor(np.zeros((w, n))), Tensor(np.zeros((w, n))), Tensor(rng.normal(size=(d + n, n))))
    h = rng.normal(size=(1, w, n))
    l, alpha = attention_pool(Tensor(h), ap, Tensor(rng.normal(size=(1, d))), Tensor(rng.normal(size=(1, n))))
    assert np.allclose(alpha.data, 0.25, rtol=0, atol=1e-15)
    assert np.allclose(l.data, np.maximum(h.mean(axis=1), 0), rtol=0, atol=1e-15)


def test_score_closed_form():
    # zero query weight: e_i is the row mean of the bias
    n, d = 2, 1
    bias = np.array([[np.log(2.0), np.log(2.0)], [0.0, 0.0]])
    ap = AttentionParams(Tensor(np.ones((2, n))), Tensor(bias), Tensor(np.zeros((d + n, n))))
    _, alpha = attention_pool(Tensor(np.ones((1, 2, n))), ap, Tensor(np.ones((1, d))), Tensor(np.ones((1, n))))
    assert np.allclose(alpha.data[0], [2 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_scores_literal_formula():
    rng = np.random.default_rng(6)
    w, n, d = 3, 4, 2
    ap = attention(rng, w, n, d, 1.0)
    h = rng.uniform(0, 1, (1, w, n))
    x, hp = rng.normal(size=(1, d)), rng.normal(size=(1, n))
    l, alpha = attention_pool(Tensor(h), ap, Tensor(x), Tensor(hp))
    q = np.concatenate([x[0], hp[0]]) @ ap.query.data
    e = (ap.weight.data * q[None, :] + ap.bias.data).mean(axis=1)
    ref_alpha = np.exp(e - e.max()) / np.exp(e - e.max()).sum()
    assert np.allclose(alpha.data[0], ref_alpha, rtol=0, atol=1e-15)
    # nonnegative window: relu is the identity
    assert np.allclose(l.data[0], (ref_alpha[:, None] * h[0]).sum(axis=0), rtol=0, atol=1e-15)
    assert abs(alpha.data.sum() - 1) <= 1e-12 and np.all(alpha.data > 0)


def test_attention_window_mismatch():
    rng = np.random.default_rng(7)
    ap = attention(rng, 3, 2, 1)
    with pytest.raises(DimensionError):
        attention_pool(Tensor(np.ones((1, 4, 2))), ap, Tensor(np.ones((1, 1))), Tensor(np.ones((1, 2))))


# -- full forward -----------------------------------------------------------

def test_forward_single_step_zero_params():
    p = zero_cell(4, 3)
    ap = AttentionParams(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), Tensor(np.zeros((7, 3))))
    for c in ("lstm", "slstm"):
        out = axlstm_forward(Tensor(np.ones((1, 4))), c, p, ap)
        assert np.array_equal(out.data, np.zeros((1, 3)))


def test_window_spanning_sequence():
    rng = np.random.default_rng(8)
    t_len, d, n = 5, 3, 4
    p, ap = cell(rng, d, n), attention(rng, t_len, n, d)
    feats = rng.normal(size=(1, t_len, d))
    hs = run_cell(Tensor(feats), "slstm", p)
    ref, _ = attention_pool(Tensor(np.stack([h.data for h in hs], axis=1)), ap,
                            Tensor(feats[:, -1]), hs[-2])
    assert np.array_equal(axlstm_forward(Tensor(feats), "slstm", p, ap).data, ref.data)


def test_forward_without_attention_returns_last_state():
    rng = np.random.default_rng(9)
    p = cell(rng, 3, 2)
    feats = Tensor(rng.normal(size=(2, 6, 3)))
    assert np.array_equal(axlstm_forward(feats, "lstm", p).data, run_cell(feats, "lstm", p)[-1].data)


def test_forward_rejects_unknown_cell():
    with pytest.raises(ParameterError):
        axlstm_forward(Tensor(np.ones((1, 2, 3))), "gru", zero_cell(3, 2))


def test_forward_gradient_long_sequence():
    rng = np.random.default_rng(10)
    d, n, w = 2, 2, 4
    p = cell(rng, d, n, 0.4, grad=True)
    ap = attention(rng, w, n, d, 0.4, grad=True)
    feats = Tensor(np.clip(rng.normal(size=(1, 64, d)), -3, 3))
    params = [p.w_x, p.w_h, p.bias, ap.weight, ap.bias, ap.query]
    assert finite_diff_check(lambda _: axlstm_forward(feats, "slstm", p, ap).sum(), params, 1e-5) <= 1e-4
