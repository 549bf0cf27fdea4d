import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from axgcn.errors import FormatError, ImputationError, ParameterError
from axgcn.skeleton import (
    DEFAULT_PARTS, HEAD, UPPER_BODY, SkeletonSequence, format_session, impute_low_confidence,
    load_directory, normalize_channels, normalize_part, parse_session, preprocess, read_session,
    sample_frames, sample_indices, split_streams, validate_parts, write_session,
)


def make_seq(t=6, seed=0, label="ASD", fps=17.0):
    rng = np.random.default_rng(seed)
    frames = np.concatenate([rng.uniform(0, 640, (t, 17, 2)), rng.uniform(0.5, 1.0, (t, 17, 1))], axis=2)
    return SkeletonSequence("s0", fps, frames, label)


def session_text(frames, meta='{"session_id": "x", "fps": 17, "label": "TD"}'):
    return [meta] + [json.dumps(f) for f in frames]


# -- parsing / writing ------------------------------------------------------

def test_roundtrip_byte_stable(tmp_path):
    seq = make_seq()
    text = format_session(seq)
    again = format_session(parse_session(text.splitlines()))
    assert again == text
    write_session(seq, tmp_path / "a.skel.jsonl")
    assert read_session(tmp_path / "a.skel.jsonl") == seq
    assert (tmp_path / "a.skel.jsonl").read_text() == text


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000), st.sampled_from(["ASD", "TD", None]),
       st.floats(1.0, 60.0))
def test_roundtrip_property(t, seed, label, fps):
    seq = make_seq(t, seed, label, fps)
    assert parse_session(format_session(seq).splitlines()) == seq


def test_fps_parsed():
    frame = [[1.0, 2.0, 0.9]] * 17
    seq = parse_session(session_text([frame, frame]))
    assert seq.fps == 17 and seq.label == "TD" and seq.frames.shape == (2, 17, 3)


def test_wrong_joint_count_cites_line():
    good, bad = [[1.0, 2.0, 0.9]] * 17, [[1.0, 2.0, 0.9]] * 16
    with pytest.raises(FormatError, match="line 3: expected 17 joints"):
        parse_session(session_text([good, bad]))


@pytest.mark.parametrize("meta,frame", [
    ('{"session_id": "x", "fps": 17, "label": "XX"}', [[1.0, 2.0, 0.9]] * 17),
    ('{"session_id": "x", "fps": 17, "label": "TD"}', [[float("nan"), 2.0, 0.9]] * 17),
    ('{"session_id": "x", "fps": 17, "label": "TD"}', [[1.0, 2.0, 1.5]] * 17),
    ('{"session_id": "x", "fps": 0, "label": "TD"}', [[1.0, 2.0, 0.9]] * 17),
    ('not json', [[1.0, 2.0, 0.9]] * 17),
])
def test_parse_errors(meta, frame):
    with pytest.raises(FormatError):
        parse_session(session_text([frame, frame], meta))


def test_parse_nan_literal_rejected():
    lines = ['{"session_id": "x", "fps": 17, "label": "TD"}',
             "[" + ",".join(["[NaN, 1.0, 0.9]"] * 17) + "]"] * 1
    lines.append(lines[1])
    with pytest.raises(FormatError, match="non-finite"):
        parse_session(lines)


def test_load_directory_sorted(tmp_path):
    for i in (2, 0, 1):
        s = make_seq(seed=i)
        write_session(SkeletonSequence(f"s{i}", s.fps, s.frames, s.label), tmp_path / f"s{i}.skel.jsonl")
    assert [s.session_id for s in load_directory(tmp_path)] == ["s0", "s1", "s2"]


# -- normalization ----------------------------------------------------------

def test_normalize_hand_example():
    out = normalize_channels(np.array([[1.0], [2.0], [3.0]]))
    expected = np.array([-1.0, 0.0, 1.0]) / np.sqrt(2.0 / 3.0)
    assert np.allclose(out[:, 0], expected, atol=1e-7)
    assert out[0, 0] == pytest.approx(-1.2247, abs=1e-4)


def test_normalize_idempotent_on_standardized():
    x = np.random.default_rng(0).normal(size=(50, 1))
    x = (x - x.mean()) / x.std()
    assert np.max(np.abs(normalize_channels(x) - x)) <= 1e-7


def test_normalize_constant_channel_zeros(caplog):
    with caplog.at_level("INFO"):
        out = normalize_channels(np.full((3, 1), 5.0))
    assert "degenerate" in caplog.text
    assert np.array_equal(out, np.zeros((3, 1)))


def test_normalize_part_statistics():
    seq = make_seq(t=20)
    out = normalize_part(seq, DEFAULT_PARTS[UPPER_BODY])
    assert out.shape == (20, 8, 2)
    assert np.all(np.abs(out.mean(axis=(0, 1))) <= 1e-9)
    assert np.all(np.abs(out.std(axis=(0, 1)) - 1.0) <= 1e-6)


# -- imputation -------------------------------------------------------------

def test_impute_noop():
    seq = make_seq()
    assert impute_low_confidence(seq, 0.3) == seq


def test_impute_copies_previous_frame():
    seq = make_seq(t=8)
    frames = seq.frames.copy()
    frames[5, 9, 2] = 0.1
    out = impute_low_confidence(SkeletonSequence("s", 17.0, frames, "TD"), 0.3)
    assert np.array_equal(out.frames[5, 9, :2], frames[4, 9, :2])
    assert out.frames[5, 9, 2] == 0.0
    assert np.array_equal(out.frames[:5], frames[:5])


def test_impute_leading_gap_takes_next_valid():
    seq = make_seq(t=5)
    frames = seq.frames.copy()
    frames[:2, 0, 2] = 0.0
    out = impute_low_confidence(SkeletonSequence("s", 17.0, frames, None), 0.3)
    assert np.array_equal(out.frames[0, 0, :2], frames[2, 0, :2])
    assert np.array_equal(out.frames[1, 0, :2], frames[2, 0, :2])


def test_impute_all_invalid_names_joint():
    frames = make_seq().frames.copy()
    frames[:, 7, 2] = 0.05
    with pytest.raises(ImputationError, match="left_elbow|7"):
        impute_low_confidence(SkeletonSequence("s", 17.0, frames, None), 0.3)


# -- sampling / splitting ---------------------------------------------------

def test_sample_indices_examples():
    assert sample_indices(4, 2).tolist() == [0, 2]
    idx = sample_indices(340, 64)
    assert len(idx) == 64 and idx[-1] == 334 and np.all(np.diff(idx) >= 0)


def test_sample_identity():
    seq = make_seq(t=7)
    assert sample_frames(seq, 7) == seq


@given(st.integers(1, 500), st.integers(1, 128))
def test_sample_indices_formula(t_in, t_out):
    idx = sample_indices(t_in, t_out)
    assert idx.tolist() == [i * t_in // t_out for i in range(t_out)]
    assert np.all(np.diff(idx) >= 0) and idx[0] == 0


def test_split_streams_shapes_and_normalization():
    seq = make_seq(t=10)
    head, body = split_streams(seq)
    assert head.shape == (10, 5, 2) and body.shape == (10, 8, 2)
    assert set(DEFAULT_PARTS[HEAD]).isdisjoint(DEFAULT_PARTS[UPPER_BODY])
    for x in (head, body):
        assert np.all(np.abs(x.mean(axis=(0, 1))) <= 1e-9)


def test_validate_parts_rejects_overlap_and_range():
    with pytest.raises(ParameterError, match="overlap"):
        validate_parts({1: [0, 1], 2: [1, 2]})
    with pytest.raises(ParameterError, match="outside"):
        validate_parts({1: [0, 17], 2: [2]})
    with pytest.raises(ParameterError, match="no joints"):
        validate_parts({1: [], 2: [2]})


def test_preprocess_shapes():
    head, body = preprocess(make_seq(t=40), 16)
    assert head.shape == (16, 5, 2) and body.shape == (16, 8, 2)
