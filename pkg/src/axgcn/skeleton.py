"""Skeleton session data model, session-file I/O and preprocessing.

Session files (``*.skel.jsonl``) are UTF-8 text.  Line 1 is a JSON metadata
object ``{"session_id": ..., "fps": ..., "label": "ASD" | "TD" | null}``;
every following line is one frame given as a JSON array of 17 ``[x, y, c]``
triples.  Floats are written with ``repr`` so a parse/write round trip is
byte-stable.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import FormatError, ImputationError, ParameterError

log = logging.getLogger(__name__)

NUM_JOINTS = 17
LABELS = ("ASD", "TD")
SESSION_SUFFIX = ".skel.jsonl"

COCO_JOINTS = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# part label m: 1 = upper body, 2 = head
UPPER_BODY = 1
HEAD = 2
DEFAULT_PARTS: Mapping[int, tuple[int, ...]] = {
    UPPER_BODY: tuple(range(5, 13)),
    HEAD: tuple(range(0, 5)),
}
DEFAULT_CONFIDENCE_THRESHOLD = 0.3


@dataclass(frozen=True)
class SkeletonSequence:
    """A labelled pose sequence; ``frames`` has shape (T, 17, 3) = (x, y, confidence)."""

    session_id: str
    fps: float
    frames: np.ndarray
    label: str | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (NUM_JOINTS, 3):
            raise FormatError(f"frames must have shape (T, {NUM_JOINTS}, 3), got {frames.shape}")
        if frames.shape[0] < 1:
            raise FormatError("sequence has no frames")
        if not np.all(np.isfinite(frames)):
            raise FormatError("non-finite joint values")
        if not self.fps > 0:
            raise FormatError(f"fps must be positive, got {self.fps}")
        if self.label is not None and self.label not in LABELS:
            raise FormatError(f"unknown label {self.label!r}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def coords(self) -> np.ndarray:
        return self.frames[:, :, :2]

    @property
    def confidence(self) -> np.ndarray:
        return self.frames[:, :, 2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SkeletonSequence):
            return NotImplemented
        return (self.session_id == other.session_id and self.fps == other.fps
                and self.label == other.label and np.array_equal(self.frames, other.frames))

    __hash__ = None


def validate_parts(parts: Mapping[int, Iterable[int]]) -> dict[int, tuple[int, ...]]:
    out = {int(m): tuple(int(j) for j in js) for m, js in parts.items()}
    if set(out) != {UPPER_BODY, HEAD}:
        raise ParameterError(f"part labels must be {{1, 2}}, got {sorted(out)}")
    for m, js in out.items():
        if not js:
            raise ParameterError(f"part {m} has no joints")
        if any(j < 0 or j >= NUM_JOINTS for j in js):
            raise ParameterError(f"part {m} has joint indices outside 0..16: {js}")
        if len(set(js)) != len(js):
            raise ParameterError(f"part {m} lists a joint twice")
    if set(out[UPPER_BODY]) & set(out[HEAD]):
        raise ParameterError("head and upper-body parts overlap")
    return out


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def _format_float(v: float) -> str:
    return repr(float(v))


def format_session(seq: SkeletonSequence) -> str:
    fps = seq.fps
    meta = {"session_id": seq.session_id,
            "fps": int(fps) if float(fps).is_integer() else float(fps),
            "label": seq.label}
    lines = [json.dumps(meta)]
    for frame in seq.frames:
        triples = ",".join("[" + ",".join(_format_float(v) for v in joint) + "]" for joint in frame)
        lines.append("[" + triples + "]")
    return "\n".join(lines) + "\n"


def write_session(seq: SkeletonSequence, dest) -> None:
    """Write ``seq`` to a path or a text stream."""
    text = format_session(seq)
    if isinstance(dest, (str, Path)):
        Path(dest).write_text(text, encoding="utf-8")
    else:
        dest.write(text)


def parse_session(lines: Iterable[str]) -> SkeletonSequence:
    """Parse a session from an iterable of text lines (a file object works)."""
    it = iter(lines)
    try:
        header = next(it)
    except StopIteration:
        raise FormatError("empty session stream") from None
    try:
        meta = json.loads(header)
    except json.JSONDecodeError as exc:
        raise FormatError(f"line 1: metadata is not valid JSON ({exc.msg})") from None
    if not isinstance(meta, dict) or "session_id" not in meta or "fps" not in meta:
        raise FormatError("line 1: metadata must carry session_id and fps")
    label = meta.get("label")
    if label is not None and label not in LABELS:
        raise FormatError(f"line 1: unknown label {label!r}")
    fps = meta["fps"]
    if not isinstance(fps, (int, float)) or isinstance(fps, bool) or not math.isfinite(fps) or fps <= 0:
        raise FormatError(f"line 1: invalid fps {fps!r}")

    frames = []
    for lineno, line in enumerate(it, start=2):
        if not line.strip():
            continue
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"line {lineno}: not valid JSON ({exc.msg})") from None
        if not isinstance(frame, list) or len(frame) != NUM_JOINTS:
            n = len(frame) if isinstance(frame, list) else "no"
            raise FormatError(f"line {lineno}: expected {NUM_JOINTS} joints, got {n}")
        try:
            arr = np.array(frame, dtype=np.float64)
        except (TypeError, ValueError):
            raise FormatError(f"line {lineno}: joints must be numeric [x, y, c] triples") from None
        if arr.shape != (NUM_JOINTS, 3):
            raise FormatError(f"line {lineno}: joints must be [x, y, c] triples")
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"line {lineno}: non-finite joint value")
        if np.any(arr[:, 2] < 0) or np.any(arr[:, 2] > 1):
            raise FormatError(f"line {lineno}: confidence outside [0, 1]")
        frames.append(arr)
    if not frames:
        raise FormatError("session has no frames")
    return SkeletonSequence(str(meta["session_id"]), fps, np.stack(frames), label)


def read_session(path) -> SkeletonSequence:
    with open(path, encoding="utf-8") as fh:
        try:
            return parse_session(fh)
        except FormatError as exc:
            raise FormatError(f"{path}: {exc}") from None


def load_directory(directory) -> list[SkeletonSequence]:
    """Read every session file in ``directory`` in sorted filename order."""
    paths = sorted(Path(directory).glob("*" + SESSION_SUFFIX))
    return [read_session(p) for p in paths]


def roundtrip_text(text: str) -> str:
    return format_session(parse_session(io.StringIO(text)))


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def normalize_channels(values: np.ndarray, guard: float = 1e-8) -> np.ndarray:
    """Standardize the last axis of a (T, J, C) array over all frames and joints."""
    values = np.asarray(values, dtype=np.float64)
    mu = values.mean(axis=(0, 1), keepdims=True)
    sd = values.std(axis=(0, 1), keepdims=True)
    if np.any(sd == 0):
        log.info("degenerate channel(s) with zero variance; normalized to zeros")
    return (values - mu) / (sd + guard)


def normalize_part(seq: SkeletonSequence, joints: Iterable[int]) -> np.ndarray:
    """Per-part z-scoring of (x, y): returns a (T, len(joints), 2) array."""
    joints = list(joints)
    if seq.num_frames < 2:
        raise FormatError("normalization needs at least 2 frames")
    if not joints:
        raise ParameterError("part has no joints")
    return normalize_channels(seq.coords[:, joints, :])


def impute_low_confidence(seq: SkeletonSequence,
                          threshold: float = DEFAULT_CONFIDENCE_THRESHOLD) -> SkeletonSequence:
    """Replace low-confidence joints by the nearest earlier valid observation.

    A joint with no earlier valid value takes its first later valid value.
    Imputed entries get confidence 0.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold}")
    frames = seq.frames.copy()
    valid = frames[:, :, 2] >= threshold
    if valid.all():
        return seq
    for j in range(NUM_JOINTS):
        ok = valid[:, j]
        if ok.all():
            continue
        if not ok.any():
            raise ImputationError(f"joint {j} ({COCO_JOINTS[j]}) is below threshold in every frame")
        first = int(np.argmax(ok))
        last_good = None
        for t in range(seq.num_frames):
            if ok[t]:
                last_good = t
                continue
            src = last_good if last_good is not None else first
            frames[t, j, :2] = frames[src, j, :2]
            frames[t, j, 2] = 0.0
    return replace(seq, frames=frames)


def sample_indices(t_in: int, t_out: int) -> np.ndarray:
    if t_in < 1 or t_out < 1:
        raise ParameterError(f"frame counts must be positive, got {t_in} -> {t_out}")
    return (np.arange(t_out) * t_in) // t_out


def sample_frames(seq: SkeletonSequence, t_out: int) -> SkeletonSequence:
    """Uniformly pick ``t_out`` frames with index ``floor(i * T_in / T_out)``."""
    if t_out == seq.num_frames:
        return seq
    idx = sample_indices(seq.num_frames, t_out)
    return replace(seq, frames=seq.frames[idx])


def split_streams(seq: SkeletonSequence, parts: Mapping[int, Iterable[int]] = DEFAULT_PARTS
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Return independently normalized (head, upper_body) coordinate arrays."""
    parts = validate_parts(parts)
    return normalize_part(seq, parts[HEAD]), normalize_part(seq, parts[UPPER_BODY])


def preprocess(seq: SkeletonSequence, num_frames: int, parts=DEFAULT_PARTS,
               threshold: float = DEFAULT_CONFIDENCE_THRESHOLD) -> tuple[np.ndarray, np.ndarray]:
    """Imputation, uniform sampling and stream splitting in one call."""
    seq = impute_low_confidence(seq, threshold)
    seq = sample_frames(seq, num_frames)
    return split_streams(seq, parts)
