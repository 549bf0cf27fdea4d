"""Deterministic synthetic block-play sessions with class-dependent motion signatures.

The data is synthetic and carries no clinical meaning.  A seated child's
COCO-17 skeleton is animated as a kinematic chain: a drifting torso anchor,
a head that nods towards the table, and two arms whose hands follow
minimum-jerk reach/place cycles solved to elbow positions by two-link
inverse kinematics.  Class-specific behaviour enters through a
:class:`BehaviorSignature`:

* jerk scale: high-frequency tremor added to hand paths,
* wave rate / amplitude: episodes of raised, oscillating hands,
* row-arrange bias: how far placements spread sideways in a row rather
  than stacking in place,
* assist-proximity rate: episodes where the hand is drawn toward the
  caregiver's side and held.

The two class prototypes are blended by ``separation``; at 0 they coincide.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .skeleton import LABELS, NUM_JOINTS, SESSION_SUFFIX, SkeletonSequence, write_session

CLIP_SECONDS = 20.0
STAGE_SECONDS = (180.0, 180.0, 120.0)  # guided build, free play, pack-up
STAGE_NAMES = ("guided-build", "free-play", "pack-up")
MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class BehaviorSignature:
    jerk: float  # tremor amplitude scale (pixels)
    wave_rate: float  # events per minute
    wave_amplitude: float  # pixels
    row_bias: float  # [0, 1]
    assist_rate: float  # events per minute

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ParameterError(f"behaviour parameter {k} must be non-negative")
        if self.row_bias > 1:
            raise ParameterError("row_bias must lie in [0, 1]")


ASD_PROTOTYPE = BehaviorSignature(jerk=8.0, wave_rate=14.0, wave_amplitude=80.0, row_bias=1.0, assist_rate=1.0)
TD_PROTOTYPE = BehaviorSignature(jerk=1.0, wave_rate=0.0, wave_amplitude=30.0, row_bias=0.0, assist_rate=6.0)


def class_signature(label: str, separation: float) -> BehaviorSignature:
    """Blend the prototypes: ``mid +/- separation/2 * (ASD - TD)``."""
    if label not in LABELS:
        raise ParameterError(f"unknown label {label!r}")
    sign = 0.5 if label == "ASD" else -0.5
    a, t = asdict(ASD_PROTOTYPE), asdict(TD_PROTOTYPE)
    return BehaviorSignature(**{k: (a[k] + t[k]) / 2 + sign * separation * (a[k] - t[k]) for k in a})


@dataclass(frozen=True)
class GeneratorSpec:
    n_asd: int = 40
    n_td: int = 89
    mode: str = "clip"
    fps: float = 17.0
    separation: float = 0.8
    seed: int = 0
    noise: float = 2.0

    def __post_init__(self):
        if self.n_asd < 0 or self.n_td < 0:
            raise ParameterError("session counts must be non-negative")
        if not 0.0 <= self.separation <= 1.0:
            raise ParameterError(f"separation must lie in [0, 1], got {self.separation}")
        if not self.fps > 0:
            raise ParameterError("fps must be positive")
        if self.mode not in ("clip", "session"):
            raise ParameterError(f"mode must be 'clip' or 'session', got {self.mode!r}")
        if self.noise < 0:
            raise ParameterError("noise must be non-negative")


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def session_seed(master: int, counter: int) -> int:
    """Per-session seed: ``splitmix64(splitmix64(master) ^ counter)``.

    Counter-based, so a session's content depends only on (master, index).
    """
    return splitmix64(splitmix64(master & MASK64) ^ (counter & MASK64))


# ---------------------------------------------------------------------------
# motion primitives
# ---------------------------------------------------------------------------

def _min_jerk(s: np.ndarray) -> np.ndarray:
    return 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5


def _smooth_noise(rng: np.random.Generator, n: int, fps: float, cutoff_hz: float, scale: float) -> np.ndarray:
    """Band-limited Gaussian noise (moving-average filtered), unit variance * scale."""
    raw = rng.normal(size=n + 64)
    width = max(1, int(round(fps / max(cutoff_hz, 1e-3))))
    kernel = np.hanning(width + 2)[1:-1]
    kernel /= kernel.sum()
    out = np.convolve(raw, kernel, mode="same")[32:32 + n]
    sd = out.std()
    return out / sd * scale if sd > 0 else out


def _schedule(rng: np.random.Generator, rate_per_min: float, duration: float,
              length: float) -> list[float]:
    """Event start times: jittered regular spacing at the given rate."""
    if rate_per_min <= 0:
        return []
    gap = 60.0 / rate_per_min
    t = rng.uniform(0.0, gap)
    out = []
    while t + length <= duration:
        out.append(t)
        t += gap * rng.uniform(0.75, 1.25)
    return out


def _two_link_elbow(shoulder: np.ndarray, hand: np.ndarray, l1: float, l2: float,
                    outward: float) -> tuple[np.ndarray, np.ndarray]:
    """Place the elbow for a planar two-link arm; clamps unreachable hands."""
    d = hand - shoulder
    dist = np.linalg.norm(d, axis=-1, keepdims=True)
    reach = (l1 + l2) * 0.999
    hand = np.where(dist > reach, shoulder + d / np.maximum(dist, 1e-9) * reach, hand)
    d = hand - shoulder
    dist = np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), abs(l1 - l2) + 1e-6)
    a = (l1 ** 2 - l2 ** 2 + dist ** 2) / (2 * dist)
    h = np.sqrt(np.maximum(l1 ** 2 - a ** 2, 0.0))
    unit = d / dist
    perp = np.stack([-unit[..., 1], unit[..., 0]], axis=-1) * outward
    return shoulder + unit * a + perp * h, hand


@dataclass
class _Body:
    center: np.ndarray
    scale: float
    shoulder_half: float
    upper_arm: float
    forearm: float
    table_y: float
    dominant: int  # 0 = left arm, 1 = right arm


def _reach_path(rng, n, fps, start, targets_fn, body: _Body) -> np.ndarray:
    """Hand path alternating moves to generated targets with short dwells."""
    path = np.empty((n, 2))
    pos = np.array(start, dtype=float)
    t = 0
    while t < n:
        target = targets_fn()
        move = max(2, int(rng.uniform(0.7, 1.4) * fps))
        dwell = max(1, int(rng.uniform(0.2, 0.7) * fps))
        s = _min_jerk(np.linspace(0, 1, move))
        seg = pos + (target - pos) * s[:, None]
        seg = np.concatenate([seg, np.repeat(target[None], dwell, axis=0)])
        k = min(len(seg), n - t)
        path[t:t + k] = seg[:k]
        t += k
        pos = target
    return path


def _animate(rng: np.random.Generator, sig: BehaviorSignature, seconds: float, fps: float,
             stage: int, noise: float) -> tuple[np.ndarray, dict]:
    n = int(round(seconds * fps))
    time = np.arange(n) / fps
    scale = rng.uniform(0.85, 1.15)
    body = _Body(center=np.array([rng.uniform(560, 720), rng.uniform(330, 390)]), scale=scale,
                 shoulder_half=45 * scale, upper_arm=62 * scale, forearm=56 * scale,
                 table_y=rng.uniform(470, 500), dominant=int(rng.integers(0, 2)))
    events = {"wave": 0, "assist": 0}

    # torso: slow sway and breathing
    sway = _smooth_noise(rng, n, fps, 0.3, 6.0)
    breathe = 2.0 * np.sin(2 * np.pi * rng.uniform(0.2, 0.35) * time + rng.uniform(0, 2 * np.pi))
    anchor = np.stack([body.center[0] + sway, body.center[1] + breathe], axis=1)
    lean = _smooth_noise(rng, n, fps, 0.2, 0.03)

    shoulders = np.empty((n, 2, 2))
    for side, sgn in enumerate((-1.0, 1.0)):  # COCO left joint sits on image right
        shoulders[:, side, 0] = anchor[:, 0] - sgn * body.shoulder_half * np.cos(lean)
        shoulders[:, side, 1] = anchor[:, 1] - sgn * body.shoulder_half * np.sin(lean)
    hips = np.stack([anchor + [[36 * scale, 150 * scale]], anchor + [[-36 * scale, 150 * scale]]], axis=1)

    # reach/place targets: pile on one side, build area in front
    row_spread = 40 + 260 * sig.row_bias
    stack_height = 90 * (1 - sig.row_bias)
    pile_side = 1.0 if rng.uniform() < 0.5 else -1.0
    stage_spread = (1.0, 1.4, 0.8)[stage]

    hands = np.empty((n, 2, 2))
    for side, sgn in enumerate((-1.0, 1.0)):
        home = np.array([body.center[0] + sgn * 40 * scale, body.table_y - 10])
        active = side == body.dominant
        placed = [0]

        def targets(sgn=sgn, active=active, home=home):
            if not active:
                return home + rng.normal(0, 6, 2)
            placed[0] += 1
            if placed[0] % 2:  # fetch from pile
                return np.array([body.center[0] + pile_side * 170 * scale * stage_spread,
                                 body.table_y + rng.uniform(-10, 15)])
            k = placed[0] // 2
            lateral = rng.uniform(-1, 1) * row_spread * stage_spread * scale
            height = (k % 4) * stack_height / 4 * scale
            return np.array([body.center[0] + lateral, body.table_y - 20 - height])

        path = _reach_path(rng, n, fps, home, targets, body)
        tremor = np.stack([_smooth_noise(rng, n, fps, 4.0, sig.jerk),
                           _smooth_noise(rng, n, fps, 4.0, sig.jerk)], axis=1)
        hands[:, side] = path + tremor

    # wave episodes: hands raised above the shoulders and oscillating
    for start in _schedule(rng, sig.wave_rate, seconds, 1.6):
        events["wave"] += 1
        length = rng.uniform(1.2, 1.6)
        i0, i1 = int(start * fps), min(n, int((start + length) * fps))
        idx = np.arange(i0, i1)
        env = np.sin(np.pi * (idx - i0) / max(i1 - i0, 1)) ** 0.5
        freq = rng.uniform(2.5, 3.5)
        both = rng.uniform() < 0.6
        for side in ((0, 1) if both else (body.dominant,)):
            raised = shoulders[idx, side] + [0.0, -55 * scale]
            raised[:, 0] += np.sin(2 * np.pi * freq * time[idx]) * sig.wave_amplitude * scale
            hands[idx, side] = hands[idx, side] * (1 - env[:, None]) + raised * env[:, None]

    # assist episodes: hand drawn toward the caregiver and held
    parent_side = 1.0 if rng.uniform() < 0.5 else -1.0
    gaze = np.zeros(n)  # head turn toward the caregiver
    for start in _schedule(rng, sig.assist_rate, seconds, 2.0):
        events["assist"] += 1
        i0, i1 = int(start * fps), min(n, int((start + 2.0) * fps))
        idx = np.arange(i0, i1)
        env = np.sin(np.pi * (idx - i0) / max(i1 - i0, 1))
        gaze[idx] = np.maximum(gaze[idx], env)
        side = body.dominant
        goal = np.array([body.center[0] + parent_side * 150 * scale, body.table_y - 40])
        hands[idx, side] = hands[idx, side] * (1 - env[:, None]) + goal * env[:, None]

    elbows = np.empty_like(hands)
    for side, sgn in enumerate((-1.0, 1.0)):
        e, h = _two_link_elbow(shoulders[:, side], hands[:, side], body.upper_arm, body.forearm,
                               outward=-sgn)
        elbows[:, side], hands[:, side] = e, h

    # head: nods toward the active hand and the table
    neck = shoulders.mean(axis=1)
    look = np.clip((hands[:, body.dominant, 0] - neck[:, 0]) / 200.0, -1, 1)
    yaw = 0.6 * look * (1 - gaze) + 1.2 * parent_side * gaze + _smooth_noise(rng, n, fps, 0.5, 0.15)
    pitch = (_smooth_noise(rng, n, fps, 0.4, 6.0) - 10 * gaze
             + 8 * np.clip((hands[:, body.dominant, 1] - neck[:, 1]) / 150, 0, 1))
    nose = neck + np.stack([yaw * 18 * scale, (-62 + pitch) * scale * np.ones(n)], axis=1)
    joints = np.empty((n, NUM_JOINTS, 2))
    joints[:, 0] = nose
    for side, sgn in enumerate((-1.0, 1.0)):
        joints[:, 1 + side] = nose + np.stack([-sgn * 11 * scale + 0 * yaw, -9 * scale * np.ones(n)], axis=1)
        joints[:, 3 + side] = nose + np.stack([-sgn * 24 * scale - yaw * 10 * scale, -3 * scale * np.ones(n)], axis=1)
    joints[:, 5:7] = shoulders
    joints[:, 7:9] = elbows
    joints[:, 9:11] = hands
    joints[:, 11:13] = hips
    for side, sgn in enumerate((1.0, -1.0)):
        joints[:, 13 + side] = hips[:, side] + [sgn * 30 * scale, 60 * scale]
        joints[:, 15 + side] = hips[:, side] + [sgn * 36 * scale, 125 * scale]
    joints += rng.normal(0.0, noise, size=joints.shape)

    conf = rng.uniform(0.7, 1.0, size=(n, NUM_JOINTS))
    # brief occlusion dips on wrists and elbows
    for _ in range(int(rng.poisson(seconds / 10.0))):
        j = int(rng.choice([7, 8, 9, 10]))
        t0 = int(rng.integers(0, n))
        conf[t0:t0 + int(rng.integers(1, 4)), j] = rng.uniform(0.05, 0.29)
    conf[0] = np.maximum(conf[0], 0.7)  # every joint is observed at least once

    frames = np.concatenate([joints, conf[:, :, None]], axis=2)
    return frames, events


def generate_session(label: str, spec: GeneratorSpec, seed: int, session_id: str | None = None
                     ) -> tuple[SkeletonSequence, dict]:
    """Generate one session; returns the sequence and its event log."""
    rng = np.random.default_rng(seed)
    sig = class_signature(label, spec.separation)
    if spec.mode == "clip":
        stage = int(rng.integers(0, 3))
        frames, events = _animate(rng, sig, CLIP_SECONDS, spec.fps, stage, spec.noise)
        stages = [STAGE_NAMES[stage]]
    else:
        parts, events = [], {"wave": 0, "assist": 0}
        for stage, seconds in enumerate(STAGE_SECONDS):
            f, ev = _animate(rng, sig, seconds, spec.fps, stage, spec.noise)
            parts.append(f)
            for k in events:
                events[k] += ev[k]
        frames = np.concatenate(parts)
        stages = list(STAGE_NAMES)
    frames[:, :, 2] = np.clip(frames[:, :, 2], 0.0, 1.0)
    seconds = frames.shape[0] / spec.fps
    log = {"events": events, "stages": stages, "seconds": seconds,
           "wave_per_min": events["wave"] / (seconds / 60.0),
           "assist_per_min": events["assist"] / (seconds / 60.0)}
    sid = session_id if session_id is not None else f"{label.lower()}-{seed:016x}"
    return SkeletonSequence(sid, spec.fps, frames, label), log


def generate_dataset(spec: GeneratorSpec, out_dir) -> list[dict]:
    """Write all sessions plus ``manifest.jsonl``; returns the manifest records."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    labels = ["ASD"] * spec.n_asd + ["TD"] * spec.n_td
    records = []
    for i, label in enumerate(labels):
        seed = session_seed(spec.seed, i)
        sid = f"s{spec.seed}-{i:04d}"
        seq, log = generate_session(label, spec, seed, sid)
        path = out / (sid + SESSION_SUFFIX)
        try:
            write_session(seq, path)
        except OSError as exc:
            raise DataError(f"cannot write {path}: {exc}") from None
        records.append({"session_id": sid, "file": path.name, "label": label, "seed": seed,
                        "mode": spec.mode, "fps": spec.fps, "frames": seq.num_frames,
                        "separation": spec.separation, "synthetic": True,
                        "stages": log["stages"], "events": log["events"],
                        "wave_per_min": log["wave_per_min"], "assist_per_min": log["assist_per_min"]})
    manifest = out / "manifest.jsonl"
    try:
        manifest.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records),
                            encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {manifest}: {exc}") from None
    return records


def read_manifest(directory) -> list[dict]:
    path = Path(directory) / "manifest.jsonl"
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def generate_sequences(spec: GeneratorSpec) -> list[SkeletonSequence]:
    """In-memory equivalent of :func:`generate_dataset` (same ids and seeds)."""
    labels = ["ASD"] * spec.n_asd + ["TD"] * spec.n_td
    return [generate_session(label, spec, session_seed(spec.seed, i), f"s{spec.seed}-{i:04d}")[0]
            for i, label in enumerate(labels)]
