"""Loss, optimizer, metrics, training/evaluation loops and the ablation harness."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import DataError, NumericalError, ParameterError
from .model import VARIANTS, ModelConfig, TwoStreamModel
from .skeleton import LABELS, SkeletonSequence, preprocess

log = logging.getLogger(__name__)

LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}  # ASD -> 0, TD -> 1


# ---------------------------------------------------------------------------
# loss and metrics
# ---------------------------------------------------------------------------

def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch (log-sum-exp stabilized)."""
    logits = ad.as_tensor(logits)
    if logits.ndim == 1:
        logits = logits.reshape(1, logits.shape[0])
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    batch, classes = logits.shape
    if labels.shape != (batch,) or np.any(labels < 0) or np.any(labels >= classes):
        raise DataError(f"labels {labels.tolist()} invalid for logits of shape {logits.shape}")
    onehot = np.zeros((batch, classes))
    onehot[np.arange(batch), labels] = 1.0
    picked = (ad.log_softmax(logits, axis=1) * Tensor(onehot)).sum()
    return picked * (-1.0 / batch)


@dataclass(frozen=True)
class Metrics:
    """Binary confusion (rows = true ASD/TD, columns = predicted) and summaries."""

    confusion: tuple[tuple[int, int], tuple[int, int]]

    @classmethod
    def from_predictions(cls, y_true: Iterable[int], y_pred: Iterable[int]) -> "Metrics":
        cm = np.zeros((2, 2), dtype=int)
        for t, p in zip(y_true, y_pred):
            cm[int(t), int(p)] += 1
        return cls.from_confusion(cm)

    @classmethod
    def from_confusion(cls, cm) -> "Metrics":
        cm = np.asarray(cm, dtype=int)
        if cm.shape != (2, 2) or np.any(cm < 0):
            raise DataError(f"confusion must be a non-negative 2x2 matrix, got {cm.tolist()}")
        return cls(tuple(tuple(int(v) for v in row) for row in cm))

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.confusion)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def accuracy(self) -> float:
        cm = self.matrix
        return float(np.trace(cm) / cm.sum()) if cm.sum() else 0.0

    @property
    def recalls(self) -> list[float]:
        cm = self.matrix
        return [cm[c, c] / cm[c].sum() for c in range(2) if cm[c].sum() > 0]

    @property
    def uar(self) -> float:
        r = self.recalls
        return float(np.mean(r)) if r else 0.0

    def to_dict(self) -> dict:
        return {"confusion": [list(r) for r in self.confusion],
                "accuracy": self.accuracy, "uar": self.uar}


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive-moment optimizer over a name -> Tensor mapping."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

@dataclass
class PreparedData:
    head: np.ndarray  # (S, T, N_head, 2)
    body: np.ndarray  # (S, T, N_body, 2)
    labels: np.ndarray  # (S,), -1 for unlabeled
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "PreparedData":
        idx = np.asarray(idx, dtype=int)
        return PreparedData(self.head[idx], self.body[idx], self.labels[idx],
                            [self.ids[i] for i in idx])


def prepare(dataset: Sequence[SkeletonSequence], cfg: ModelConfig) -> PreparedData:
    """Impute, sample and split every session into normalized stream arrays."""
    if not dataset:
        raise DataError("dataset is empty")
    parts = {1: cfg.body_joints, 2: cfg.head_joints}
    heads, bodies, labels = [], [], []
    for seq in dataset:
        h, b = preprocess(seq, cfg.num_frames, parts, cfg.threshold)
        heads.append(h)
        bodies.append(b)
        labels.append(LABEL_INDEX[seq.label] if seq.label is not None else -1)
    return PreparedData(np.stack(heads), np.stack(bodies), np.array(labels, dtype=int),
                        [s.session_id for s in dataset])


def _as_prepared(data, cfg: ModelConfig) -> PreparedData:
    return data if isinstance(data, PreparedData) else prepare(data, cfg)


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def loss_and_grads(model: TwoStreamModel, head: np.ndarray, body: np.ndarray, labels: np.ndarray
                   ) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    with Tape() as tape:
        logits = model.forward(head, body)
        loss = cross_entropy(logits, labels)
    gm = tape.backward(loss)
    grads = {name: gm[p].data for name, p in model.params.items() if p in gm}
    return loss.item(), logits.data, grads


def train(dataset, cfg: ModelConfig, model: TwoStreamModel | None = None
          ) -> tuple[TwoStreamModel, list[dict]]:
    """Mini-batch Adam on mean cross-entropy; returns the model and per-epoch history."""
    data = _as_prepared(dataset, cfg)
    if np.any(data.labels < 0):
        raise DataError("training data contains unlabeled sessions")
    present = set(data.labels.tolist())
    if len(present) < 2:
        raise DataError(f"training data has a single class: {[LABELS[c] for c in present]}")
    model = model if model is not None else TwoStreamModel(cfg)
    opt = Adam(model.params, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            y = data.labels[idx]
            loss, logits, grads = loss_and_grads(model, data.head[idx], data.body[idx], y)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss in epoch {epoch}")
            opt.step(grads)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
        record = {"epoch": epoch + 1, "loss": total_loss / n, "accuracy": correct / n}
        history.append(record)
        log.debug("epoch %d loss %.4f acc %.3f", record["epoch"], record["loss"], record["accuracy"])
    return model, history


def predict(model: TwoStreamModel, data: PreparedData, batch_size: int = 32) -> np.ndarray:
    """Class-probability matrix (S, 2); runs without recording a tape."""
    out = []
    for start in range(0, len(data), batch_size):
        sl = slice(start, start + batch_size)
        logits = model.forward(data.head[sl], data.body[sl])
        out.append(ad.softmax(logits, axis=1).data)
    return np.concatenate(out)


def evaluate(model: TwoStreamModel, dataset) -> Metrics:
    data = _as_prepared(dataset, model.config)
    if np.any(data.labels < 0):
        bad = [data.ids[i] for i in np.flatnonzero(data.labels < 0)]
        raise DataError(f"cannot evaluate unlabeled sessions: {bad}")
    probs = predict(model, data, model.config.batch_size)
    return Metrics.from_predictions(data.labels, np.argmax(probs, axis=1))


def stratified_split(labels: Sequence[int], seed: int, test_fraction: float = 0.2
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split.

    Each class contributes ``max(1, round(frac * count))`` test items and must
    keep at least one training item.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test fraction must lie in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        if len(idx) < 2:
            raise DataError(f"class {LABELS[c] if 0 <= c < len(LABELS) else c} has {len(idx)} "
                            "session(s); a train/test split needs at least 2")
        k = max(1, int(round(test_fraction * len(idx))))
        test_idx.extend(idx[:k].tolist())
        train_idx.extend(idx[k:].tolist())
    return np.array(sorted(train_idx), dtype=int), np.array(sorted(test_idx), dtype=int)


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    variant: str
    cell: str
    seed: int
    metrics: Metrics
    train_accuracy: float

    def to_dict(self) -> dict:
        return {"variant": self.variant, "cell": self.cell, "seed": self.seed,
                "train_accuracy": self.train_accuracy, **self.metrics.to_dict()}


def _run_one(data: PreparedData, cfg: ModelConfig, test_fraction: float) -> AblationRow:
    tr, te = stratified_split(data.labels, cfg.seed, test_fraction)
    model, history = train(data.subset(tr), cfg)
    metrics = evaluate(model, data.subset(te))
    return AblationRow(cfg.variant, cfg.cell, cfg.seed, metrics, history[-1]["accuracy"])


def ablate(dataset, base: ModelConfig, variants: Sequence[str] = VARIANTS, seeds: int = 5,
           cells: Sequence[str] | None = None, test_fraction: float = 0.2,
           threads: int = 1) -> list[AblationRow]:
    """Train and evaluate every (variant, cell, seed) on a stratified split.

    Seed ``s`` fixes both the split and the initialization (``base.seed + s``).
    Rows come back in (variant, cell, seed) order regardless of ``threads``.
    """
    if seeds < 1:
        raise ParameterError("at least one seed per variant is required")
    for v in variants:
        if v not in VARIANTS:
            raise ParameterError(f"unknown variant {v!r}")
    cells = tuple(cells) if cells else (base.cell,)
    data = _as_prepared(dataset, base)
    jobs = [base.replace(variant=v, cell=c, seed=base.seed + s)
            for v in variants for c in cells for s in range(seeds)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_run_one, [data] * len(jobs), jobs, [test_fraction] * len(jobs)))
    return [_run_one(data, cfg, test_fraction) for cfg in jobs]


def summarize(rows: Sequence[AblationRow]) -> list[dict]:
    """Mean/std accuracy and UAR per (variant, cell), in first-seen order."""
    groups: dict[tuple[str, str], list[AblationRow]] = {}
    for r in rows:
        groups.setdefault((r.variant, r.cell), []).append(r)
    out = []
    for (variant, cell), rs in groups.items():
        acc = np.array([r.metrics.accuracy for r in rs])
        uar = np.array([r.metrics.uar for r in rs])
        out.append({"variant": variant, "cell": cell, "runs": len(rs),
                    "accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std()),
                    "uar_mean": float(uar.mean()), "uar_std": float(uar.std())})
    return out
