"""Trainable class prototypes and cross-entropy classifier training.

Two classifier banks share the same machinery:

* PrototypeBank: k unknown-class prototypes plus a learnable background row,
  all trainable, warm-started from cluster centers.
* ClassifierBank: frozen base-class text rows plus a single learnable
  background row.

The loss is the mean negative log softmax probability of the labeled row at
temperature tau, treated as a function of the raw (unconstrained) rows.
Optimization is plain mini-batch SGD with step decay; after every step the
trainable rows are renormalized to unit length (project-then-renormalize),
so the finite-difference contract on ce_grad stays simple.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import unit, unit_rows
from .pseudolabel import ClusterModel, PseudoLabel


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 12
    batch_size: int = 64
    tau: float = 0.01
    seed: int = 0
    lr_decay_epochs: tuple = ()  # 1-based epochs at which lr is multiplied by 0.1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass
class PrototypeBank:
    """(k+1) x d rows: unknown prototypes u_1..u_k then the background row."""

    rows: np.ndarray
    trainable: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.trainable = np.asarray(self.trainable, dtype=bool)
        if self.rows.ndim != 2 or self.trainable.shape != (self.rows.shape[0],):
            raise ValueError("rows must be 2-d with one trainable flag per row")

    @property
    def k(self) -> int:
        return self.rows.shape[0] - 1

    @property
    def background_index(self) -> int:
        return self.rows.shape[0] - 1

    @classmethod
    def from_clusters(cls, cm: ClusterModel, background_init: np.ndarray) -> "PrototypeBank":
        rows = np.vstack([unit_rows(cm.centers), unit(background_init)[None, :]])
        return cls(rows=rows, trainable=np.ones(rows.shape[0], dtype=bool))


@dataclass
class ClassifierBank:
    """Frozen class rows (text embeddings) plus one learnable background row."""

    rows: np.ndarray
    trainable: np.ndarray
    class_names: list

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.trainable = np.asarray(self.trainable, dtype=bool)
        if len(self.class_names) != self.rows.shape[0] - 1:
            raise ValueError("expected one name per frozen class row")

    @property
    def background_index(self) -> int:
        return self.rows.shape[0] - 1

    @classmethod
    def from_text(
        cls, text_rows: np.ndarray, class_names: list, background_init: np.ndarray
    ) -> "ClassifierBank":
        rows = np.vstack([unit_rows(text_rows), unit(background_init)[None, :]])
        trainable = np.zeros(rows.shape[0], dtype=bool)
        trainable[-1] = True
        return cls(rows=rows, trainable=trainable, class_names=list(class_names))


def _as_features(features) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(features, tuple):
        feats, labels = features
    else:
        feats = np.asarray([f for f, _ in features], dtype=np.float64)
        labels = np.asarray([l for _, l in features], dtype=int)
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    return feats, labels


def ce_loss(features, rows: np.ndarray, tau: float) -> float:
    """Mean -log softmax probability of each feature's labeled row.

    features: (vectors, labels) arrays or an iterable of (vector, label).
    """
    feats, labels = _as_features(features)
    rows = np.asarray(rows, dtype=np.float64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= rows.shape[0]:
        raise IndexError("label out of range for bank rows")
    logits = feats @ rows.T / tau
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    picked = logits[np.arange(len(labels)), labels]
    return float((lse - picked).mean())


def ce_grad(features, rows: np.ndarray, tau: float, trainable: np.ndarray) -> np.ndarray:
    """Gradient of ce_loss w.r.t. the rows; frozen rows get exact zeros."""
    feats, labels = _as_features(features)
    rows = np.asarray(rows, dtype=np.float64)
    n = len(labels)
    logits = feats @ rows.T / tau
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(n), labels] -= 1.0
    grad = (p.T @ feats) / (n * tau)
    grad[~np.asarray(trainable, dtype=bool)] = 0.0
    return grad


def sgd_train(
    feats: np.ndarray,
    labels: np.ndarray,
    rows: np.ndarray,
    trainable: np.ndarray,
    cfg: TrainConfig,
) -> tuple[np.ndarray, list]:
    """Mini-batch SGD on ce_loss with per-epoch full-data loss trace.

    Trainable rows are renormalized to unit length after every step. The
    returned trace has epochs + 1 entries (initial loss first).
    """
    rows = np.array(rows, dtype=np.float64, copy=True)
    trainable = np.asarray(trainable, dtype=bool)
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.learning_rate
    decay_at = set(int(e) for e in cfg.lr_decay_epochs)
    trace = [ce_loss((feats, labels), rows, cfg.tau)]
    n = len(labels)
    for epoch in range(1, cfg.epochs + 1):
        if epoch in decay_at:
            lr *= 0.1
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            if lr == 0.0:
                continue  # bank stays bit-identical at zero learning rate
            g = ce_grad((feats[batch], labels[batch]), rows, cfg.tau, trainable)
            rows = rows - lr * g
            rows[trainable] = unit_rows(rows[trainable])
        trace.append(ce_loss((feats, labels), rows, cfg.tau))
    return rows, trace


def train_prototypes(
    pseudo: list[PseudoLabel],
    embeddings: dict,
    bank: PrototypeBank,
    cfg: TrainConfig,
    background_embeddings: np.ndarray | None = None,
) -> tuple[PrototypeBank, list]:
    """Fit the prototype bank to pseudo-labeled features.

    embeddings maps proposal_id to a unit feature vector. Background
    negatives (features of proposals removed by the base filter) are
    resampled every epoch, capped at the pseudo-set size; the recorded trace
    is the loss on the pseudo set plus a fixed, deterministic negative
    sample so successive entries are comparable.
    """
    if not pseudo:
        raise ValueError("pseudo-label set is empty")
    feats = np.asarray([embeddings[r.proposal_id] for r in pseudo], dtype=np.float64)
    labels = np.asarray([r.unknown_index - 1 for r in pseudo], dtype=int)
    if labels.max() >= bank.k:
        raise IndexError("pseudo label index exceeds bank size")

    bg = None
    if background_embeddings is not None and len(background_embeddings) > 0:
        bg = np.asarray(background_embeddings, dtype=np.float64)
    cap = min(len(pseudo), 0 if bg is None else len(bg))

    rows = bank.rows.copy()
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.learning_rate
    decay_at = set(int(e) for e in cfg.lr_decay_epochs)

    def eval_set():
        if bg is None:
            return feats, labels
        ref_bg = bg[:cap]
        ef = np.vstack([feats, ref_bg])
        el = np.concatenate([labels, np.full(len(ref_bg), bank.background_index)])
        return ef, el

    ef, el = eval_set()
    trace = [ce_loss((ef, el), rows, cfg.tau)]
    for epoch in range(1, cfg.epochs + 1):
        if epoch in decay_at:
            lr *= 0.1
        if bg is not None and cap > 0:
            pick = rng.choice(len(bg), size=cap, replace=False)
            xf = np.vstack([feats, bg[pick]])
            xl = np.concatenate([labels, np.full(cap, bank.background_index)])
        else:
            xf, xl = feats, labels
        order = rng.permutation(len(xl))
        for start in range(0, len(xl), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            if lr == 0.0:
                continue
            g = ce_grad((xf[batch], xl[batch]), rows, cfg.tau, bank.trainable)
            rows = rows - lr * g
            rows[bank.trainable] = unit_rows(rows[bank.trainable])
        trace.append(ce_loss((ef, el), rows, cfg.tau))
    return PrototypeBank(rows=rows, trainable=bank.trainable.copy()), trace


def train_base_background(
    features,
    bank: ClassifierBank,
    cfg: TrainConfig,
) -> tuple[ClassifierBank, list]:
    """Fit only the background row against labeled base features.

    features: (vectors, labels) with labels indexing bank rows, the last row
    being background.
    """
    feats, labels = _as_features(features)
    if len(labels) == 0:
        raise ValueError("no training features")
    rows, trace = sgd_train(feats, labels, bank.rows, bank.trainable, cfg)
    out = ClassifierBank(
        rows=rows, trainable=bank.trainable.copy(), class_names=list(bank.class_names)
    )
    return out, trace
