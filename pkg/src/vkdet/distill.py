"""Affine distillation head trained with an L1 alignment loss.

The head maps raw region descriptors into the embedding space of the
vision-language encoder: f = normalize(W x + b). Training minimizes the mean
elementwise L1 distance between f and the target embedding. The loss is
computed on the normalized output, matching how the features are consumed by
cosine scoring at inference; gradients flow through the normalization, with
the subgradient of |.| taken as sign(.) (0 at 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prototype import TrainConfig


@dataclass
class DistillHead:
    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be (d_out, d_in) with matching bias")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("head parameters must be finite")

    @classmethod
    def init_random(cls, d_out: int, d_in: int, seed: int, scale: float = 0.1) -> "DistillHead":
        rng = np.random.default_rng(seed)
        return cls(
            weight=scale * rng.standard_normal((d_out, d_in)),
            bias=np.zeros(d_out),
        )


def _forward(h: DistillHead, raws: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pre = raws @ h.weight.T + h.bias
    norms = np.linalg.norm(pre, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("head output has zero norm; cannot normalize")
    return pre / norms, norms


def apply_head(h: DistillHead, raw: np.ndarray) -> np.ndarray:
    """normalize(W raw + b) for a single descriptor."""
    f, _ = _forward(h, np.asarray(raw, dtype=np.float64)[None, :])
    return f[0]


def apply_head_batch(h: DistillHead, raws: np.ndarray) -> np.ndarray:
    """Row-wise normalized head outputs for a batch of descriptors."""
    f, _ = _forward(h, np.asarray(raws, dtype=np.float64))
    return f


def l1_distill_loss(h: DistillHead, raws, targets) -> float:
    """Mean rowwise L1 distance between head outputs and target embeddings."""
    raws = np.asarray(raws, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(raws) == 0:
        raise ValueError("no pairs")
    f, _ = _forward(h, raws)
    return float(np.abs(f - targets).sum(axis=1).mean())


def distill_grad(h: DistillHead, raws, targets) -> tuple[np.ndarray, np.ndarray]:
    """(dW, db) subgradients of the L1 loss through the normalization."""
    raws = np.asarray(raws, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(raws)
    f, norms = _forward(h, raws)
    s = np.sign(f - targets)
    # d/du of (u/|u|) applied to s: (s - f (f.s)) / |u|
    t = (s - f * (f * s).sum(axis=1, keepdims=True)) / norms / n
    return t.T @ raws, t.sum(axis=0)


def train_distill(
    h: DistillHead, raws, targets, cfg: TrainConfig
) -> tuple[DistillHead, list]:
    """Mini-batch SGD on the L1 loss; returns the head and a per-epoch trace.

    Deterministic given cfg.seed; the trace holds the full-data loss with
    the initial value first.
    """
    raws = np.asarray(raws, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(raws) == 0 or len(raws) != len(targets):
        raise ValueError("raws and targets must be non-empty and aligned")
    weight = h.weight.copy()
    bias = h.bias.copy()
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.learning_rate
    decay_at = set(int(e) for e in cfg.lr_decay_epochs)
    head = DistillHead(weight=weight, bias=bias)
    trace = [l1_distill_loss(head, raws, targets)]
    n = len(raws)
    for epoch in range(1, cfg.epochs + 1):
        if epoch in decay_at:
            lr *= 0.1
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            dw, db = distill_grad(head, raws[batch], targets[batch])
            head = DistillHead(weight=head.weight - lr * dw, bias=head.bias - lr * db)
        trace.append(l1_distill_loss(head, raws, targets))
    return head, trace
