"""Pseudo-label generation: base filtering, K-means, top-n selection.

Proposals that overlap annotated base objects are removed first (center
inside a base box, or IoU above a threshold), so clustering sees only
regions that may contain unknown categories. Remaining region embeddings are
clustered with seeded k-means++ / Lloyd iterations; each embedding is then
assigned to its nearest center and the n closest members per center become
pseudo-labels "unknown-1" .. "unknown-k".

Distances are Euclidean on unit vectors, which is monotone in cosine
similarity, so "nearest center" and "highest similarity" agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evaluation import GroundTruthBox
from .geometry import Proposal, iou


@dataclass
class ClusterModel:
    """k cluster centers with the final inertia and its per-iteration trace."""

    centers: np.ndarray
    k: int
    inertia: float
    inertia_history: list = field(default_factory=list)


@dataclass(frozen=True)
class PseudoLabel:
    proposal_id: str
    unknown_index: int  # 1-based cluster label
    distance: float


PseudoLabelSet = list


def partition_base(
    proposals: list[Proposal],
    gt_base: list[GroundTruthBox],
    iou_thresh: float = 0.5,
) -> tuple[list[Proposal], list[Proposal]]:
    """Split proposals into (kept, removed) against base annotations.

    A proposal is removed when its center lies inside any base box of the
    same image or its IoU with any such box exceeds iou_thresh.
    """
    by_image: dict[str, list[GroundTruthBox]] = {}
    for g in gt_base:
        by_image.setdefault(g.image_id, []).append(g)
    kept: list[Proposal] = []
    removed: list[Proposal] = []
    for p in proposals:
        cx, cy = p.box.center
        hit = False
        for g in by_image.get(p.image_id, ()):
            b = g.box
            if b.x1 <= cx <= b.x2 and b.y1 <= cy <= b.y2:
                hit = True
                break
            if iou(p.box, b) > iou_thresh:
                hit = True
                break
        (removed if hit else kept).append(p)
    return kept, removed


def filter_base(
    proposals: list[Proposal],
    gt_base: list[GroundTruthBox],
    iou_thresh: float = 0.5,
) -> list[Proposal]:
    """Proposals that survive the base-annotation filter."""
    return partition_base(proposals, gt_base, iou_thresh)[0]


def _kmeanspp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[int(rng.integers(n))]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        closest = np.minimum(closest, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _squared_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = (
        (x * x).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * (x @ centers.T)
    )
    return np.maximum(d2, 0.0)


def kmeans(
    embeddings,
    k: int,
    seed: int,
    max_iter: int = 100,
    tol: float = 1e-7,
) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding; deterministic per seed.

    Stops when the largest center movement falls below tol or after max_iter
    iterations. An emptied cluster is re-seeded to the point farthest from
    its assigned center.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("embeddings must be a 2-d array")
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} embeddings, got {n}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp_init(x, k, rng)
    history: list[float] = []
    for _ in range(max_iter):
        d2 = _squared_distances(x, centers)
        labels = d2.argmin(axis=1)
        point_cost = d2[np.arange(n), labels]
        history.append(float(point_cost.sum()))

        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        new_centers = centers.copy()
        nonempty = counts > 0
        new_centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not np.all(nonempty):
            cost = point_cost.copy()
            for j in np.flatnonzero(~nonempty):
                far = int(cost.argmax())
                new_centers[j] = x[far]
                cost[far] = -1.0  # each empty cluster grabs a distinct point

        movement = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if movement < tol:
            break

    d2 = _squared_distances(x, centers)
    inertia = float(d2[np.arange(n), d2.argmin(axis=1)].sum())
    history.append(inertia)
    return ClusterModel(centers=centers, k=k, inertia=inertia, inertia_history=history)


def assign_clusters(cm: ClusterModel, embeddings) -> tuple[np.ndarray, np.ndarray]:
    """(labels, distances): nearest center index and Euclidean distance per row."""
    x = np.asarray(embeddings, dtype=np.float64)
    d2 = _squared_distances(x, cm.centers)
    labels = d2.argmin(axis=1)
    return labels, np.sqrt(d2[np.arange(x.shape[0]), labels])


def select_top_n(
    cm: ClusterModel,
    embeddings,
    ids: list[str],
    n: int,
) -> list[PseudoLabel]:
    """Up to n nearest members per center, labeled unknown-1 .. unknown-k.

    Each embedding is first assigned exclusively to its nearest center, so a
    proposal never seeds two unknown classes. Output is grouped by class and
    sorted ascending by distance (ties broken by proposal id).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(embeddings, dtype=np.float64)
    if x.shape[0] != len(ids):
        raise ValueError("ids must align with embeddings")
    labels, dists = assign_clusters(cm, x)
    out: list[PseudoLabel] = []
    for j in range(cm.k):
        members = [
            (float(dists[i]), ids[i]) for i in np.flatnonzero(labels == j)
        ]
        members.sort()
        for dist, pid in members[:n]:
            out.append(PseudoLabel(proposal_id=pid, unknown_index=j + 1, distance=dist))
    return out
