"""Fused-score inference: distillation, prototype, and objectness evidence.

For a proposal feature f and a novel class c the pipeline computes

* score_d: softmax probability of c's text embedding among all novel text
  embeddings at temperature tau;
* score_p: a weighted sum of softmax probabilities over the k unknown
  prototypes (background excluded from the denominator), where the weights
  come from matching c's text embedding to its closest cluster centers;
* score_cls = sqrt(score_d * score_p) and score_s = sqrt(score_l * score_cls)
  with score_l the proposal objectness.

Each proposal is assigned its argmax class; proposals whose background
probability (softmax over prototypes plus the background row) reaches the
background threshold are dropped when prototype evidence is in play; and
class-wise greedy NMS plus a per-image cap produce the final list.

Scores are probabilities by default. score_neglog=True reports the literal
negative-log values in the emitted fields instead, without changing
assignment or ranking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import softmax, softmax_prob
from .geometry import BBox, Proposal, iou
from .prototype import PrototypeBank
from .pseudolabel import ClusterModel

_NEGLOG_FLOOR = 1e-300

ALL_COMPONENTS = ("d", "p", "l")


@dataclass(frozen=True)
class InferenceConfig:
    tau: float = 0.01
    prototypes_per_class: int = 2
    nms_iou: float = 0.5
    max_detections_per_image: int = 100
    bg_threshold: float = 0.5
    score_neglog: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.prototypes_per_class < 1:
            raise ValueError("prototypes_per_class must be >= 1")
        if not 0 < self.nms_iou <= 1:
            raise ValueError("nms_iou must be in (0, 1]")
        if self.max_detections_per_image < 1:
            raise ValueError("max_detections_per_image must be >= 1")


@dataclass
class ScoreBreakdown:
    score_d: float
    score_p: float
    score_l: float
    score_cls: float
    score_s: float
    assigned_class: str
    matched_prototypes: list = field(default_factory=list)


@dataclass(frozen=True)
class Detection:
    """One scored box. `score` is the ranking key (probability polarity);
    `score_s` is the reported fused value and differs from `score` only
    under negative-log reporting."""

    image_id: str
    class_name: str
    box: BBox
    score: float
    score_d: float
    score_p: float
    score_l: float
    proposal_id: str = ""
    score_s: float = -1.0

    def __post_init__(self):
        if self.score_s < 0:
            object.__setattr__(self, "score_s", self.score)


def score_d(f_roi: np.ndarray, novel_rows: np.ndarray, class_names: list, c: str, tau: float) -> float:
    """Softmax probability of class c among the novel text embeddings."""
    if c not in class_names:
        raise KeyError(f"unknown novel class: {c!r}")
    return softmax_prob(f_roi, novel_rows, class_names.index(c), tau)


def match_prototypes(t_novel: np.ndarray, cm: ClusterModel, m: int) -> list:
    """Top-m cluster centers by similarity with softmax weights at tau=1.

    Returns (center_index, weight) pairs; ties resolve to the lowest index.
    """
    if not 1 <= m <= cm.k:
        raise ValueError(f"m must be in [1, {cm.k}]")
    sims = cm.centers @ np.asarray(t_novel, dtype=np.float64)
    order = np.argsort(-sims, kind="stable")[:m]
    weights = softmax(sims[order], 1.0)
    return [(int(i), float(w)) for i, w in zip(order, weights)]


def score_p(f_roi: np.ndarray, bank: PrototypeBank, matched: list, tau: float) -> float:
    """Weighted softmax probability mass on the matched unknown prototypes.

    The softmax runs over the k unknown prototype rows only; the background
    row never enters the denominator.
    """
    if not matched:
        raise ValueError("matched prototype list is empty")
    unknown_rows = bank.rows[: bank.k]
    probs = softmax(unknown_rows @ np.asarray(f_roi, dtype=np.float64), tau)
    return float(sum(w * probs[i] for i, w in matched))


def fuse(sd: float, sp: float, sl: float) -> tuple[float, float]:
    """(score_cls, score_s) geometric means; inputs must be non-negative."""
    if sd < 0 or sp < 0 or sl < 0:
        raise ValueError("scores must be non-negative")
    score_cls = math.sqrt(sd * sp)
    return score_cls, math.sqrt(sl * score_cls)


def background_probability(f_roi: np.ndarray, bank: PrototypeBank, tau: float) -> float:
    """Softmax probability of the background row over the full prototype bank."""
    return softmax_prob(f_roi, bank.rows, bank.background_index, tau)


def _neglog(p: float) -> float:
    return -math.log(max(p, _NEGLOG_FLOOR))


def nms(detections: list, iou_thresh: float) -> list:
    """Greedy same-class NMS; ties broken by proposal id then geometry."""
    ordered = sorted(
        detections,
        key=lambda d: (-d.score, d.proposal_id, d.box.x1, d.box.y1),
    )
    kept: list = []
    for d in ordered:
        if all(iou(d.box, k.box) <= iou_thresh for k in kept):
            kept.append(d)
    return kept


def _check_objectness(p: Proposal) -> float:
    if p.objectness is None or not math.isfinite(p.objectness):
        raise ValueError(f"proposal {p.proposal_id} is missing objectness")
    if not 0.0 <= p.objectness <= 1.0:
        raise ValueError(
            f"proposal {p.proposal_id} objectness {p.objectness} outside [0, 1]"
        )
    return float(p.objectness)


@dataclass
class ScoreTables:
    """Per-proposal class evidence: d and p are (N, C), bg is (N,)."""

    d: np.ndarray
    p: np.ndarray
    bg: np.ndarray


def score_tables(
    f_rois: np.ndarray,
    novel_rows: np.ndarray,
    novel_names: list,
    bank: PrototypeBank,
    cm: ClusterModel,
    cfg: InferenceConfig,
) -> ScoreTables:
    """Distillation, prototype, and background probabilities for all pairs.

    Matches the scalar score_d / score_p / background_probability functions
    entry for entry.
    """
    f_rois = np.asarray(f_rois, dtype=np.float64)
    if len(novel_names) != len(novel_rows):
        raise ValueError("novel names and rows must align")
    matched = [
        match_prototypes(novel_rows[j], cm, cfg.prototypes_per_class)
        for j in range(len(novel_names))
    ]
    n = len(f_rois)
    c = len(novel_names)
    d_tab = np.zeros((n, c))
    p_tab = np.zeros((n, c))
    bg = np.zeros(n)
    unknown_rows = bank.rows[: bank.k]
    for i, f in enumerate(f_rois):
        d_probs = softmax(novel_rows @ f, cfg.tau)
        proto_probs = softmax(unknown_rows @ f, cfg.tau)
        bg[i] = softmax_prob(f, bank.rows, bank.background_index, cfg.tau)
        for j in range(c):
            d_tab[i, j] = d_probs[j]
            p_tab[i, j] = sum(w * proto_probs[idx] for idx, w in matched[j])
    return ScoreTables(d=d_tab, p=p_tab, bg=bg)


def combine_components(
    tables: ScoreTables, objectness: np.ndarray, components=ALL_COMPONENTS
) -> np.ndarray:
    """(N, C) fused scores for a subset of {d, p, l}.

    The full set follows the two-stage chain sqrt(l * sqrt(d * p)); subsets
    drop the missing factor from the corresponding stage.
    """
    components = tuple(components)
    if not components or any(c not in ALL_COMPONENTS for c in components):
        raise ValueError(f"components must be a non-empty subset of {ALL_COMPONENTS}")
    has_d, has_p, has_l = ("d" in components), ("p" in components), ("l" in components)
    if has_d and has_p:
        cls_part = np.sqrt(tables.d * tables.p)
    elif has_d:
        cls_part = tables.d
    elif has_p:
        cls_part = tables.p
    else:
        cls_part = np.ones_like(tables.d)
    if has_l:
        return np.sqrt(np.asarray(objectness)[:, None] * cls_part)
    return cls_part


def assemble_detections(
    proposals: list[Proposal],
    tables: ScoreTables,
    novel_names: list,
    cfg: InferenceConfig,
    components=ALL_COMPONENTS,
) -> list[Detection]:
    """Assign argmax classes, suppress background, NMS, and cap one image.

    Background suppression uses the prototype bank, so it applies only when
    prototype evidence participates ("p" in components).
    """
    if not proposals:
        return []
    objectness = np.array([_check_objectness(p) for p in proposals])
    scores = combine_components(tables, objectness, components)
    use_bg = "p" in components
    neglog = cfg.score_neglog and set(components) == set(ALL_COMPONENTS)

    candidates: list[Detection] = []
    for i, p in enumerate(proposals):
        if use_bg and tables.bg[i] >= cfg.bg_threshold:
            continue
        j = int(scores[i].argmax())
        sd = float(tables.d[i, j])
        sp = float(tables.p[i, j])
        sl = float(objectness[i])
        rank = float(scores[i, j])
        if neglog:
            rep_d, rep_p = _neglog(sd), _neglog(sp)
            rep_s = math.sqrt(sl * math.sqrt(rep_d * rep_p))
        else:
            rep_d, rep_p, rep_s = sd, sp, rank
        candidates.append(
            Detection(
                image_id=p.image_id,
                class_name=novel_names[j],
                box=p.box,
                score=rank,
                score_d=rep_d,
                score_p=rep_p,
                score_l=sl,
                proposal_id=p.proposal_id,
                score_s=rep_s,
            )
        )

    kept: list[Detection] = []
    for c in novel_names:
        kept.extend(nms([d for d in candidates if d.class_name == c], cfg.nms_iou))
    kept.sort(key=lambda d: (-d.score, d.proposal_id))
    return kept[: cfg.max_detections_per_image]


def infer_image(
    proposals: list[Proposal],
    f_rois: np.ndarray,
    novel_rows: np.ndarray,
    novel_names: list,
    bank: PrototypeBank,
    cm: ClusterModel,
    cfg: InferenceConfig,
) -> list[Detection]:
    """Full-score inference (d, p, l) for one image's proposals."""
    if len(proposals) != len(f_rois):
        raise ValueError("proposals and features must align")
    if not proposals:
        return []
    tables = score_tables(f_rois, novel_rows, novel_names, bank, cm, cfg)
    return assemble_detections(proposals, tables, novel_names, cfg)


def infer_base_image(
    proposals: list[Proposal],
    f_rois: np.ndarray,
    base_rows: np.ndarray,
    base_names: list,
    tau: float,
    nms_iou: float,
    max_detections: int,
) -> list[Detection]:
    """Base-class detections from the frozen-text classifier bank.

    base_rows holds the frozen class rows followed by the trained background
    row. A proposal whose argmax is background is dropped; otherwise the
    classifier probability supplies both category evidence terms, so the
    fused score is sqrt(objectness * prob).
    """
    if not proposals:
        return []
    f_rois = np.asarray(f_rois, dtype=np.float64)
    candidates: list[Detection] = []
    for i, p in enumerate(proposals):
        sl = _check_objectness(p)
        probs = softmax(base_rows @ f_rois[i], tau)
        j = int(probs.argmax())
        if j >= len(base_names):  # background row
            continue
        prob = float(probs[j])
        _, score_s = fuse(prob, prob, sl)
        candidates.append(
            Detection(
                image_id=p.image_id,
                class_name=base_names[j],
                box=p.box,
                score=score_s,
                score_d=prob,
                score_p=prob,
                score_l=sl,
                proposal_id=p.proposal_id,
            )
        )
    kept: list[Detection] = []
    for c in base_names:
        kept.extend(nms([d for d in candidates if d.class_name == c], nms_iou))
    kept.sort(key=lambda d: (-d.score, d.proposal_id))
    return kept[:max_detections]
