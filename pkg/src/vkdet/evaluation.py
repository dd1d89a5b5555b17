"""Detection evaluation: per-class AP at IoU 0.5, split means, harmonic mean.

AP uses all-point interpolation (the precision envelope integrated over all
recall change points). Detections are sorted by descending score with a
deterministic tie-break so results never depend on input order. Each ground
truth box is matched at most once, to the highest-IoU unmatched box of its
image. Classes without ground truth get a null AP and are excluded from the
split means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import CategorySpace
from .geometry import BBox, iou


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    box: BBox
    class_name: str


@dataclass
class EvalReport:
    """Per-class AP plus split means; values in [0, 1], reported x100."""

    per_class_ap: dict
    map_base: float
    map_novel: float
    map_all: float
    hm: float


def _det_sort_key(d):
    b = d.box
    return (-d.score, d.image_id, b.x1, b.y1, b.x2, b.y2)


def match_detections(
    detections, gts: list[GroundTruthBox], iou_thresh: float = 0.5
) -> np.ndarray:
    """True/false positive flags for score-sorted detections of one class.

    Greedy: each detection takes the unmatched ground-truth box of its image
    with the highest IoU, counting as a true positive when that IoU reaches
    the threshold.
    """
    gt_by_image: dict[str, list[GroundTruthBox]] = {}
    for g in gts:
        gt_by_image.setdefault(g.image_id, []).append(g)
    used: set[int] = set()
    flags = np.zeros(len(detections), dtype=bool)
    for i, det in enumerate(sorted(detections, key=_det_sort_key)):
        best = 0.0
        best_gt = None
        for g in gt_by_image.get(det.image_id, ()):
            if id(g) in used:
                continue
            ov = iou(det.box, g.box)
            if ov > best:
                best = ov
                best_gt = g
        if best_gt is not None and best >= iou_thresh:
            flags[i] = True
            used.add(id(best_gt))
    return flags


def pr_points(
    detections, gts: list[GroundTruthBox], iou_thresh: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) arrays along the score-sorted detection list."""
    npos = len(gts)
    if npos == 0 or not detections:
        return np.zeros(0), np.zeros(0)
    tp = match_detections(detections, gts, iou_thresh).astype(np.float64)
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / npos
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
    return recall, precision


def _envelope_area(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(((mrec[idx] - mrec[idx - 1]) * mpre[idx]).sum())


def average_precision(detections, gts, iou_thresh: float = 0.5):
    """All-point interpolated AP for one class; None when there is no GT."""
    if len(gts) == 0:
        return None
    if not detections:
        return 0.0
    recall, precision = pr_points(detections, gts, iou_thresh)
    return _envelope_area(recall, precision)


def harmonic_mean(map_b: float, map_n: float) -> float:
    """2 * B * N / (B + N); 0 when both sides are 0."""
    if map_b < 0 or map_n < 0:
        raise ValueError("mAP values must be non-negative")
    if map_b + map_n == 0:
        return 0.0
    return 2.0 * map_b * map_n / (map_b + map_n)


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else 0.0


def evaluate(detections, gts, space: CategorySpace, iou_thresh: float = 0.5) -> EvalReport:
    """Per-class AP over base and novel classes, the three means, and HM."""
    dets_by_class: dict[str, list] = {}
    for d in detections:
        dets_by_class.setdefault(d.class_name, []).append(d)
    gts_by_class: dict[str, list[GroundTruthBox]] = {}
    for g in gts:
        gts_by_class.setdefault(g.class_name, []).append(g)

    per_class: dict[str, float | None] = {}
    for name in space.all_names:
        per_class[name] = average_precision(
            dets_by_class.get(name, []), gts_by_class.get(name, []), iou_thresh
        )

    base_aps = [per_class[c] for c in space.base if per_class[c] is not None]
    novel_aps = [per_class[c] for c in space.novel if per_class[c] is not None]
    all_aps = base_aps + novel_aps
    map_b = _mean(base_aps)
    map_n = _mean(novel_aps)
    return EvalReport(
        per_class_ap=per_class,
        map_base=map_b,
        map_novel=map_n,
        map_all=_mean(all_aps),
        hm=harmonic_mean(map_b, map_n),
    )


def format_report(report: EvalReport, space: CategorySpace) -> str:
    """Aligned text table: per-class AP then the N / B / A / HM summary row."""
    lines = []
    width = max([len(n) for n in space.all_names] + [8])
    lines.append(f"{'class':<{width}}  {'split':<5}  {'AP':>6}")
    lines.append("-" * (width + 16))
    for name in space.base + space.novel:
        split = "base" if name in space.base else "novel"
        ap = report.per_class_ap.get(name)
        ap_txt = "  null" if ap is None else f"{100.0 * ap:6.1f}"
        lines.append(f"{name:<{width}}  {split:<5}  {ap_txt}")
    lines.append("-" * (width + 16))
    lines.append(f"{'':<{width}}  {'N':>6} {'B':>6} {'A':>6} {'HM':>6}")
    lines.append(
        f"{'mAP':<{width}}  "
        f"{100.0 * report.map_novel:6.1f} {100.0 * report.map_base:6.1f} "
        f"{100.0 * report.map_all:6.1f} {100.0 * report.hm:6.1f}"
    )
    return "\n".join(lines) + "\n"
