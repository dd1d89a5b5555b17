"""Axis-aligned box arithmetic, aspect-ratio classification, and edge jitter.

Boxes use continuous pixel corner coordinates (x1, y1, x2, y2) with x2 > x1
and y2 > y1. Proposals are class-agnostic boxes tagged with an objectness
score and a pipeline role (raw, informative, augmented, pseudo).

The jitter augmenter targets proposals with extreme aspect ratios: a box is
"extreme" when log(max(w/h, h/w)) exceeds a configurable threshold. Each
extreme proposal yields two square augmentations centered on the original
centroid, one sized from the longer edge perturbed by the shorter
(side = l + sigma * s * eps) and one sized from the shorter edge perturbed
by the longer (side = s + sigma * l * eps), with eps a standard normal draw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

ASPECT_REGULAR = "regular"
ASPECT_EXTREME = "extreme"

ROLE_RAW = "raw"
ROLE_INFORMATIVE = "informative"
ROLE_AUGMENTED = "augmented"
ROLE_PSEUDO = "pseudo"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with strictly positive width and height."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"box coordinates must be finite, got {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box: {vals}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    @property
    def long_side(self) -> float:
        return max(self.width, self.height)

    @property
    def short_side(self) -> float:
        return min(self.width, self.height)

    @property
    def aspect_ratio(self) -> float:
        """max(w/h, h/w); always >= 1."""
        return self.long_side / self.short_side


@dataclass(frozen=True)
class JitterConfig:
    """Knobs for aspect classification and edge jitter.

    alpha_log_ratio is the threshold on log(aspect_ratio) beyond which a box
    counts as extreme (default log 2, i.e. ratio > 2). sigma_jitter scales
    the cross-edge perturbation. image_width/height bound the clipped output.
    """

    alpha_log_ratio: float = math.log(2.0)
    sigma_jitter: float = 0.15
    seed: int = 0
    image_width: int = 1_000_000_000
    image_height: int = 1_000_000_000

    def __post_init__(self):
        if not (self.alpha_log_ratio > 0 and math.isfinite(self.alpha_log_ratio)):
            raise ValueError("alpha_log_ratio must be positive and finite")
        if not (self.sigma_jitter >= 0 and math.isfinite(self.sigma_jitter)):
            raise ValueError("sigma_jitter must be non-negative and finite")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image bounds must be positive")


@dataclass(frozen=True)
class Proposal:
    """Class-agnostic candidate box with objectness and a pipeline role."""

    image_id: str
    box: BBox
    objectness: float
    proposal_id: str
    role: str = ROLE_RAW


ProposalSet = list


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; symmetric, in [0, 1]."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def classify_aspect(b: BBox, cfg: JitterConfig) -> str:
    """Label a box "extreme" iff log(aspect_ratio) > alpha, else "regular"."""
    if math.log(b.aspect_ratio) > cfg.alpha_log_ratio:
        return ASPECT_EXTREME
    return ASPECT_REGULAR


def clip_box(b: BBox, width: float, height: float) -> BBox:
    """Clip corners to [0, width] x [0, height]."""
    return BBox(
        max(b.x1, 0.0),
        max(b.y1, 0.0),
        min(b.x2, float(width)),
        min(b.y2, float(height)),
    )


def _square_at(cx: float, cy: float, side: float, cfg: JitterConfig) -> BBox:
    # Side floor of 1 px keeps boxes valid under large negative draws.
    side = max(side, 1.0)
    half = 0.5 * side
    box = BBox(cx - half, cy - half, cx + half, cy + half)
    return clip_box(box, cfg.image_width, cfg.image_height)


def jitter_longer(b: BBox, cfg: JitterConfig, eps: float) -> BBox:
    """Square box sized from the longer edge perturbed by the shorter edge."""
    side = b.long_side + cfg.sigma_jitter * b.short_side * eps
    cx, cy = b.center
    return _square_at(cx, cy, side, cfg)


def jitter_shorter(b: BBox, cfg: JitterConfig, eps: float) -> BBox:
    """Square box sized from the shorter edge perturbed by the longer edge."""
    side = b.short_side + cfg.sigma_jitter * b.long_side * eps
    cx, cy = b.center
    return _square_at(cx, cy, side, cfg)


def augment_proposals(proposals: list[Proposal], cfg: JitterConfig) -> list[Proposal]:
    """Originals plus one longer- and one shorter-jittered square per extreme box.

    Deterministic for a fixed cfg.seed: draws happen in proposal order.
    Original proposals keep their role tags; new boxes are tagged augmented
    and inherit the parent objectness.
    """
    rng = np.random.default_rng(cfg.seed)
    out = list(proposals)
    for p in proposals:
        if classify_aspect(p.box, cfg) != ASPECT_EXTREME:
            continue
        eps_long = float(rng.standard_normal())
        eps_short = float(rng.standard_normal())
        out.append(
            replace(
                p,
                box=jitter_longer(p.box, cfg, eps_long),
                proposal_id=p.proposal_id + ":jl",
                role=ROLE_AUGMENTED,
            )
        )
        out.append(
            replace(
                p,
                box=jitter_shorter(p.box, cfg, eps_short),
                proposal_id=p.proposal_id + ":js",
                role=ROLE_AUGMENTED,
            )
        )
    return out
