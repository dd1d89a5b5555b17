"""Attention-map normalization and informative-proposal selection.

A raw encoder attention grid is rescaled with sigmoid(grid * lambda) and
then shifted by max(1 - mean, 0), so the shifted mask has mean exactly 1
whenever the scaled mean is at most 1 (always true for sigmoid outputs).
A proposal is informative when the mean mask value over its box, sampled on
a bilinear lattice, is at least 1, i.e. the box covers above-average mass.

Box coordinates are mapped onto the low-resolution grid with the
align-corners convention: image pixel x lands at x * (W_grid - 1) / (W_img - 1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import BBox, Proposal, ROLE_INFORMATIVE


@dataclass(frozen=True)
class AttentionConfig:
    scale_lambda: float = 10.0
    sample_grid: int = 7

    def __post_init__(self):
        if not self.scale_lambda > 0:
            raise ValueError("scale_lambda must be positive")
        if self.sample_grid < 1:
            raise ValueError("sample_grid must be >= 1")


@dataclass
class AttentionMap:
    """Raw attention grid (rows x cols) for an image of the given size."""

    grid: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2 or self.grid.shape[0] < 1 or self.grid.shape[1] < 1:
            raise ValueError("attention grid must be a non-empty 2-d array")
        if not np.all(np.isfinite(self.grid)):
            raise ValueError("attention grid must be finite")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image size must be positive")


@dataclass
class NormalizedMask:
    """Sigmoid-scaled, shift-normalized attention mask.

    Every entry is non-negative and, when the scaled grid mean is <= 1, the
    mask mean is exactly 1, so thresholding region means at 1 selects
    above-average regions.
    """

    grid: np.ndarray
    shift: float
    image_width: int
    image_height: int


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def apply_adaptive_shift(scaled: np.ndarray) -> tuple[np.ndarray, float]:
    """Add max(1 - mean(scaled), 0) to every entry; returns (mask, shift)."""
    scaled = np.asarray(scaled, dtype=np.float64)
    shift = max(1.0 - float(scaled.mean()), 0.0)
    return scaled + shift, shift


def normalize_attention(a: AttentionMap, cfg: AttentionConfig) -> NormalizedMask:
    scaled = _sigmoid(a.grid * cfg.scale_lambda)
    mask, shift = apply_adaptive_shift(scaled)
    return NormalizedMask(
        grid=mask,
        shift=shift,
        image_width=a.image_width,
        image_height=a.image_height,
    )


def _to_grid(coord: float, image_extent: int, grid_extent: int) -> float:
    if image_extent <= 1 or grid_extent <= 1:
        return 0.0
    return coord * (grid_extent - 1) / (image_extent - 1)


def bilinear_sample(grid: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at grid coordinates, clamped to the grid."""
    h, w = grid.shape
    gx = np.clip(np.asarray(gx, dtype=np.float64), 0.0, w - 1.0)
    gy = np.clip(np.asarray(gy, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.clip(np.floor(gx).astype(int), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(gy).astype(int), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    u = gx - x0
    v = gy - y0
    return (
        grid[y0, x0] * (1 - u) * (1 - v)
        + grid[y0, x1] * u * (1 - v)
        + grid[y1, x0] * (1 - u) * v
        + grid[y1, x1] * u * v
    )


def _lattice(lo: float, hi: float, n: int) -> np.ndarray:
    if n == 1 or hi <= lo:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, n)


def region_mean(m: NormalizedMask, b: BBox, cfg: AttentionConfig) -> float:
    """Mean mask value over the box on a sample_grid x sample_grid lattice.

    A box that collapses to a point on the grid is sampled at that point.
    """
    h, w = m.grid.shape
    gx1 = _to_grid(b.x1, m.image_width, w)
    gx2 = _to_grid(b.x2, m.image_width, w)
    gy1 = _to_grid(b.y1, m.image_height, h)
    gy2 = _to_grid(b.y2, m.image_height, h)
    xs = _lattice(gx1, gx2, cfg.sample_grid)
    ys = _lattice(gy1, gy2, cfg.sample_grid)
    gx, gy = np.meshgrid(xs, ys)
    return float(bilinear_sample(m.grid, gx, gy).mean())


def select_informative(
    proposals: list[Proposal], m: NormalizedMask, cfg: AttentionConfig
) -> list[Proposal]:
    """Proposals whose region mean is >= 1, order preserved, retagged informative."""
    kept = []
    for p in proposals:
        if not (
            0.0 <= p.box.x1
            and 0.0 <= p.box.y1
            and p.box.x2 <= m.image_width
            and p.box.y2 <= m.image_height
        ):
            raise ValueError(
                f"proposal {p.proposal_id} outside image bounds "
                f"{m.image_width}x{m.image_height}"
            )
        if region_mean(m, p.box, cfg) >= 1.0:
            kept.append(replace(p, role=ROLE_INFORMATIVE))
    return kept
