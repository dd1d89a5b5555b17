"""Attention normalization, bilinear region pooling, informative selection.

The region_mean oracle is the exact integral of the bilinear interpolant
over the box, computed in closed form per grid cell.
"""

import numpy as np
import pytest

from vkdet.attention import (
    AttentionConfig,
    AttentionMap,
    NormalizedMask,
    apply_adaptive_shift,
    bilinear_sample,
    normalize_attention,
    region_mean,
    select_informative,
)
from vkdet.geometry import BBox, Proposal


def exact_bilinear_box_mean(grid: np.ndarray, gx1, gy1, gx2, gy2) -> float:
    """Closed-form integral of the bilinear interpolant over a grid-space box."""
    h, w = grid.shape
    gx1, gx2 = np.clip([gx1, gx2], 0, w - 1)
    gy1, gy2 = np.clip([gy1, gy2], 0, h - 1)
    total = 0.0
    for i in range(h - 1):
        v1, v2 = max(gy1, i), min(gy2, i + 1)
        if v2 <= v1:
            continue
        for j in range(w - 1):
            u1, u2 = max(gx1, j), min(gx2, j + 1)
            if u2 <= u1:
                continue
            a, b = u1 - j, u2 - j
            c, d = v1 - i, v2 - i
            iu = (b * b - a * a) / 2.0
            i1u = (b - a) - iu
            iv = (d * d - c * c) / 2.0
            i1v = (d - c) - iv
            c00, c10 = grid[i, j], grid[i, j + 1]
            c01, c11 = grid[i + 1, j], grid[i + 1, j + 1]
            total += c00 * i1u * i1v + c10 * iu * i1v + c01 * i1u * iv + c11 * iu * iv
    area = (gx2 - gx1) * (gy2 - gy1)
    return total / area


class TestNormalize:
    def test_zero_map_gives_unit_mask(self):
        a = AttentionMap(grid=np.zeros((4, 6)), image_width=60, image_height=40)
        m = normalize_attention(a, AttentionConfig())
        assert m.shift == pytest.approx(0.5)
        np.testing.assert_allclose(m.grid, 1.0, atol=1e-12)

    def test_constant_map_gives_unit_mask(self):
        # sigmoid(lambda * a) = 0.9  ->  shift 0.1, mask 1.0 everywhere
        lam = 10.0
        a_val = np.log(9.0) / lam
        a = AttentionMap(grid=np.full((3, 3), a_val), image_width=30, image_height=30)
        m = normalize_attention(a, AttentionConfig(scale_lambda=lam))
        assert m.shift == pytest.approx(0.1)
        np.testing.assert_allclose(m.grid, 1.0, atol=1e-12)

    def test_injected_mean_above_one_clamps_shift(self):
        scaled = np.full((2, 2), 1.2)
        mask, shift = apply_adaptive_shift(scaled)
        assert shift == 0.0
        np.testing.assert_array_equal(mask, scaled)

    def test_mask_nonnegative_and_mean_one(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            grid = rng.normal(0, rng.uniform(0.05, 2.0), size=(rng.integers(1, 20), rng.integers(1, 20)))
            a = AttentionMap(grid=grid, image_width=100, image_height=100)
            m = normalize_attention(a, AttentionConfig(scale_lambda=rng.uniform(0.5, 20)))
            assert np.all(m.grid >= 0)
            assert m.grid.mean() == pytest.approx(1.0, abs=1e-6)


class TestRegionMean:
    def test_uniform_mask(self):
        m = NormalizedMask(grid=np.ones((5, 5)), shift=0.0, image_width=50, image_height=50)
        assert region_mean(m, BBox(3, 7, 31, 42), AttentionConfig()) == pytest.approx(1.0)

    def test_center_of_two_by_two(self):
        grid = np.array([[1.0, 3.0], [5.0, 7.0]])
        m = NormalizedMask(grid=grid, shift=0.0, image_width=11, image_height=11)
        cfg = AttentionConfig(sample_grid=1)
        # box centered on the image center maps to grid point (0.5, 0.5)
        assert region_mean(m, BBox(4, 4, 6, 6), cfg) == pytest.approx(4.0)

    def test_degenerate_box_single_point(self):
        grid = np.array([[0.0, 2.0], [4.0, 6.0]])
        m = NormalizedMask(grid=grid, shift=0.0, image_width=11, image_height=11)
        v = region_mean(m, BBox(0.0, 0.0, 1e-9, 1e-9), AttentionConfig(sample_grid=5))
        assert v == pytest.approx(0.0, abs=1e-6)

    def test_matches_exact_integral(self):
        rng = np.random.default_rng(3)
        cfg = AttentionConfig(sample_grid=64)
        for _ in range(25):
            h, w = rng.integers(4, 12), rng.integers(4, 12)
            grid = rng.uniform(0.0, 1.5, size=(h, w))
            img_w, img_h = 160, 120
            m = NormalizedMask(grid=grid, shift=0.0, image_width=img_w, image_height=img_h)
            x1, y1 = rng.uniform(0, img_w - 30), rng.uniform(0, img_h - 30)
            box = BBox(x1, y1, x1 + rng.uniform(10, 29), y1 + rng.uniform(10, 29))
            gx1 = box.x1 * (w - 1) / (img_w - 1)
            gx2 = box.x2 * (w - 1) / (img_w - 1)
            gy1 = box.y1 * (h - 1) / (img_h - 1)
            gy2 = box.y2 * (h - 1) / (img_h - 1)
            want = exact_bilinear_box_mean(grid, gx1, gy1, gx2, gy2)
            got = region_mean(m, box, cfg)
            assert got == pytest.approx(want, abs=1e-2)

    def test_full_image_approximates_grid_mean(self):
        rng = np.random.default_rng(4)
        cfg = AttentionConfig(sample_grid=32)
        for _ in range(20):
            grid = rng.normal(0, 0.4, size=(16, 16))
            a = AttentionMap(grid=grid, image_width=256, image_height=256)
            m = normalize_attention(a, AttentionConfig())
            full = BBox(0, 0, 255, 255)
            assert region_mean(m, full, cfg) == pytest.approx(m.grid.mean(), abs=1e-2)


def _props(boxes):
    return [
        Proposal(image_id="i", box=b, objectness=0.5, proposal_id=f"i#{k}")
        for k, b in enumerate(boxes)
    ]


class TestSelect:
    def test_uniform_mask_keeps_all(self):
        m = NormalizedMask(grid=np.ones((4, 4)), shift=0.0, image_width=40, image_height=40)
        props = _props([BBox(1, 1, 10, 10), BBox(20, 20, 39, 39)])
        kept = select_informative(props, m, AttentionConfig())
        assert [p.proposal_id for p in kept] == ["i#0", "i#1"]
        assert all(p.role == "informative" for p in kept)

    def test_bump_selects_only_covering_boxes(self):
        grid = np.full((9, 9), 0.9)
        grid[4, 4] = 2.0
        m = NormalizedMask(grid=grid, shift=0.0, image_width=90, image_height=90)
        cfg = AttentionConfig(sample_grid=9)
        on_bump = BBox(40, 40, 50, 50)  # centered on grid node (4, 4)
        off_bump = BBox(1, 1, 20, 20)
        assert region_mean(m, on_bump, cfg) >= 1.0
        assert region_mean(m, off_bump, cfg) < 1.0
        kept = select_informative(_props([on_bump, off_bump]), m, cfg)
        assert [p.box for p in kept] == [on_bump]

    def test_empty_input(self):
        m = NormalizedMask(grid=np.ones((2, 2)), shift=0.0, image_width=10, image_height=10)
        assert select_informative([], m, AttentionConfig()) == []

    def test_out_of_bounds_rejected(self):
        m = NormalizedMask(grid=np.ones((2, 2)), shift=0.0, image_width=10, image_height=10)
        with pytest.raises(ValueError):
            select_informative(_props([BBox(5, 5, 12, 8)]), m, AttentionConfig())

    def test_selection_monotone_in_region_mean(self):
        # moving a box toward higher mass never drops it once its mean clears 1
        grid = np.full((8, 8), 0.8)
        grid[:, 4:] = 1.4
        m = NormalizedMask(grid=grid, shift=0.0, image_width=80, image_height=80)
        cfg = AttentionConfig(sample_grid=16)
        means = [
            region_mean(m, BBox(x, 30, x + 20, 50), cfg) for x in (0, 20, 40, 55)
        ]
        assert means == sorted(means)
        kept_flags = [v >= 1.0 for v in means]
        assert kept_flags == sorted(kept_flags)


class TestBilinearSample:
    def test_grid_nodes_exact(self):
        rng = np.random.default_rng(5)
        grid = rng.normal(size=(6, 7))
        ys, xs = np.meshgrid(np.arange(6), np.arange(7), indexing="ij")
        np.testing.assert_allclose(bilinear_sample(grid, xs, ys), grid, rtol=1e-12)

    def test_clamps_outside(self):
        grid = np.array([[1.0, 2.0]])
        assert bilinear_sample(grid, np.array([5.0]), np.array([0.0]))[0] == 2.0
