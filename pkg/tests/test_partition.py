import numpy as np
import pytest

from regiondrosonet.errors import InvalidInputError
from regiondrosonet.imaging import resize
from regiondrosonet.partition import (
    PAPER_GRIDS,
    GridSpec,
    PartitionPlan,
    RegionRect,
    extract_regions,
    partition_count,
    plan_rects,
    region_bounds,
)


class TestGridSpec:
    @pytest.mark.parametrize("rows,cols", [(0, 1), (1, 0), (-2, 3)])
    def test_invalid(self, rows, cols):
        with pytest.raises(InvalidInputError):
            GridSpec(rows, cols)

    def test_label(self):
        assert str(GridSpec(2, 4)) == "2x4"

    def test_empty_plan_rejected(self):
        with pytest.raises(InvalidInputError):
            PartitionPlan(())

    def test_pairs_round_trip(self):
        pairs = [[2, 1], [1, 3]]
        assert PartitionPlan.from_pairs(pairs).to_pairs() == pairs


class TestPartitionCount:
    @pytest.mark.parametrize("pairs,expected", [
        ([(2, 1), (1, 3)], 5),
        ([(1, 1), (1, 4), (4, 1), (2, 4), (4, 2), (4, 4)], 41),
        ([(1, 1)], 1),
    ])
    def test_counts(self, pairs, expected):
        assert partition_count(PartitionPlan.from_pairs(pairs)) == expected

    def test_default_grids(self):
        assert PAPER_GRIDS.region_count == 41


class TestRegionBounds:
    def test_divisible(self):
        assert region_bounds(640, 480, GridSpec(4, 4), 0, 0) == RegionRect(0, 0, 160, 120)

    def test_floor_boundaries(self):
        xs = [region_bounds(10, 5, GridSpec(1, 3), 0, c) for c in range(3)]
        assert [(r.x0, r.x1) for r in xs] == [(0, 3), (3, 6), (6, 10)]

    def test_whole_image(self):
        assert region_bounds(37, 19, GridSpec(1, 1), 0, 0) == RegionRect(0, 0, 37, 19)

    def test_image_smaller_than_grid(self):
        with pytest.raises(InvalidInputError):
            region_bounds(3, 10, GridSpec(1, 4), 0, 0)

    def test_cell_outside_grid(self):
        with pytest.raises(InvalidInputError):
            region_bounds(10, 10, GridSpec(2, 2), 2, 0)

    def test_rects_are_read_only(self):
        rects = plan_rects(PAPER_GRIDS, 128, 64)
        assert rects.shape == (41, 4)
        with pytest.raises(ValueError):
            rects[0, 0] = 1


class TestExtractRegions:
    def test_whole_image_identity(self):
        img = np.random.default_rng(0).integers(0, 256, (32, 64), dtype=np.uint8)
        regions = extract_regions(img, PartitionPlan.from_pairs([(1, 1)]))
        assert len(regions) == 1
        np.testing.assert_array_equal(regions[0], img)

    def test_canonical_order(self):
        img = np.random.default_rng(1).integers(0, 256, (60, 90), dtype=np.uint8)
        regions = extract_regions(img, PartitionPlan.from_pairs([(2, 1), (1, 3)]))
        crops = [img[:30], img[30:], img[:, :30], img[:, 30:60], img[:, 60:]]
        assert len(regions) == 5
        for got, crop in zip(regions, crops):
            np.testing.assert_array_equal(got, resize(crop, 64, 32))

    def test_row_major_within_grid(self):
        labels = PartitionPlan.from_pairs([(2, 2)]).region_labels()
        assert [(r, c) for _, r, c in labels] == [(0, 0), (0, 1), (1, 0), (1, 1)]

    @pytest.mark.parametrize("w,h", [(64, 32), (101, 77), (4, 4)])
    def test_cells_tile_image(self, w, h):
        plan = PartitionPlan.from_pairs([(4, 4)])
        cover = np.zeros((h, w), np.int64)
        for x0, y0, x1, y1 in plan_rects(plan, w, h):
            cover[y0:y1, x0:x1] += 1
        assert (cover == 1).all()

    def test_output_sizes(self):
        img = np.zeros((64, 128), np.uint8)
        regions = extract_regions(img, PAPER_GRIDS)
        assert len(regions) == 41
        assert all(r.shape == (32, 64) for r in regions)

    def test_too_small_image(self):
        with pytest.raises(InvalidInputError):
            extract_regions(np.zeros((3, 3), np.uint8), PAPER_GRIDS)
