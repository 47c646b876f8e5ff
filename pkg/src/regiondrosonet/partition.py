"""Heterogeneous grid partitioning of images into classifier-sized regions."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .imaging import INPUT_HEIGHT, INPUT_WIDTH, INPUT_SIZE, check_gray


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int

    def __post_init__(self):
        if int(self.rows) < 1 or int(self.cols) < 1:
            raise InvalidInputError(f"grid dimensions must be >= 1, got ({self.rows}, {self.cols})")

    @property
    def cells(self) -> int:
        return self.rows * self.cols

    def __str__(self) -> str:
        return f"{self.rows}x{self.cols}"


class RegionRect(NamedTuple):
    """Half-open pixel rectangle [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int


@dataclass(frozen=True)
class PartitionPlan:
    """Ordered grids; regions enumerate grid by grid, each row-major (left-to-right, top-to-bottom)."""

    grids: tuple[GridSpec, ...]

    def __post_init__(self):
        if not self.grids:
            raise InvalidInputError("a partition plan needs at least one grid")

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[int]]) -> "PartitionPlan":
        grids = []
        for pair in pairs:
            if len(pair) != 2:
                raise InvalidInputError(f"grid entries are [rows, cols] pairs, got {pair!r}")
            grids.append(GridSpec(int(pair[0]), int(pair[1])))
        return cls(tuple(grids))

    def to_pairs(self) -> list[list[int]]:
        return [[g.rows, g.cols] for g in self.grids]

    @property
    def region_count(self) -> int:
        return partition_count(self)

    def region_labels(self) -> list[tuple[GridSpec, int, int]]:
        """(grid, row, col) for every region in canonical order."""
        return [(g, r, c) for g in self.grids for r in range(g.rows) for c in range(g.cols)]


PAPER_GRIDS = PartitionPlan.from_pairs([(1, 1), (1, 4), (4, 1), (2, 4), (4, 2), (4, 4)])


def partition_count(plan: PartitionPlan) -> int:
    return sum(g.rows * g.cols for g in plan.grids)


def region_bounds(img_w: int, img_h: int, grid: GridSpec, row: int, col: int) -> RegionRect:
    """Floor-boundary cell rectangle; remainder pixels fall to the last row/column."""
    if img_w < grid.cols or img_h < grid.rows:
        raise InvalidInputError(f"image {img_w}x{img_h} is smaller than grid {grid}")
    if not (0 <= row < grid.rows and 0 <= col < grid.cols):
        raise InvalidInputError(f"cell ({row}, {col}) outside grid {grid}")
    return RegionRect(
        col * img_w // grid.cols,
        row * img_h // grid.rows,
        (col + 1) * img_w // grid.cols,
        (row + 1) * img_h // grid.rows,
    )


@lru_cache(maxsize=64)
def plan_rects(plan: PartitionPlan, img_w: int, img_h: int) -> np.ndarray:
    """All region rects for an image size as a read-only (P, 4) int64 array."""
    rects = np.array(
        [region_bounds(img_w, img_h, g, r, c) for g, r, c in plan.region_labels()], dtype=np.int64
    )
    rects.flags.writeable = False
    return rects


def region_pixels(img: np.ndarray, plan: PartitionPlan) -> np.ndarray:
    """Every region cropped, resized to 64x32 and flattened: a (P, 2048) uint8 matrix."""
    img = np.ascontiguousarray(check_gray(img))
    h, w = img.shape
    rects = plan_rects(plan, w, h)
    out = np.empty((rects.shape[0], INPUT_SIZE), np.uint8)
    _kernels.regions_to_rows(img, rects, INPUT_HEIGHT, INPUT_WIDTH, out)
    return out


def extract_regions(img: np.ndarray, plan: PartitionPlan) -> list[np.ndarray]:
    rows = region_pixels(img, plan)
    return [row.reshape(INPUT_HEIGHT, INPUT_WIDTH) for row in rows]
