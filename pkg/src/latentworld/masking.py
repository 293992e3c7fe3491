"""Multiblock masking over the (time, row, col) token grid.

Each mask is a union of random spatial rectangles spanning the full temporal
extent: block area fraction is drawn from the spatial scale range, the
height/width ratio from the aspect range, and every dropped spatial cell is
dropped at all time indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class Block:
    top: int
    left: int
    height: int
    width: int

    @property
    def cells(self) -> int:
        return self.height * self.width

    @property
    def aspect(self) -> float:
        return self.height / self.width


@dataclass
class MaskSpec:
    dropped: np.ndarray  # sorted token indices
    kept: np.ndarray  # sorted complement
    grid: tuple[int, int, int]  # (T', H', W')
    blocks: tuple[Block, ...] = ()

    def __post_init__(self):
        n = self.grid[0] * self.grid[1] * self.grid[2]
        if len(self.dropped) == 0 or len(self.kept) == 0:
            raise ContractError("mask must drop some tokens and keep some tokens")
        if len(self.dropped) + len(self.kept) != n:
            raise ContractError("dropped and kept must partition the token grid")
        union = np.union1d(self.dropped, self.kept)
        if len(union) != n or union[0] != 0 or union[-1] != n - 1:
            raise ContractError("dropped/kept must cover the grid exactly once")


def _sample_block(rng: np.random.Generator, gh: int, gw: int,
                  scale: tuple[float, float], aspect: tuple[float, float]) -> Block:
    s = gh * gw
    lo_cells = math.ceil(scale[0] * s)
    hi_cells = math.floor(scale[1] * s)
    for _ in range(1000):
        frac = rng.uniform(*scale)
        ratio = rng.uniform(*aspect)
        h = int(round(math.sqrt(frac * s * ratio)))
        w = int(round(math.sqrt(frac * s / ratio)))
        if h < 1 or w < 1 or h > gh or w > gw:
            continue
        if not (lo_cells <= h * w <= hi_cells):
            continue
        if not (aspect[0] <= h / w <= aspect[1]):
            continue
        top = int(rng.integers(0, gh - h + 1))
        left = int(rng.integers(0, gw - w + 1))
        return Block(top, left, h, w)
    raise ContractError(f"could not sample a valid mask block on a {gh}x{gw} grid")


def sample_multiblock_mask(rng: np.random.Generator, grid: tuple[int, int, int],
                           n_blocks: int = 2,
                           spatial_scale: tuple[float, float] = (0.15, 0.7),
                           aspect: tuple[float, float] = (0.75, 1.5)) -> MaskSpec:
    """Union of ``n_blocks`` spatial rectangles, dropped at every time index."""
    gt, gh, gw = grid
    if gt < 1 or gh < 1 or gw < 1 or gh * gw < 2:
        raise ContractError(f"mask grid {grid} is trivial")
    for _ in range(100):
        blocks = tuple(_sample_block(rng, gh, gw, spatial_scale, aspect) for _ in range(n_blocks))
        spatial = np.zeros((gh, gw), dtype=bool)
        for b in blocks:
            spatial[b.top:b.top + b.height, b.left:b.left + b.width] = True
        if spatial.all():
            continue  # degenerate union; resample
        cell_idx = np.flatnonzero(spatial.ravel())
        dropped = (np.arange(gt)[:, None] * (gh * gw) + cell_idx[None, :]).ravel()
        dropped.sort()
        kept = np.setdiff1d(np.arange(gt * gh * gw), dropped)
        return MaskSpec(dropped=dropped, kept=kept, grid=grid, blocks=blocks)
    raise ContractError("mask sampling kept degenerating; grid too small for the scale range")
