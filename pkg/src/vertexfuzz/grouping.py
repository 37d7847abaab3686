"""Partitions of image coordinates into square spatial blocks.

A group is one rectangular block of pixels within one channel. Coordinates
are indexed row-major, channel-last: index = (row * width + col) * channels + ch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Block:
    channel: int
    row0: int
    row1: int  # exclusive
    col0: int
    col1: int  # exclusive

    def indices(self, shape: tuple[int, int, int]) -> np.ndarray:
        _, w, c = shape
        rows = np.arange(self.row0, self.row1)[:, None]
        cols = np.arange(self.col0, self.col1)[None, :]
        return ((rows * w + cols) * c + self.channel).reshape(-1)

    @property
    def size(self) -> int:
        return (self.row1 - self.row0) * (self.col1 - self.col0)


@dataclass(frozen=True)
class Grouping:
    blocks: tuple[Block, ...]
    side: int
    shape: tuple[int, int, int]

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def groups(self) -> list[np.ndarray]:
        return [b.indices(self.shape) for b in self.blocks]

    def is_partition(self) -> bool:
        n = self.shape[0] * self.shape[1] * self.shape[2]
        seen = np.zeros(n, dtype=int)
        for g in self.groups:
            np.add.at(seen, g, 1)
        return bool(np.all(seen == 1))


def initial_group(shape: tuple[int, int, int], k: int) -> Grouping:
    """Tile each channel with k x k blocks; edge blocks are smaller when k
    does not divide the image side."""
    if k < 1:
        raise ValueError("block side must be at least 1")
    h, w, c = shape
    blocks = [
        Block(ch, r, min(r + k, h), col, min(col + k, w))
        for ch in range(c)
        for r in range(0, h, k)
        for col in range(0, w, k)
    ]
    return Grouping(tuple(blocks), k, tuple(shape))


def _split(lo: int, hi: int, parts: int) -> list[tuple[int, int]]:
    # remainder goes to the leading parts, as numpy.array_split does
    sizes = [len(a) for a in np.array_split(np.arange(lo, hi), parts)]
    edges = [lo]
    for s in sizes:
        edges.append(edges[-1] + s)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def divide_group(grouping: Grouping, m: int) -> Grouping:
    """Split every block into an m x m grid of sub-blocks (empty ones dropped)."""
    if m < 2:
        raise ValueError("split factor must be at least 2")
    blocks = []
    for b in grouping.blocks:
        for r0, r1 in _split(b.row0, b.row1, m):
            for c0, c1 in _split(b.col0, b.col1, m):
                blocks.append(Block(b.channel, r0, r1, c0, c1))
    return Grouping(tuple(blocks), math.ceil(grouping.side / m), grouping.shape)


def singletons(n: int) -> list[np.ndarray]:
    return [np.array([i]) for i in range(n)]
