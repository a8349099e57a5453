"""Perspective algebra: hierarchy levels, ordering, arithmetic.

A perspective is a (level, count) pair describing a slice of the GPU
compute hierarchy. The algebra is parameterized by the machine shape
(threads per block, blocks per grid), threaded explicitly through every
call; there is no global state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

# Kernel launch shapes are small; anything past this is a checker error,
# never silent wraparound.
COUNT_LIMIT = 2 ** 31


class CountOverflow(Exception):
    """A perspective count left the checked range."""


class Level(IntEnum):
    THREAD = 0
    BLOCK = 1
    GRID = 2

    def short(self) -> str:
        return {Level.THREAD: "thread", Level.BLOCK: "block", Level.GRID: "grid"}[self]


LEVEL_BY_NAME = {"thread": Level.THREAD, "block": Level.BLOCK, "grid": Level.GRID}


@dataclass(frozen=True)
class Perspective:
    level: Level
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise CountOverflow(f"perspective count must be >= 1, got {self.count}")
        if self.count >= COUNT_LIMIT:
            raise CountOverflow(f"perspective count {self.count} out of range")

    def __str__(self) -> str:
        return f"{self.level.short()}[{self.count}]"


@dataclass(frozen=True)
class MachineParams:
    threads_per_block: int
    blocks_per_grid: int

    def __post_init__(self) -> None:
        if self.threads_per_block < 1 or self.blocks_per_grid < 1:
            raise ValueError("machine parameters must be >= 1")

    def __str__(self) -> str:
        return f"T={self.threads_per_block}, B={self.blocks_per_grid}"


GRID1 = Perspective(Level.GRID, 1)
BLOCK1 = Perspective(Level.BLOCK, 1)
THREAD1 = Perspective(Level.THREAD, 1)


def narrower_eq(p1: Perspective, p2: Perspective) -> bool:
    """p1 is narrower than or equal to p2.

    Holds when p1's level is strictly below p2's, or the levels agree and
    p1.count divides p2.count.
    """
    if p1.level < p2.level:
        return True
    return p1.level == p2.level and p2.count % p1.count == 0


def scalar_mul(q: int, p: Perspective) -> Perspective:
    """q copies of p: (level, q * count). Checked arithmetic."""
    if q < 1:
        raise CountOverflow(f"scalar multiplier must be >= 1, got {q}")
    return Perspective(p.level, q * p.count)


def _level_ratio(h1: Level, h2: Level, m: MachineParams) -> Optional[int]:
    """Units of h2 per unit of h1; None when h1 is below h2."""
    if h1 < h2:
        return None
    ratio = 1
    if h1 >= Level.BLOCK > h2 or (h1 == Level.GRID and h2 <= Level.THREAD):
        pass  # composed below
    if h1 == Level.GRID and h2 <= Level.BLOCK:
        ratio *= m.blocks_per_grid
    if h1 >= Level.BLOCK and h2 == Level.THREAD:
        ratio *= m.threads_per_block
    return ratio


def div(p1: Perspective, p2: Perspective, m: MachineParams) -> Optional[int]:
    """How many p2's fit in p1: ((h1/h2) * n1) / n2, or None.

    None when the levels are inverted or the quotient is not whole.
    """
    ratio = _level_ratio(p1.level, p2.level, m)
    if ratio is None:
        return None
    total = ratio * p1.count
    if total % p2.count != 0:
        return None
    return total // p2.count


def div_scalar(p: Perspective, c: int, m: MachineParams) -> Optional[int]:
    """Shorthand: (h, n) / c means (h, n) / (h, c)."""
    return div(p, Perspective(p.level, c), m)


def destruct(p: Perspective, m: MachineParams) -> Optional[Perspective]:
    """One step down the hierarchy; defined only on grid[1] and block[1]."""
    if p.count != 1:
        return None
    if p.level == Level.GRID:
        return Perspective(Level.BLOCK, m.blocks_per_grid)
    if p.level == Level.BLOCK:
        return Perspective(Level.THREAD, m.threads_per_block)
    return None


def align_to(n1: int, n2: int, n: int) -> bool:
    """Both shards of a split fit in n and keep every shard aligned."""
    if n1 < 1 or n2 < 1 or n < 1:
        return False
    return (n1 + n2 <= n) and (n % n1 == 0) and (n % n2 == 0) and ((n1 + n) % n2 == 0)


def size(p: Perspective, m: MachineParams) -> int:
    """Number of individual threads sharing the perspective."""
    if p.level == Level.THREAD:
        return p.count
    if p.level == Level.BLOCK:
        return p.count * m.threads_per_block
    return p.count * m.blocks_per_grid * m.threads_per_block
