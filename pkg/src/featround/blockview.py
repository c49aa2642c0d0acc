"""Contiguous coordinate partitions and the block-local oracles each machine
may evaluate: partial gradients, diagonal Hessian blocks and cross blocks."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .hardfunc import Instance, tri_rows


@dataclass(frozen=True)
class Partition:
    """Coordinates ``[0, dim)`` split into ``m`` ordered contiguous blocks.

    Blocks are 0-based half-open ranges; block ``j`` covers
    ``range(offsets[j], offsets[j + 1])``.
    """

    dim: int
    sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.sizes:
            raise ValueError("partition needs at least one block")
        if any(int(s) != s or s < 1 for s in self.sizes):
            raise ValueError(f"block sizes must be positive integers, got {list(self.sizes)}")
        if sum(self.sizes) != self.dim:
            raise ValueError(f"block sizes sum to {sum(self.sizes)}, expected dim={self.dim}")

    @property
    def m(self) -> int:
        return len(self.sizes)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return (0,) + tuple(int(x) for x in np.cumsum(self.sizes))

    @property
    def blocks(self) -> list[range]:
        o = self.offsets
        return [range(o[j], o[j + 1]) for j in range(self.m)]

    def block(self, j: int) -> range:
        self.check_machine(j)
        return range(self.offsets[j], self.offsets[j + 1])

    def check_machine(self, j: int):
        if not 0 <= j < self.m:
            raise ValueError(f"machine index {j} out of range for {self.m} machines")

    def owner(self, coord: int) -> int:
        return int(np.searchsorted(self.offsets, coord, side="right")) - 1

    def split(self, w) -> list[np.ndarray]:
        w = np.asarray(w, dtype=float)
        return [w[r.start:r.stop] for r in self.blocks]

    def join(self, parts: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def to_dict(self) -> dict:
        return {"dim": self.dim, "sizes": list(self.sizes)}


@dataclass(frozen=True)
class BlockVector:
    owner: int
    values: np.ndarray


def make_partition(dim: int, sizes: Sequence[int]) -> Partition:
    return Partition(int(dim), tuple(int(s) for s in sizes))


def equal_partition(dim: int, m: int) -> Partition:
    if m < 1 or dim % m:
        raise ValueError(f"cannot split dim={dim} into {m} equal blocks")
    return Partition(int(dim), (dim // m,) * m)


def _owned(part: Partition, v: BlockVector, j: int) -> np.ndarray:
    if v.owner != j:
        raise ValueError(f"vector owned by machine {v.owner}, expected {j}")
    values = np.asarray(v.values, dtype=float)
    if values.shape != (part.sizes[j],):
        raise ValueError(f"block {j} has size {part.sizes[j]}, got shape {values.shape}")
    return values


def block_gradient(inst: Instance, part: Partition, j: int, w) -> BlockVector:
    """Partial gradient of ``f`` with respect to block ``j`` at ``w``."""
    if part.dim != inst.dim:
        raise ValueError(f"partition dim {part.dim} != instance dim {inst.dim}")
    w = inst._check_point(w)
    r = part.block(j)
    g = tri_rows(inst.hessian_diag, inst.hessian_off, w, r.start, r.stop) - inst.linear[r.start:r.stop]
    return BlockVector(j, g)


def hessian_diag_apply(inst: Instance, part: Partition, j: int, v: BlockVector, diag=None) -> BlockVector:
    """``(f''_jj + Diag(diag)) v`` for the diagonal Hessian block of machine ``j``."""
    r = part.block(j)
    x = _owned(part, v, j)
    hd = inst.hessian_diag[r.start:r.stop]
    ho = inst.hessian_off[r.start:r.stop - 1]
    y = tri_rows(hd, ho, x, 0, len(x))
    if diag is not None:
        diag = np.asarray(diag, dtype=float)
        if diag.shape != x.shape:
            raise ValueError(f"diagonal shift has shape {diag.shape}, expected {x.shape}")
        y = y + diag * x
    return BlockVector(j, y)


def hessian_cross_apply(inst: Instance, part: Partition, j: int, i: int, v: BlockVector) -> BlockVector:
    """``f''_ji v_i``: the coupling of block ``i`` into the rows of block ``j``.

    Only neighbouring blocks couple on a tridiagonal Hessian, through a
    single corner entry.
    """
    part.check_machine(j)
    if i == j:
        raise ValueError("cross block needs i != j; use hessian_diag_apply")
    x = _owned(part, v, i)
    out = np.zeros(part.sizes[j])
    rj, ri = part.block(j), part.block(i)
    if i == j + 1:
        out[-1] = inst.hessian_off[rj.stop - 1] * x[0]
    elif i == j - 1:
        out[0] = inst.hessian_off[ri.stop - 1] * x[-1]
    return BlockVector(j, out)
