"""Diagonal-block partitioning of a square matrix.

The number of diagonal blocks is always a power of two,
``n_blocks = 2**(floor(log2(m_n)) - 1)``, and the default block sizes are
drawn from {2, 3, 4}.  Quads group ``2**level`` consecutive diagonal blocks
into one 2x2 arrangement (A, B, C, D) for the pivot-block formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, InvalidOrder


@dataclass(frozen=True)
class PartitionScheme:
    """Immutable description of the diagonal blocking of an order-m_n matrix."""

    m_n: int
    sizes: tuple[int, ...]
    offsets: tuple[int, ...]  # prefix sums, len(sizes) + 1 entries
    n_blocks: int

    @property
    def k(self) -> int:
        """log2 of the number of diagonal blocks."""
        return self.n_blocks.bit_length() - 1

    def block_span(self, first: int, last: int) -> tuple[int, int]:
        """Scalar [start, stop) window covering blocks [first, last)."""
        return self.offsets[first], self.offsets[last]

    def region(self, m: np.ndarray, r0: int, r1: int, c0: int, c1: int) -> np.ndarray:
        """View of ``m`` covering block rows [r0, r1) and cols [c0, c1)."""
        i0, i1 = self.block_span(r0, r1)
        j0, j1 = self.block_span(c0, c1)
        return m[i0:i1, j0:j1]


@dataclass(frozen=True)
class QuadIndex:
    """Quad ``pair`` at ``level``: spans diagonal blocks
    [pair * 2**level, (pair + 1) * 2**level), split evenly into A and D halves.
    """

    level: int
    pair: int


def _build(m_n: int, sizes: list[int]) -> PartitionScheme:
    offsets = [0]
    for s in sizes:
        offsets.append(offsets[-1] + s)
    return PartitionScheme(
        m_n=m_n, sizes=tuple(sizes), offsets=tuple(offsets), n_blocks=len(sizes)
    )


def make_partition(m_n: int) -> PartitionScheme:
    """Partition an order-m_n matrix into 2**(floor(log2 m_n) - 1) blocks.

    Sizes start at 2 everywhere; with r = m_n - 2 * n_blocks left over, the
    last r blocks become 3 when r fits, otherwise every block becomes 3 and
    the last (r - n_blocks) become 4.  Sizes are non-decreasing and always
    land in {2, 3, 4}.
    """
    if m_n < 2:
        raise InvalidOrder(f"order must be >= 2, got {m_n}")
    n_blocks = 2 ** max(int(math.log2(m_n)) - 1, 0)
    sizes = [2] * n_blocks
    r = m_n - 2 * n_blocks
    if r <= n_blocks:
        for i in range(n_blocks - r, n_blocks):
            sizes[i] = 3
    else:
        sizes = [3] * n_blocks
        for i in range(2 * n_blocks - r, n_blocks):
            sizes[i] = 4
    assert sum(sizes) == m_n
    return _build(m_n, sizes)


def partition_from_sizes(sizes) -> PartitionScheme:
    """Build a scheme from explicit diagonal block sizes.

    Sizes may be arbitrarily large; only the power-of-two block count and a
    consistent total are enforced.
    """
    sizes = [int(s) for s in sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise InvalidOrder(f"bad block sizes {sizes}")
    n = len(sizes)
    if n & (n - 1):
        raise InvalidOrder(f"number of diagonal blocks must be a power of two, got {n}")
    return _build(sum(sizes), sizes)


def validate_quad(scheme: PartitionScheme, q: QuadIndex) -> None:
    if q.level < 1 or 2**q.level > scheme.n_blocks:
        raise IndexOutOfRange(f"level {q.level} with {scheme.n_blocks} blocks")
    if not 0 <= q.pair < scheme.n_blocks // 2**q.level:
        raise IndexOutOfRange(f"pair {q.pair} at level {q.level}")


def quad_block_ranges(scheme: PartitionScheme, q: QuadIndex) -> tuple[int, int, int]:
    """(first, mid, last) diagonal-block indices of the quad's A|D split."""
    validate_quad(scheme, q)
    half = 2 ** (q.level - 1)
    first = q.pair * 2**q.level
    return first, first + half, first + 2 * half


def quad_views(
    scheme: PartitionScheme, q: QuadIndex, m: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(A, B, C, D) views of ``m`` for the quad, A and D on the diagonal."""
    if m.shape != (scheme.m_n, scheme.m_n):
        raise IndexOutOfRange(f"matrix {m.shape} does not match order {scheme.m_n}")
    first, mid, last = quad_block_ranges(scheme, q)
    a = scheme.region(m, first, mid, first, mid)
    b = scheme.region(m, first, mid, mid, last)
    c = scheme.region(m, mid, last, first, mid)
    d = scheme.region(m, mid, last, mid, last)
    return a, b, c, d
