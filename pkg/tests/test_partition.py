import numpy as np
import pytest

from blockinv.errors import IndexOutOfRange, InvalidOrder
from blockinv.partition import (
    QuadIndex,
    make_partition,
    partition_from_sizes,
    quad_views,
)

# Explicit blocking table: order -> diagonal block sizes
TABLE_ROWS = {
    2: [2],
    3: [3],
    4: [2, 2],
    5: [2, 3],
    6: [3, 3],
    7: [3, 4],
    8: [2, 2, 2, 2],
    9: [2, 2, 2, 3],
    21: [2, 2, 2, 3, 3, 3, 3, 3],
}


class TestMakePartition:
    @pytest.mark.parametrize("order,sizes", sorted(TABLE_ROWS.items()))
    def test_published_rows(self, order, sizes):
        scheme = make_partition(order)
        assert list(scheme.sizes) == sizes
        assert scheme.n_blocks == len(sizes)

    def test_order_100(self):
        scheme = make_partition(100)
        assert scheme.n_blocks == 32
        assert list(scheme.sizes) == [3] * 28 + [4] * 4
        assert sum(scheme.sizes) == 100

    def test_order_10000(self):
        assert make_partition(10000).n_blocks == 4096

    @pytest.mark.parametrize("order", list(range(2, 200)) + [333, 1024, 2047, 4096])
    def test_structure(self, order):
        scheme = make_partition(order)
        n = scheme.n_blocks
        assert n & (n - 1) == 0
        assert 2 * n <= order <= 4 * n
        assert sum(scheme.sizes) == order
        assert all(s in (2, 3, 4) for s in scheme.sizes)
        assert list(scheme.sizes) == sorted(scheme.sizes)
        assert scheme.offsets[-1] == order

    def test_invalid(self):
        with pytest.raises(InvalidOrder):
            make_partition(1)


class TestFromSizes:
    def test_large_custom_sizes(self):
        scheme = partition_from_sizes([5, 9, 7, 11])
        assert scheme.m_n == 32
        assert scheme.n_blocks == 4

    def test_non_power_of_two_rejected(self):
        with pytest.raises(InvalidOrder):
            partition_from_sizes([2, 2, 2])

    def test_bad_size(self):
        with pytest.raises(InvalidOrder):
            partition_from_sizes([2, 0])


class TestQuadViews:
    def test_order_8_level1_pair0(self):
        scheme = make_partition(8)
        m = np.arange(64, dtype=float).reshape(8, 8)
        a, b, c, d = quad_views(scheme, QuadIndex(1, 0), m)
        assert np.array_equal(a, m[0:2, 0:2])
        assert np.array_equal(b, m[0:2, 2:4])
        assert np.array_equal(c, m[2:4, 0:2])
        assert np.array_equal(d, m[2:4, 2:4])

    def test_order_8_level2(self):
        scheme = make_partition(8)
        m = np.arange(64, dtype=float).reshape(8, 8)
        a, b, c, d = quad_views(scheme, QuadIndex(2, 0), m)
        assert np.array_equal(a, m[0:4, 0:4])
        assert np.array_equal(d, m[4:8, 4:8])

    def test_order_9_level1_pair1_mixed_sizes(self):
        # sizes [2, 2, 2, 3]: pair 1 covers blocks 2 and 3
        scheme = make_partition(9)
        m = np.arange(81, dtype=float).reshape(9, 9)
        a, b, c, d = quad_views(scheme, QuadIndex(1, 1), m)
        assert a.shape == (2, 2) and np.array_equal(a, m[4:6, 4:6])
        assert d.shape == (3, 3) and np.array_equal(d, m[6:9, 6:9])
        assert b.shape == (2, 3) and c.shape == (3, 2)

    def test_views_not_copies(self):
        scheme = make_partition(8)
        m = np.zeros((8, 8))
        a, _, _, _ = quad_views(scheme, QuadIndex(1, 0), m)
        a[0, 0] = 7.0
        assert m[0, 0] == 7.0

    @pytest.mark.parametrize("order", [8, 9, 21, 33, 100])
    def test_quads_tile_their_regions(self, order):
        scheme = make_partition(order)
        k = scheme.k
        for level in range(1, k + 1):
            cover = np.zeros((order, order), dtype=int)
            for pair in range(scheme.n_blocks // 2**level):
                q = QuadIndex(level, pair)
                first = pair * 2**level
                last = (pair + 1) * 2**level
                lo, hi = scheme.block_span(first, last)
                for view in quad_views(scheme, q, cover):
                    view += 1
                # the quad's four windows exactly tile its square region
                assert np.all(cover[lo:hi, lo:hi] == 1)
            # and nothing outside any quad region was touched twice
            assert cover.max() == 1

    def test_out_of_range(self):
        scheme = make_partition(8)
        m = np.zeros((8, 8))
        with pytest.raises(IndexOutOfRange):
            quad_views(scheme, QuadIndex(1, 2), m)
        with pytest.raises(IndexOutOfRange):
            quad_views(scheme, QuadIndex(3, 0), m)
        with pytest.raises(IndexOutOfRange):
            quad_views(scheme, QuadIndex(0, 0), m)
