"""Block partitioning and two-stage top-K selection vs brute-force oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsac.autodiff import Rng
from nsac.curation import curate, partition_blocks, score_blocks, select_keys
from nsac.errors import DomainError, GraphError


def two_stage_oracle(q, keys, top_k):
    """Readable per-query reimplementation of the selection rule."""
    n = len(keys)
    blocks = partition_blocks(n)
    target = max(top_k, len(blocks[0]))
    centroid_scores = [(float(q @ keys[b.start : b.stop].mean(axis=0)), i) for i, b in enumerate(blocks)]
    # descending score, ascending block index on ties
    ranked = sorted(centroid_scores, key=lambda s: (-s[0], s[1]))
    pool = []
    for _, i in ranked:
        pool.extend(blocks[i])
        if len(pool) >= target:
            break
    pool.sort()
    fine = sorted(pool, key=lambda j: (-float(q @ keys[j]), j))
    return sorted(fine[:top_k]), len(pool)


class TestPartition:
    def test_perfect_square(self):
        assert partition_blocks(9) == [range(0, 3), range(3, 6), range(6, 9)]

    def test_ragged_tail(self):
        assert partition_blocks(10) == [range(0, 4), range(4, 8), range(8, 10)]

    def test_single_key(self):
        assert partition_blocks(1) == [range(0, 1)]

    def test_zero_rejected(self):
        with pytest.raises(DomainError):
            partition_blocks(0)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 10_000))
    def test_cover_and_disjoint(self, n):
        blocks = partition_blocks(n)
        size = blocks[0].stop - blocks[0].start
        assert size == math.isqrt(n) + (0 if math.isqrt(n) ** 2 == n else 1)
        flat = [i for b in blocks for i in b]
        assert flat == list(range(n))
        assert all(len(b) == size for b in blocks[:-1])
        assert 1 <= len(blocks[-1]) <= size


class TestScoreBlocks:
    def test_identical_keys_tie(self):
        keys = np.ones((9, 4))
        scores = score_blocks(np.array([1.0, 0.0, 1.0, 0.0]), keys, partition_blocks(9))
        assert np.all(scores == scores[0])

    def test_scaled_block_dominates(self):
        keys = np.zeros((9, 2))
        keys[3:6] = 10.0
        scores = score_blocks(np.array([1.0, 1.0]), keys, partition_blocks(9))
        assert np.argmax(scores) == 1

    def test_matches_brute_force(self):
        rng = Rng(4)
        q = rng.normal((4,))
        keys = rng.normal((16, 4))
        blocks = partition_blocks(16)
        scores = score_blocks(q, keys, blocks)
        expected = [q @ keys[b.start : b.stop].mean(axis=0) for b in blocks]
        np.testing.assert_allclose(scores, expected, atol=1e-12)

    def test_empty_block_is_structural_error(self):
        with pytest.raises(GraphError):
            score_blocks(np.zeros(2), np.zeros((4, 2)), [range(0, 2), range(2, 2)])


class TestCurate:
    def test_full_selection_is_dense(self):
        rng = Rng(6)
        q = rng.normal((4,))
        keys = rng.normal((7, 4))
        got = curate(q, keys, 7)
        np.testing.assert_array_equal(got.indices, np.arange(7))

    def test_dominant_key_wins(self):
        rng = Rng(8)
        q = rng.normal((4,))
        keys = rng.normal((20, 4)) * 0.01
        keys[13] = q * 1e6
        got = curate(q, keys, 1)
        brute = int(np.argmax(keys @ q))
        assert got.indices.tolist() == [brute] == [13]

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_two_stage_oracle(self, seed):
        rng = Rng(seed)
        keys = rng.normal((64, 4))
        for _ in range(5):
            q = rng.normal((4,))
            got = curate(q, keys, 8)
            want, pool = two_stage_oracle(q, keys, 8)
            assert got.indices.tolist() == want
            assert int(got.pool_sizes) == pool

    def test_ragged_sizes_match_oracle(self):
        rng = Rng(9)
        for n in (5, 10, 58, 150):
            keys = rng.normal((n, 3))
            q = rng.normal((3,))
            k = min(4, n)
            got = curate(q, keys, k)
            want, _ = two_stage_oracle(q, keys, k)
            assert got.indices.tolist() == want, n

    def test_all_ties_pick_lowest_indices(self):
        keys = np.ones((12, 3))
        got = curate(np.ones(3), keys, 5)
        assert got.indices.tolist() == [0, 1, 2, 3, 4]

    def test_deterministic(self):
        rng = Rng(10)
        q = rng.normal((4,))
        keys = rng.normal((30, 4))
        a = curate(q, keys, 6).indices
        b = curate(q, keys, 6).indices
        assert np.array_equal(a, b)

    def test_pairs_concatenate_query_and_key(self):
        rng = Rng(11)
        q = rng.normal((4,))
        keys = rng.normal((16, 4))
        got = curate(q, keys, 3)
        for row, j in enumerate(got.indices):
            np.testing.assert_array_equal(got.pairs[row, :4], q)
            np.testing.assert_array_equal(got.pairs[row, 4:], keys[j])

    def test_unique_and_sized(self):
        rng = Rng(12)
        got = curate(rng.normal((4,)), rng.normal((40, 4)), 10)
        assert len(set(got.indices.tolist())) == 10

    def test_k_out_of_range(self):
        keys = np.zeros((5, 2))
        with pytest.raises(DomainError):
            curate(np.zeros(2), keys, 6)
        with pytest.raises(DomainError):
            curate(np.zeros(2), keys, 0)


class TestBatchedSelection:
    def test_matches_single_query_path(self):
        rng = Rng(13)
        queries = rng.normal((2, 3, 9, 4))  # batch, heads, queries, d_head
        keys = rng.normal((2, 3, 26, 4))
        idx, pools, _ = select_keys(queries, keys, 5)
        for b in range(2):
            for h in range(3):
                for i in range(9):
                    got = curate(queries[b, h, i], keys[b, h], 5)
                    assert idx[b, h, i].tolist() == got.indices.tolist()
                    assert pools[b, h, i] == int(got.pool_sizes)

    def test_cost_bound(self):
        rng = Rng(14)
        for n in (10, 100, 1000, 2500):
            for k in (1, 4, 8):
                queries = rng.normal((12, 4))
                keys = rng.normal((n, 4))
                _, pools, padded = select_keys(queries, keys, k)
                bound = 4.0 * math.sqrt(n) * k
                assert padded <= bound, (n, k, padded)
                assert int(pools.max()) <= padded
