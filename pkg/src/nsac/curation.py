"""Hybrid top-K key selection with square-root block partitioning.

Dense attention scores every query against every key.  Here keys are split
into contiguous blocks of size ceil(sqrt(n)); a query is first scored against
block centroids (mean key per block), blocks open in descending centroid
score until the candidate pool holds at least max(K, ceil(sqrt(n))) keys, and
fine-grained dot products run only inside that pool.  Per query this costs
O(sqrt(n)) centroid dots plus O(sqrt(n) + K) fine dots instead of O(n).

Selection is hard and non-differentiable: everything in this module works on
plain arrays, and gradients later flow only through the selected pairs.
All ties (equal centroid scores, equal fine scores) break toward the lower
index so selection is a total order and therefore reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GraphError


def _data(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


@dataclass(frozen=True)
class CuratedPairs:
    """Result of top-K selection for a batch of queries.

    Attributes
    ----------
    indices : numpy.ndarray
        Integer key indices, shape ``(n_queries, K)``, ascending per query.
    pairs : numpy.ndarray
        Concatenated ``[q; k]`` vectors, shape ``(n_queries, K, 2 d_head)``.
    pool_sizes : numpy.ndarray
        Candidate pool size per query (the number of fine-grained dot
        products the selection logically requires).
    n_fine_dots : int
        Fine-grained dot products actually evaluated per query, including
        padding waste in the vectorized path.
    """

    indices: np.ndarray
    pairs: np.ndarray
    pool_sizes: np.ndarray
    n_fine_dots: int


def partition_blocks(n: int) -> list[range]:
    """Split ``[0, n)`` into contiguous blocks of size ceil(sqrt(n))."""
    if n < 1:
        raise DomainError(f"cannot partition {n} keys")
    size = math.isqrt(n)
    if size * size < n:
        size += 1
    return [range(lo, min(lo + size, n)) for lo in range(0, n, size)]


def score_blocks(q, keys, blocks) -> np.ndarray:
    """Dot each query against mean-key centroids, one score per block."""
    q = _data(q)
    keys = _data(keys)
    scores = np.empty(len(blocks))
    for i, blk in enumerate(blocks):
        if len(blk) == 0:
            raise GraphError(f"block {i} is empty")
        centroid = keys[blk.start : blk.stop].mean(axis=0)
        scores[i] = q @ centroid
    return scores


def select_keys(queries, keys, top_k: int):
    """Vectorized two-stage selection over arbitrary leading batch axes.

    Parameters
    ----------
    queries : array, shape ``(..., n_queries, d_head)``
    keys : array, shape ``(..., n, d_head)``
    top_k : int

    Returns
    -------
    indices : int array, shape ``(..., n_queries, top_k)``, ascending per query
    pool_sizes : int array, shape ``(..., n_queries)``
    padded_pool : int
        Fine dots evaluated per query by this implementation.
    """
    q = _data(queries)
    k = _data(keys)
    n = k.shape[-2]
    if not 1 <= top_k <= n:
        raise DomainError(f"top_k must lie in [1, {n}], got {top_k}")

    blocks = partition_blocks(n)
    bs = len(blocks[0])
    nb = len(blocks)
    sizes = np.array([len(b) for b in blocks])
    target = max(top_k, bs)

    # centroids via zero-padding to nb*bs rows, then block means
    pad = nb * bs - n
    kp = np.concatenate([k, np.zeros(k.shape[:-2] + (pad, k.shape[-1]))], axis=-2) if pad else k
    centroids = kp.reshape(k.shape[:-2] + (nb, bs, k.shape[-1])).sum(axis=-2) / sizes[:, None]

    block_scores = q @ np.swapaxes(centroids, -1, -2)  # (..., nq, nb)
    order = np.argsort(-block_scores, axis=-1, kind="stable")
    counts = np.cumsum(sizes[order], axis=-1)
    n_open = np.argmax(counts >= target, axis=-1) + 1  # first prefix reaching the target

    rank = np.argsort(order, axis=-1)  # inverse permutation: rank of each block
    opened = rank < n_open[..., None]  # (..., nq, nb)

    block_of_key = np.repeat(np.arange(nb), bs)[:n]
    key_mask = opened[..., block_of_key]  # (..., nq, n)
    pool_sizes = key_mask.sum(axis=-1)
    padded_pool = int(pool_sizes.max())

    # candidates first (ascending index), non-candidates after; keep the first padded_pool
    cand = np.argsort(~key_mask, axis=-1, kind="stable")[..., :padded_pool]
    valid = np.arange(padded_pool) < pool_sizes[..., None]

    lead = np.ix_(*[np.arange(s) for s in k.shape[:-2]])
    lead = tuple(a.reshape(a.shape + (1,) * (cand.ndim - len(k.shape[:-2]))) for a in lead)
    k_cand = k[lead + (cand,)]  # (..., nq, padded_pool, d_head)
    dots = np.einsum("...qd,...qpd->...qp", q, k_cand)
    dots[~valid] = -np.inf

    # stable sort on -dots keeps ascending candidate index among ties
    best = np.argsort(-dots, axis=-1, kind="stable")[..., :top_k]
    chosen = np.take_along_axis(cand, best, axis=-1)
    chosen = np.sort(chosen, axis=-1)
    return chosen, pool_sizes, padded_pool


def curate(q, keys, top_k: int) -> CuratedPairs:
    """Select the top-K keys for one query or a stack of queries.

    ``q`` may be a single ``(d_head,)`` vector or ``(n_queries, d_head)``.
    """
    qa = _data(q)
    ka = _data(keys)
    single = qa.ndim == 1
    if single:
        qa = qa[None, :]
    idx, pools, padded = select_keys(qa, ka, top_k)
    pairs = np.concatenate(
        [np.broadcast_to(qa[:, None, :], idx.shape + qa.shape[-1:]), ka[idx]], axis=-1
    )
    if single:
        idx, pairs, pools = idx[0], pairs[0], pools[0]
    return CuratedPairs(indices=idx, pairs=pairs, pool_sizes=pools, n_fine_dots=padded)
