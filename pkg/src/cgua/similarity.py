"""Visual, context and hybrid similarities, and first-neighbor lookup.

Row blocks have a fixed size (:data:`BLOCK_ROWS`) whatever the thread count,
so each row is produced by the same floating-point computation and results
do not depend on parallelism.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingMatrix, SceneCatalog
from .errors import EmptySceneError, NegativeLambdaError

BLOCK_ROWS = 1024
NO_NEIGHBOR = -1

FAITHFUL = "faithful"
MASKED = "masked"
NEIGHBOR_MODES = (FAITHFUL, MASKED)


@dataclass(frozen=True)
class SimilarityMatrices:
    Q: np.ndarray
    K: np.ndarray
    Q_prime: np.ndarray
    lambda_sim: float


def _blocks(n: int):
    return [(lo, min(lo + BLOCK_ROWS, n)) for lo in range(0, n, BLOCK_ROWS)]


def _map_blocks(fn, n: int, threads: int = 1):
    spans = _blocks(n)
    if threads <= 1 or len(spans) == 1:
        return [fn(lo, hi) for lo, hi in spans]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: fn(*s), spans))


def visual_similarity(emb: EmbeddingMatrix, threads: int = 1) -> np.ndarray:
    """Cosine similarity of every pair of rows (rows are unit norm)."""
    x = emb.data
    out = np.empty((x.shape[0], x.shape[0]))

    def fill(lo, hi):
        out[lo:hi] = x[lo:hi] @ x.T

    _map_blocks(fill, x.shape[0], threads)
    return out


def _scene_order(catalog: SceneCatalog):
    sizes = np.array([len(m) for m in catalog.members])
    empty = np.flatnonzero(sizes == 0)
    if empty.size:
        raise EmptySceneError(f"scene {int(empty[0])} has no instances")
    order = np.concatenate([np.asarray(m, dtype=np.int64) for m in catalog.members])
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return order, starts


def _row_scene_max(q_rows: np.ndarray, order, starts) -> np.ndarray:
    # (rows, N) -> (rows, M): max over each scene's columns
    return np.maximum.reduceat(q_rows[:, order], starts, axis=1)


def context_similarity(Q: np.ndarray, catalog: SceneCatalog) -> np.ndarray:
    """Scene-to-scene similarity: the best-matching instance pair across two scenes."""
    order, starts = _scene_order(catalog)
    per_row = _row_scene_max(Q, order, starts)
    return np.maximum.reduceat(per_row[order], starts, axis=0)


def hybrid_similarity(Q: np.ndarray, K: np.ndarray, catalog: SceneCatalog, lambda_sim: float) -> np.ndarray:
    if lambda_sim < 0:
        raise NegativeLambdaError(f"lambda_sim must be >= 0, got {lambda_sim}")
    img = catalog.image_of
    return Q + lambda_sim * K[np.ix_(img, img)]


def _argmax_rows(rows: np.ndarray, row_ids: np.ndarray, img: np.ndarray, mode: str) -> np.ndarray:
    rows = np.array(rows, copy=True)
    local = np.arange(rows.shape[0])
    rows[local, row_ids] = -np.inf
    if mode == MASKED:
        rows[img[row_ids][:, None] == img[None, :]] = -np.inf
    kappa = np.argmax(rows, axis=1)  # first max wins -> smallest index on ties
    kappa[np.isneginf(rows[local, kappa])] = NO_NEIGHBOR
    return kappa.astype(np.int64)


def first_neighbors(Q_prime: np.ndarray, catalog: SceneCatalog, mode: str = FAITHFUL) -> np.ndarray:
    """Index of each instance's most similar *other* instance.

    In ``masked`` mode instances of the same scene are not candidates; an
    instance without any candidate gets :data:`NO_NEIGHBOR`.
    """
    if mode not in NEIGHBOR_MODES:
        raise ValueError(f"unknown neighbor mode {mode!r}")
    n = Q_prime.shape[0]
    if n < 2:
        raise ValueError("first neighbors need at least two instances")
    img = catalog.image_of
    parts = [_argmax_rows(Q_prime[lo:hi], np.arange(lo, hi), img, mode) for lo, hi in _blocks(n)]
    return np.concatenate(parts)


def similarity_matrices(emb: EmbeddingMatrix, catalog: SceneCatalog, lambda_sim: float, threads: int = 1) -> SimilarityMatrices:
    Q = visual_similarity(emb, threads)
    K = context_similarity(Q, catalog)
    return SimilarityMatrices(Q, K, hybrid_similarity(Q, K, catalog, lambda_sim), float(lambda_sim))


def blocked_first_neighbors(emb: EmbeddingMatrix, catalog: SceneCatalog, lambda_sim: float,
                            mode: str = FAITHFUL, threads: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """First neighbors without materializing any N x N matrix.

    Two passes over row blocks: the first reduces visual similarity to the
    scene-level matrix, the second forms hybrid rows and takes the argmax.
    Returns ``(kappa, K)``; rows match the dense path bit for bit.
    """
    if lambda_sim < 0:
        raise NegativeLambdaError(f"lambda_sim must be >= 0, got {lambda_sim}")
    if mode not in NEIGHBOR_MODES:
        raise ValueError(f"unknown neighbor mode {mode!r}")
    x = emb.data
    n = x.shape[0]
    if n < 2:
        raise ValueError("first neighbors need at least two instances")
    order, starts = _scene_order(catalog)
    img = catalog.image_of

    def scene_rows(lo, hi):
        return _row_scene_max(x[lo:hi] @ x.T, order, starts)

    per_row = np.concatenate(_map_blocks(scene_rows, n, threads))
    K = np.maximum.reduceat(per_row[order], starts, axis=0)

    def neighbors(lo, hi):
        rows = x[lo:hi] @ x.T + lambda_sim * K[np.ix_(img[lo:hi], img)]
        return _argmax_rows(rows, np.arange(lo, hi), img, mode)

    kappa = np.concatenate(_map_blocks(neighbors, n, threads))
    return kappa, K
