"""Context-guided clustering.

One pass of first-neighbor linking over the hybrid similarity, connected
components as clusters, then a filter that breaks up clusters holding two
instances of the same scene.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import ClusterAssignment, EmbeddingMatrix, SceneCatalog, l2_normalize
from .similarity import (
    FAITHFUL,
    NO_NEIGHBOR,
    blocked_first_neighbors,
    context_similarity,
    first_neighbors,
    hybrid_similarity,
    visual_similarity,
)

# above this many instances cgc_cluster switches to the blocked path
DENSE_LIMIT = 20_000


@dataclass(frozen=True)
class LinkGraph:
    n: int
    edges: np.ndarray  # (E, 2) int64, each row i < j, sorted, unique

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}


def build_adjacency(kappa, catalog: SceneCatalog) -> LinkGraph:
    """Link i and j when one is the other's first neighbor or both share one,
    and they come from different scenes."""
    kappa = np.asarray(kappa, dtype=np.int64)
    n = kappa.shape[0]
    img = catalog.image_of
    pairs = []

    has = np.flatnonzero(kappa != NO_NEIGHBOR)
    if has.size:
        pairs.append(np.stack([has, kappa[has]], axis=1))

    # instances sharing a first neighbor link pairwise
    order = has[np.argsort(kappa[has], kind="stable")]
    if order.size:
        keys = kappa[order]
        cuts = np.flatnonzero(np.diff(keys)) + 1
        for group in np.split(order, cuts):
            if group.size < 2:
                continue
            a, b = np.triu_indices(group.size, k=1)
            pairs.append(np.stack([group[a], group[b]], axis=1))

    if not pairs:
        return LinkGraph(n, np.empty((0, 2), dtype=np.int64))
    e = np.concatenate(pairs)
    e = e[(e[:, 0] != e[:, 1]) & (img[e[:, 0]] != img[e[:, 1]])]
    e = np.sort(e, axis=1)
    e = np.unique(e, axis=0) if e.size else e.reshape(0, 2)
    return LinkGraph(n, e.astype(np.int64))


def partition(graph: LinkGraph) -> ClusterAssignment:
    """Connected components; cluster ids ordered by smallest member."""
    e = graph.edges
    adj = coo_matrix((np.ones(e.shape[0]), (e[:, 0], e[:, 1])), shape=(graph.n, graph.n))
    _, labels = connected_components(adj, directed=False)
    return ClusterAssignment.from_labels(labels)


def _centroid(x: np.ndarray) -> np.ndarray:
    return l2_normalize(x.mean(axis=0))


def filter_clusters(assignment: ClusterAssignment, emb: EmbeddingMatrix, catalog: SceneCatalog) -> ClusterAssignment:
    """Within each cluster keep only the instance closest to the centroid from
    every scene that contributes more than one; the rest become singletons."""
    labels = np.array(assignment.label_of, copy=True)
    next_id = assignment.n_clusters
    img = catalog.image_of
    for c, mem in enumerate(assignment.clusters):
        if len(mem) < 2:
            continue
        mem = np.asarray(mem)
        scenes = img[mem]
        if np.unique(scenes).size == scenes.size:
            continue
        sims = emb.data[mem] @ _centroid(emb.data[mem])
        for s in np.unique(scenes):
            group = mem[scenes == s]
            if group.size < 2:
                continue
            gs = sims[scenes == s]
            keep = group[int(np.argmax(gs))]  # ties -> smallest index (members are sorted)
            for j in group:
                if j != keep:
                    labels[j] = next_id
                    next_id += 1
    return ClusterAssignment.from_labels(labels)


def cgc_cluster(emb: EmbeddingMatrix, catalog: SceneCatalog, lambda_sim: float = 0.1,
                mode: str = FAITHFUL, *, intra_filter: bool = True, threads: int = 1,
                dense_limit: int = DENSE_LIMIT) -> ClusterAssignment:
    """Full clustering pass. ``intra_filter=False`` skips the scene filter (ablation only)."""
    if emb.n != catalog.n:
        raise ValueError(f"{emb.n} embeddings but catalog covers {catalog.n} instances")
    if emb.n == 1:
        return ClusterAssignment.from_labels([0])
    if emb.n <= dense_limit:
        Q = visual_similarity(emb, threads)
        K = context_similarity(Q, catalog)
        kappa = first_neighbors(hybrid_similarity(Q, K, catalog, lambda_sim), catalog, mode)
    else:
        kappa, _ = blocked_first_neighbors(emb, catalog, lambda_sim, mode, threads)
    assignment = partition(build_adjacency(kappa, catalog))
    if intra_filter:
        assignment = filter_clusters(assignment, emb, catalog)
    return assignment


def split_paired_unpaired(assignment: ClusterAssignment) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return assignment.paired_ids, assignment.unpaired_ids
