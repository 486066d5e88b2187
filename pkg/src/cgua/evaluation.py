"""Retrieval and clustering metrics.

Queries without any relevant gallery item are dropped from both mAP and CMC
denominators. AP is the plain (non-interpolated) mean of precision at each
relevant rank.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ClusterAssignment, EmbeddingMatrix
from .errors import DegenerateBoxError, NoRelevantError

IOU_THRESHOLD = 0.5


def _rows(x) -> np.ndarray:
    return x.data if isinstance(x, EmbeddingMatrix) else np.atleast_2d(np.asarray(x, dtype=np.float64))


def iou(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for box in (a, b):
        if not (box[2] > box[0] and box[3] > box[1]):
            raise DegenerateBoxError(f"box {box.tolist()} has a non-positive side")
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


@dataclass(frozen=True)
class RetrievalResult:
    query: int
    ranked: np.ndarray  # gallery row indices, best first
    scores: np.ndarray


def retrieve(query_feat, gallery, query_id: int = 0) -> RetrievalResult:
    """Rank gallery rows by cosine similarity, ties broken by lower row index."""
    g = _rows(gallery)
    scores = g @ np.asarray(query_feat, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    return RetrievalResult(int(query_id), order, scores[order])


def average_precision(flags) -> float:
    flags = np.asarray(flags, dtype=bool)
    hits = np.flatnonzero(flags)
    if hits.size == 0:
        raise NoRelevantError("no relevant item in the ranking")
    return float(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))


def cmc_topk(flag_lists: Sequence, ks: Sequence[int]) -> dict[int, float]:
    """Fraction of queries with a relevant item within the top ``k`` ranks.

    ``flag_lists`` holds each query's relevance flags in ranked order.
    """
    ks = [int(k) for k in ks]
    if not ks:
        raise ValueError("ks must be non-empty")
    firsts = []
    for flags in flag_lists:
        hits = np.flatnonzero(np.asarray(flags, dtype=bool))
        if hits.size:
            firsts.append(hits[0])
    if not firsts:
        return {k: 0.0 for k in ks}
    firsts = np.asarray(firsts)
    return {k: float(np.mean(firsts < k)) for k in ks}


@dataclass
class MetricsReport:
    mAP: float
    cmc: dict[int, float]
    aps: list[float] = field(default_factory=list)
    n_queries: int = 0
    n_skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "mAP": self.mAP,
            "cmc": {str(k): v for k, v in sorted(self.cmc.items())},
            "per_query_ap": self.aps,
            "n_queries": self.n_queries,
            "n_skipped": self.n_skipped,
        }


def relevance_flags(result: RetrievalResult, relevant, gallery_boxes=None, gt_box=None) -> np.ndarray:
    """Flags in ranked order. With boxes, a relevant item must also overlap the
    ground-truth box with IoU >= 0.5."""
    rel = np.isin(result.ranked, np.asarray(list(relevant), dtype=np.int64))
    if gt_box is not None and gallery_boxes is not None:
        for r in np.flatnonzero(rel):
            if iou(gallery_boxes[result.ranked[r]], gt_box) < IOU_THRESHOLD:
                rel[r] = False
    return rel


def evaluate_retrieval(queries, gallery, relevance: Sequence, ks=(1, 5, 10),
                       gallery_boxes=None, gt_boxes=None) -> MetricsReport:
    """``relevance[i]`` lists the gallery rows that match query ``i``."""
    q = _rows(queries)
    flag_lists, aps, skipped = [], [], 0
    for i in range(q.shape[0]):
        res = retrieve(q[i], gallery, i)
        gt = None if gt_boxes is None else gt_boxes[i]
        flags = relevance_flags(res, relevance[i], gallery_boxes, gt)
        if not flags.any():
            skipped += 1
            continue
        aps.append(average_precision(flags))
        flag_lists.append(flags)
    mAP = float(np.mean(aps)) if aps else 0.0
    return MetricsReport(mAP, cmc_topk(flag_lists, ks), aps, len(aps), skipped)


def gallery_size_sweep(queries, gallery, relevance: Sequence, sizes: Sequence[int], seed: int = 0,
                       ks=(1,)) -> dict[int, MetricsReport]:
    """Re-evaluate with each query's gallery cut down to ``size`` rows: all of
    its relevant rows plus a seeded random sample of the others."""
    q = _rows(queries)
    g = _rows(gallery)
    out = {}
    for size in sizes:
        rng = np.random.default_rng([seed, int(size)])
        flag_lists, aps = [], []
        for i in range(q.shape[0]):
            rel = np.asarray(sorted(relevance[i]), dtype=np.int64)
            if rel.size == 0:
                continue
            others = np.setdiff1d(np.arange(g.shape[0]), rel)
            take = max(0, min(int(size) - rel.size, others.size))
            keep = np.sort(np.concatenate([rel, rng.choice(others, size=take, replace=False)]))
            res = retrieve(q[i], g[keep], i)
            flags = np.isin(keep[res.ranked], rel)
            aps.append(average_precision(flags))
            flag_lists.append(flags)
        out[int(size)] = MetricsReport(float(np.mean(aps)) if aps else 0.0, cmc_topk(flag_lists, ks), aps, len(aps))
    return out


def pairwise_f1(assignment, truth) -> tuple[float, float, float]:
    """Precision, recall and F1 of "same cluster" against "same identity" over
    all unordered pairs. A side with no positive pairs scores 1."""
    pred = assignment.label_of if isinstance(assignment, ClusterAssignment) else np.asarray(assignment)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth cover different instance sets")
    _, p_inv = np.unique(pred, return_inverse=True)
    _, t_inv = np.unique(truth, return_inverse=True)

    def pairs(counts):
        counts = counts.astype(np.int64)
        return int((counts * (counts - 1) // 2).sum())

    joint = np.unique(p_inv.reshape(-1) * (t_inv.max() + 1) + t_inv.reshape(-1), return_counts=True)[1]
    tp = pairs(joint)
    pp = pairs(np.bincount(p_inv.reshape(-1)))
    tt = pairs(np.bincount(t_inv.reshape(-1)))
    precision = tp / pp if pp else 1.0
    recall = tp / tt if tt else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return float(precision), float(recall), float(f1)
