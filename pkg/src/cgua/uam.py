"""Paired / unpaired memory banks and their contrastive losses.

Losses are evaluated for one query at a time and return the analytic
gradient with respect to the query. Bank rows are addressed by *bank index*:
row ``k`` of a :class:`PairedBank` is the ``k``-th paired cluster of the
assignment it was built from (``bank.cluster_ids[k]`` gives the assignment id).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ClusterAssignment, EmbeddingMatrix, l2_normalize, l2_normalize_rows
from .errors import (
    EmptyUnpairedBankError,
    InvalidTemperatureError,
    NoPairedClustersError,
    UnknownClusterError,
)


def _ro(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64 if np.asarray(a).dtype.kind == "f" else np.int64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PairedBank:
    """Cluster centroids plus every member's latest feature for hard mining.

    ``instances`` rows are grouped by cluster: rows ``starts[k]:starts[k+1]``
    belong to bank index ``k``.
    """

    centroids: np.ndarray
    instances: np.ndarray
    instance_ids: np.ndarray
    starts: np.ndarray
    cluster_ids: tuple[int, ...]
    cluster_of: dict = field(repr=False)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]

    def members(self, k: int) -> np.ndarray:
        return self.instances[self.starts[k]:self._end(k)]

    def _end(self, k: int) -> int:
        return int(self.starts[k + 1]) if k + 1 < len(self.starts) else self.instances.shape[0]

    def row_of_instance(self, instance_id: int) -> int:
        return self.cluster_of[int(instance_id)]


@dataclass(frozen=True)
class UnpairedBank:
    features: np.ndarray
    instance_ids: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class LossValue:
    value: float
    grad_q: np.ndarray
    probs: np.ndarray = field(repr=False, default=None)
    target: int = -1


def init_banks(assignment: ClusterAssignment, emb: EmbeddingMatrix) -> tuple[PairedBank, UnpairedBank]:
    if not assignment.paired_ids:
        raise NoPairedClustersError("clustering produced no cluster with two or more members")
    x = emb.data
    centroids, rows, ids, starts, cluster_of = [], [], [], [], {}
    for k, c in enumerate(assignment.paired_ids):
        mem = list(assignment.clusters[c])
        starts.append(len(ids))
        centroids.append(l2_normalize(x[mem].mean(axis=0)))
        rows.append(x[mem])
        ids.extend(mem)
        for j in mem:
            cluster_of[j] = k
    single = [assignment.clusters[c][0] for c in assignment.unpaired_ids]
    paired = PairedBank(
        centroids=_ro(np.stack(centroids)),
        instances=_ro(np.concatenate(rows)),
        instance_ids=_ro(np.asarray(ids, dtype=np.int64)),
        starts=_ro(np.asarray(starts, dtype=np.int64)),
        cluster_ids=tuple(assignment.paired_ids),
        cluster_of=cluster_of,
    )
    feats = x[single] if single else np.empty((0, x.shape[1]))
    unpaired = UnpairedBank(_ro(feats), _ro(np.asarray(single, dtype=np.int64)))
    return paired, unpaired


def _check_tau(tau_c: float) -> None:
    if not tau_c > 0:
        raise InvalidTemperatureError(f"temperature must be > 0, got {tau_c}")


def softmax_ce(q: np.ndarray, keys: np.ndarray, target: int, tau_c: float) -> LossValue:
    """``-log softmax(keys @ q / tau)[target]`` and its gradient in ``q``."""
    logits = keys @ q / tau_c
    shifted = logits - logits.max()
    e = np.exp(shifted)
    total = e.sum()
    probs = e / total
    rest = np.delete(e, target).sum()
    if shifted[target] == 0.0:
        # target holds the max: log1p keeps precision when the loss is tiny
        value = float(np.log1p(rest))
    else:
        value = float(np.log(total) - shifted[target])
    w = probs.copy()
    w[target] = -rest / total  # p_t - 1 without cancellation
    grad = keys.T @ w / tau_c
    return LossValue(value, grad, probs, int(target))


def _check_pos(bank: PairedBank, pos: int) -> None:
    if not 0 <= pos < bank.n_clusters:
        raise UnknownClusterError(f"bank index {pos} is not a paired cluster (have {bank.n_clusters})")


def cluster_loss(q, pos: int, bank: PairedBank, tau_c: float = 0.05) -> LossValue:
    _check_tau(tau_c)
    _check_pos(bank, pos)
    return softmax_ce(np.asarray(q, dtype=np.float64), bank.centroids, pos, tau_c)


def hard_keys(q, pos: int, bank: PairedBank) -> np.ndarray:
    """One key per cluster: the least similar member of the positive cluster,
    the most similar member of every other cluster."""
    sims = bank.instances @ q
    rows = np.empty(bank.n_clusters, dtype=np.int64)
    for k in range(bank.n_clusters):
        lo, end = int(bank.starts[k]), bank._end(k)
        seg = sims[lo:end]
        rows[k] = lo + (int(np.argmin(seg)) if k == pos else int(np.argmax(seg)))
    return bank.instances[rows]


def hard_loss(q, pos: int, bank: PairedBank, tau_c: float = 0.05) -> LossValue:
    _check_tau(tau_c)
    _check_pos(bank, pos)
    q = np.asarray(q, dtype=np.float64)
    return softmax_ce(q, hard_keys(q, pos, bank), pos, tau_c)


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def unpaired_loss(q, bank: UnpairedBank, tau_c: float = 0.05, rng=0) -> LossValue:
    """Contrast against the unpaired bank with a uniformly drawn positive row.

    ``rng`` is a seed or a ``numpy.random.Generator`` used only for that draw.
    """
    _check_tau(tau_c)
    if bank.n_clusters == 0:
        raise EmptyUnpairedBankError("unpaired bank is empty")
    target = int(_rng(rng).integers(bank.n_clusters))
    return softmax_ce(np.asarray(q, dtype=np.float64), bank.features, target, tau_c)


def paired_loss(q, pos: int, bank: PairedBank, tau_c: float = 0.05) -> LossValue:
    a = cluster_loss(q, pos, bank, tau_c)
    b = hard_loss(q, pos, bank, tau_c)
    return LossValue(a.value + b.value, a.grad_q + b.grad_q, target=pos)


def reid_loss(q, pos: int, paired: PairedBank, unpaired: UnpairedBank, tau_c: float = 0.05,
              lambda_reid: float = 0.8, rng=0) -> LossValue:
    """``lambda_reid * L_p + (1 - lambda_reid) * L_u``; ``L_u = 0`` on an empty unpaired bank."""
    if not 0.0 <= lambda_reid <= 1.0:
        raise ValueError(f"lambda_reid must lie in [0, 1], got {lambda_reid}")
    lp = paired_loss(q, pos, paired, tau_c)
    if unpaired.n_clusters == 0:
        return LossValue(lambda_reid * lp.value, lambda_reid * lp.grad_q, target=pos)
    lu = unpaired_loss(q, unpaired, tau_c, rng)
    value = lambda_reid * lp.value + (1.0 - lambda_reid) * lu.value
    grad = lambda_reid * lp.grad_q + (1.0 - lambda_reid) * lu.grad_q
    return LossValue(value, grad, target=pos)


def _check_m(m: float) -> None:
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {m}")


def _blend(old: np.ndarray, new: np.ndarray, m: float, renorm: bool) -> np.ndarray:
    if m == 1.0:  # renormalizing an unchanged row would only add rounding noise
        return np.array(old, copy=True)
    v = m * old + (1.0 - m) * new
    return l2_normalize_rows(v) if renorm else v


def update_paired_bank(bank: PairedBank, clusters, features, m: float = 0.1, instance_ids=None,
                       renorm: bool = True) -> PairedBank:
    """Momentum-update centroids toward the per-cluster mean of a batch.

    Clusters absent from the batch keep their centroid. When ``instance_ids``
    is given, those instances' stored features are replaced too.
    """
    _check_m(m)
    clusters = np.asarray(clusters, dtype=np.int64).reshape(-1)
    features = np.asarray(features, dtype=np.float64).reshape(clusters.size, -1)
    bad = clusters[(clusters < 0) | (clusters >= bank.n_clusters)]
    if bad.size:
        raise UnknownClusterError(f"bank index {int(bad[0])} is not a paired cluster")
    centroids = np.array(bank.centroids, copy=True)
    present = np.unique(clusters)
    if present.size:
        means = np.stack([features[clusters == k].mean(axis=0) for k in present])
        centroids[present] = _blend(centroids[present], means, m, renorm)
    instances = bank.instances
    if instance_ids is not None:
        instances = np.array(instances, copy=True)
        where = {int(i): r for r, i in enumerate(bank.instance_ids.tolist())}
        for i, f in zip(np.asarray(instance_ids).tolist(), features):
            if i not in where:
                raise UnknownClusterError(f"instance {i} is not stored in the paired bank")
            instances[where[i]] = f
    return PairedBank(_ro(centroids), _ro(instances), bank.instance_ids, bank.starts,
                      bank.cluster_ids, bank.cluster_of)


def update_unpaired_bank(bank: UnpairedBank, rows, features, m: float = 0.1, renorm: bool = True) -> UnpairedBank:
    _check_m(m)
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    features = np.asarray(features, dtype=np.float64).reshape(rows.size, -1)
    bad = rows[(rows < 0) | (rows >= bank.n_clusters)]
    if bad.size:
        raise UnknownClusterError(f"unpaired row {int(bad[0])} out of range")
    if np.unique(rows).size != rows.size:
        raise ValueError("each unpaired row may be updated once per call")
    feats = np.array(bank.features, copy=True)
    if rows.size:
        feats[rows] = _blend(feats[rows], features, m, renorm)
    return UnpairedBank(_ro(feats), bank.instance_ids)


# --- snapshots ---------------------------------------------------------------


def banks_to_json(paired: PairedBank, unpaired: UnpairedBank) -> dict:
    return {
        "paired": paired.centroids.tolist(),
        "unpaired": unpaired.features.tolist(),
        "cluster_of": {str(k): v for k, v in sorted(paired.cluster_of.items())},
        "paired_cluster_ids": list(paired.cluster_ids),
        "paired_instance_ids": paired.instance_ids.tolist(),
        "paired_instances": paired.instances.tolist(),
        "unpaired_instance_ids": unpaired.instance_ids.tolist(),
    }


def banks_from_json(obj: dict) -> tuple[PairedBank, UnpairedBank]:
    cluster_of = {int(k): int(v) for k, v in obj["cluster_of"].items()}
    centroids = np.asarray(obj["paired"], dtype=np.float64)
    d = centroids.shape[1]
    ids = np.asarray(obj.get("paired_instance_ids", sorted(cluster_of)), dtype=np.int64)
    rows = np.asarray(obj.get("paired_instances", []), dtype=np.float64).reshape(-1, d)
    owner = np.asarray([cluster_of[int(i)] for i in ids], dtype=np.int64)
    starts = np.searchsorted(owner, np.arange(centroids.shape[0]))
    n_clusters = centroids.shape[0]
    paired = PairedBank(_ro(centroids), _ro(rows), _ro(ids), _ro(starts.astype(np.int64)),
                        tuple(obj.get("paired_cluster_ids", range(n_clusters))), cluster_of)
    un = np.asarray(obj["unpaired"], dtype=np.float64).reshape(-1, d)
    un_ids = np.asarray(obj.get("unpaired_instance_ids", [-1] * un.shape[0]), dtype=np.int64)
    return paired, UnpairedBank(_ro(un), _ro(un_ids))


def save_banks(path, paired: PairedBank, unpaired: UnpairedBank) -> None:
    Path(path).write_text(json.dumps(banks_to_json(paired, unpaired)) + "\n")


def load_banks(path) -> tuple[PairedBank, UnpairedBank]:
    with open(path) as fh:
        return banks_from_json(json.load(fh))
