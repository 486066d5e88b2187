"""Shared domain types, validation and vector primitives.

All arrays are float64. Types are frozen dataclasses whose arrays are marked
read-only on construction, so instances can be shared freely between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InconsistentCatalogError, ZeroVectorError

EPS = 1e-12
UNIT_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def l2_normalize(v) -> np.ndarray:
    """Scale ``v`` to unit Euclidean length."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if not norm > EPS:
        raise ZeroVectorError(f"cannot normalize vector with norm {norm:.3g}")
    return v / norm


def l2_normalize_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    bad = np.flatnonzero(~(norms[:, 0] > EPS))
    if bad.size:
        raise ZeroVectorError(f"row {int(bad[0])} has norm {float(norms[bad[0], 0]):.3g}")
    return x / norms


@dataclass(frozen=True)
class EmbeddingMatrix:
    """N unit-norm feature rows, one per person instance."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {data.shape}")
        n, d = data.shape
        if n < 1 or d < 2:
            raise ValueError(f"need n >= 1 and d >= 2, got n={n}, d={d}")
        if not np.all(np.isfinite(data)):
            raise ValueError("embedding matrix contains non-finite values")
        norms = np.linalg.norm(data, axis=1)
        off = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
        if off.size:
            i = int(off[0])
            raise ValueError(f"row {i} has norm {norms[i]:.9f}, expected 1")
        object.__setattr__(self, "data", _frozen(data))

    @classmethod
    def from_raw(cls, x) -> "EmbeddingMatrix":
        """Build from arbitrary (nonzero) rows, normalizing each one."""
        return cls(l2_normalize_rows(x))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n


@dataclass(frozen=True)
class SceneCatalog:
    """Which scene every instance was cropped from.

    ``image_of[j]`` is the scene of instance ``j``; ``members[s]`` lists the
    instances of scene ``s``. ``boxes`` is either ``None`` or an ``(N, 4)``
    array of ``x1, y1, x2, y2`` pixel boxes. Construction does not validate;
    call :func:`validate_catalog`.
    """

    image_of: np.ndarray
    members: tuple[tuple[int, ...], ...]
    boxes: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "image_of", _frozen(np.asarray(self.image_of, dtype=np.int64)))
        object.__setattr__(self, "members", tuple(tuple(int(i) for i in m) for m in self.members))
        if self.boxes is not None:
            object.__setattr__(self, "boxes", _frozen(np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)))

    @classmethod
    def from_image_of(cls, image_of: Sequence[int], n_scenes: int | None = None, boxes=None) -> "SceneCatalog":
        image_of = np.asarray(image_of, dtype=np.int64)
        m = int(image_of.max()) + 1 if n_scenes is None else int(n_scenes)
        members: list[list[int]] = [[] for _ in range(m)]
        for j, s in enumerate(image_of.tolist()):
            members[s].append(j)
        return cls(image_of, tuple(tuple(x) for x in members), boxes)

    @property
    def n(self) -> int:
        return int(self.image_of.shape[0])

    @property
    def n_scenes(self) -> int:
        return len(self.members)


def validate_catalog(catalog: SceneCatalog, n: int) -> None:
    """Raise :class:`InconsistentCatalogError` naming the first broken rule."""
    image_of = catalog.image_of
    if image_of.ndim != 1 or image_of.shape[0] != n:
        raise InconsistentCatalogError(f"image_of has length {image_of.shape[0]}, expected {n}")
    m = catalog.n_scenes
    if n and (image_of.min() < 0 or image_of.max() >= m):
        raise InconsistentCatalogError(f"scene index out of range [0, {m})")
    seen = np.zeros(n, dtype=bool)
    total = 0
    for s, mem in enumerate(catalog.members):
        for j in mem:
            if j < 0 or j >= n:
                raise InconsistentCatalogError(f"scene {s} lists instance {j} outside [0, {n})")
            if seen[j]:
                raise InconsistentCatalogError(f"instance {j} listed in more than one scene (overlap)")
            seen[j] = True
            if image_of[j] != s:
                raise InconsistentCatalogError(
                    f"incidence mismatch: scene {s} lists instance {j} but image_of[{j}] = {image_of[j]}"
                )
            total += 1
    if total != n:
        missing = int(np.flatnonzero(~seen)[0])
        raise InconsistentCatalogError(f"instance {missing} is not listed in any scene (cover)")
    if catalog.boxes is not None:
        boxes = catalog.boxes
        if boxes.shape[0] != n:
            raise InconsistentCatalogError(f"{boxes.shape[0]} boxes for {n} instances")
        bad = np.flatnonzero((boxes[:, 0] >= boxes[:, 2]) | (boxes[:, 1] >= boxes[:, 3]))
        if bad.size:
            raise InconsistentCatalogError(f"box {int(bad[0])} is degenerate: {boxes[bad[0]].tolist()}")


@dataclass(frozen=True)
class ClusterAssignment:
    """Pseudo labels: every instance belongs to exactly one cluster."""

    label_of: np.ndarray
    clusters: tuple[tuple[int, ...], ...] = field(repr=False)
    paired_ids: tuple[int, ...]
    unpaired_ids: tuple[int, ...]

    @classmethod
    def from_labels(cls, labels: Iterable[int]) -> "ClusterAssignment":
        """Relabel so cluster ids follow the order of each cluster's smallest member."""
        labels = np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels, dtype=np.int64)
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        order = np.argsort(first, kind="stable")
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        label_of = rank[inverse.reshape(-1)]
        clusters: list[list[int]] = [[] for _ in range(order.size)]
        for j, c in enumerate(label_of.tolist()):
            clusters[c].append(j)
        paired = tuple(c for c, mem in enumerate(clusters) if len(mem) >= 2)
        unpaired = tuple(c for c, mem in enumerate(clusters) if len(mem) == 1)
        return cls(_frozen(label_of), tuple(tuple(m) for m in clusters), paired, unpaired)

    @property
    def n(self) -> int:
        return int(self.label_of.shape[0])

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def scene_violations(assignment: ClusterAssignment, catalog: SceneCatalog) -> int:
    """Count clusters holding two or more instances of one scene."""
    bad = 0
    for mem in assignment.clusters:
        scenes = catalog.image_of[list(mem)]
        if np.unique(scenes).size != scenes.size:
            bad += 1
    return bad


# --- serialization -----------------------------------------------------------


def write_embeddings_jsonl(path, emb, ids=None, boxes=None) -> None:
    data = emb.data if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
    ids = range(data.shape[0]) if ids is None else ids
    with open(path, "w") as fh:
        for k, (i, row) in enumerate(zip(ids, data)):
            rec = {"id": int(i), "vec": row.tolist()}
            if boxes is not None:
                rec["box"] = np.asarray(boxes[k], dtype=np.float64).tolist()
            fh.write(json.dumps(rec) + "\n")


def read_embeddings_jsonl(path, normalize: bool = False):
    """Read ``{"id", "vec"[, "box"]}`` lines.

    Returns ``(ids, matrix, boxes)``; ``boxes`` is ``None`` unless every line
    carries one. With ``normalize`` the rows are L2-normalized first.
    """
    ids, vecs, boxes = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                ids.append(int(rec["id"]))
                vecs.append([float(x) for x in rec["vec"]])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad embedding record ({exc})") from exc
            boxes.append(rec.get("box"))
    if not vecs:
        raise ValueError(f"{path}: no embeddings")
    x = np.asarray(vecs, dtype=np.float64)
    emb = EmbeddingMatrix.from_raw(x) if normalize else EmbeddingMatrix(x)
    box_arr = None if any(b is None for b in boxes) else np.asarray(boxes, dtype=np.float64)
    return np.asarray(ids, dtype=np.int64), emb, box_arr


def catalog_to_json(catalog: SceneCatalog) -> dict:
    scenes = []
    for s, mem in enumerate(catalog.members):
        rec = {"id": s, "instances": list(mem)}
        if catalog.boxes is not None:
            rec["boxes"] = [catalog.boxes[j].tolist() for j in mem]
        scenes.append(rec)
    return {"scenes": scenes}


def catalog_from_json(obj: dict, n: int | None = None) -> SceneCatalog:
    """Inverse of :func:`catalog_to_json`. Scene ids must be ``0..M-1``."""
    scenes = sorted(obj["scenes"], key=lambda s: int(s["id"]))
    ids = [int(s["id"]) for s in scenes]
    if ids != list(range(len(ids))):
        raise InconsistentCatalogError(f"scene ids must be 0..{len(ids) - 1}, got {ids}")
    total = sum(len(s["instances"]) for s in scenes) if n is None else n
    image_of = np.full(total, -1, dtype=np.int64)
    have_boxes = bool(scenes) and all("boxes" in s for s in scenes)
    boxes = np.zeros((total, 4)) if have_boxes else None
    for s in scenes:
        inst = [int(j) for j in s["instances"]]
        for k, j in enumerate(inst):
            if 0 <= j < total:
                image_of[j] = int(s["id"])
                if boxes is not None:
                    boxes[j] = s["boxes"][k]
    catalog = SceneCatalog(image_of, tuple(tuple(int(j) for j in s["instances"]) for s in scenes), boxes)
    validate_catalog(catalog, total)
    return catalog


def write_catalog(path, catalog: SceneCatalog) -> None:
    Path(path).write_text(json.dumps(catalog_to_json(catalog), indent=1) + "\n")


def read_catalog(path, n: int | None = None) -> SceneCatalog:
    with open(path) as fh:
        return catalog_from_json(json.load(fh), n)
