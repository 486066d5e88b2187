"""Deterministic synthetic scenes with ground-truth identities.

A world has ``n_identities`` people seen ``sightings_per_identity`` times
each (at most once per scene) plus ``n_unpaired`` people seen exactly once.
Some identities travel in fixed companion pairs: every sighting of one is
placed in a scene together with a sighting of the other, which is the
scene-level signal the context similarity can pick up.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .core import SceneCatalog, l2_normalize_rows
from .errors import InfeasiblePackingError

_PACK_ATTEMPTS = 50
_BOX_W, _BOX_H, _BOX_GAP = 50.0, 120.0, 10.0


@dataclass(frozen=True)
class WorldConfig:
    n_identities: int = 20
    sightings_per_identity: int = 2
    n_unpaired: int = 10
    d_raw: int = 32
    noise_sigma: float = 0.3
    cotravel_prob: float = 0.8
    persons_per_scene: tuple[int, int] = (2, 4)
    seed: int = 0
    # None: unpaired prototypes are uniform like everyone else's. Otherwise
    # each is a perturbed copy of a random paired identity (a look-alike).
    lookalike_sigma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "persons_per_scene", tuple(int(v) for v in self.persons_per_scene))
        for name in ("n_identities", "sightings_per_identity", "n_unpaired", "seed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_raw < 2:
            raise ValueError("d_raw must be >= 2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.lookalike_sigma is not None and self.lookalike_sigma < 0:
            raise ValueError("lookalike_sigma must be >= 0")
        if not 0.0 <= self.cotravel_prob <= 1.0:
            raise ValueError("cotravel_prob must lie in [0, 1]")
        lo, hi = self.persons_per_scene
        if not 1 <= lo <= hi:
            raise ValueError(f"persons_per_scene must satisfy 1 <= lo <= hi, got {self.persons_per_scene}")

    @classmethod
    def standard(cls, **kw) -> "WorldConfig":
        """The reference benchmark world: 30 identities seen 3 times, 15 seen
        once, 256-d features with noise set so that the expected cosine
        between a sighting and its prototype is about 0.63."""
        d_raw = kw.get("d_raw", 256)
        base = dict(n_identities=30, sightings_per_identity=3, n_unpaired=15, d_raw=d_raw,
                    noise_sigma=float(np.sqrt(1.5 / d_raw)), cotravel_prob=0.9, persons_per_scene=(2, 4))
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["persons_per_scene"] = list(self.persons_per_scene)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WorldConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown world config keys: {sorted(unknown)}")
        return cls(**known)


@dataclass(frozen=True)
class World:
    raw_features: np.ndarray
    catalog: SceneCatalog
    true_identity: np.ndarray
    prototypes: np.ndarray = field(repr=False)
    companions: tuple[tuple[int, int], ...]
    config: WorldConfig

    @property
    def n(self) -> int:
        return self.raw_features.shape[0]

    @property
    def paired_identities(self) -> np.ndarray:
        return np.arange(self.config.n_identities)

    @property
    def unpaired_identities(self) -> np.ndarray:
        c = self.config
        return np.arange(c.n_identities, c.n_identities + c.n_unpaired)


def _sighting(prototype: np.ndarray, sigma: float, rng: np.random.Generator, count: int) -> np.ndarray:
    base = np.repeat(prototype[None, :], count, axis=0)
    if sigma > 0:
        base = base + rng.normal(0.0, sigma, size=base.shape)
    return l2_normalize_rows(base)


def _scene_sizes(total: int, lo: int, hi: int, rng: np.random.Generator) -> list[int]:
    sizes: list[int] = []
    while sum(sizes) < total:
        sizes.append(int(rng.integers(lo, hi + 1)))
    excess = sum(sizes) - total
    while excess > 0:
        shrinkable = [k for k, s in enumerate(sizes) if s > lo]
        if shrinkable:
            sizes[shrinkable[int(rng.integers(len(shrinkable)))]] -= 1
            excess -= 1
            continue
        droppable = [k for k, s in enumerate(sizes) if s <= excess]
        if not droppable:
            raise InfeasiblePackingError(f"{total} persons cannot fill scenes of size {lo}..{hi}")
        excess -= sizes.pop(droppable[-1])
    return sizes


def _pack(units: list[list[int]], sizes: list[int], rng: np.random.Generator) -> list[list[int]] | None:
    """Place units (lists of identities that share a scene) into scenes of the
    given sizes without repeating an identity inside a scene."""
    perm = rng.permutation(len(units))
    order = sorted(perm.tolist(), key=lambda u: -len(units[u]))
    room = np.asarray(sizes, dtype=np.int64)
    scenes: list[list[int]] = [[] for _ in sizes]
    present: list[set[int]] = [set() for _ in sizes]
    placed: list[list[int]] = [[] for _ in sizes]
    for u in order:
        ids = units[u]
        ok = [k for k in range(len(sizes)) if room[k] >= len(ids) and not present[k].intersection(ids)]
        if not ok:
            return None
        best = max(room[k] for k in ok)
        top = [k for k in ok if room[k] == best]
        k = top[int(rng.integers(len(top)))]
        room[k] -= len(ids)
        present[k].update(ids)
        scenes[k].extend(ids)
        placed[k].append(u)
    return placed


def _pack_greedy(units: list[list[int]], lo: int, hi: int, rng: np.random.Generator) -> list[list[int]] | None:
    """Fallback packer: open a scene with a random target size, fill it with
    whichever remaining units fit, close it when nothing else fits. Handles
    unit mixes that fixed sizes cannot express (e.g. only companion pairs
    with odd scene sizes allowed)."""
    left = rng.permutation(len(units)).tolist()
    placed: list[list[int]] = []
    while left:
        smallest = min(len(units[u]) for u in left)
        room = int(rng.integers(max(lo, smallest), hi + 1))
        scene: list[int] = []
        present: set[int] = set()
        for u in list(left):
            if len(units[u]) <= room and not present.intersection(units[u]):
                scene.append(u)
                present.update(units[u])
                room -= len(units[u])
                left.remove(u)
        if not scene or len(present) < lo:
            return None
        placed.append(scene)
    return placed


def generate(cfg: WorldConfig) -> World:
    rng = np.random.default_rng(cfg.seed)
    n_id, n_sight, n_un = cfg.n_identities, cfg.sightings_per_identity, cfg.n_unpaired
    n_people = n_id + n_un
    if n_people == 0:
        raise InfeasiblePackingError("world has no persons")
    prototypes = l2_normalize_rows(rng.standard_normal((n_people, cfg.d_raw)))
    if cfg.lookalike_sigma is not None and n_id and n_un:
        # separate stream so the rest of the world is unchanged by this knob
        look_rng = np.random.default_rng([cfg.seed, 0x100C])
        twins = look_rng.integers(n_id, size=n_un)
        jitter = look_rng.normal(0.0, cfg.lookalike_sigma, size=(n_un, cfg.d_raw))
        prototypes[n_id:] = l2_normalize_rows(prototypes[twins] + jitter)

    companions = []
    perm = rng.permutation(n_id)
    for k in range(0, n_id - 1, 2):
        if rng.random() < cfg.cotravel_prob:
            a, b = sorted((int(perm[k]), int(perm[k + 1])))
            companions.append((a, b))
    companions.sort()

    # a unit is a list of (identity, sighting) slots that must share a scene
    travels_with = {a: b for a, b in companions}
    in_pair = {x for p in companions for x in p}
    units: list[list[tuple[int, int]]] = []
    for ident in range(n_id):
        if ident in travels_with:
            mate = travels_with[ident]
            units.extend([[(ident, s), (mate, s)] for s in range(n_sight)])
        elif ident not in in_pair:
            units.extend([[(ident, s)] for s in range(n_sight)])
    units.extend([[(u, 0)] for u in range(n_id, n_people)])
    unit_ids = [[ident for ident, _ in unit] for unit in units]

    lo, hi = cfg.persons_per_scene
    if hi < 2 and companions:
        raise InfeasiblePackingError("companion pairs need scenes holding at least two persons")
    placed = None
    for _ in range(_PACK_ATTEMPTS):
        sizes = _scene_sizes(sum(len(u) for u in units), lo, hi, rng)
        placed = _pack(unit_ids, sizes, rng)
        if placed is not None:
            break
    else:
        for _ in range(_PACK_ATTEMPTS):
            placed = _pack_greedy(unit_ids, lo, hi, rng)
            if placed is not None:
                break
    if placed is None:
        raise InfeasiblePackingError(
            f"could not place {n_id}x{n_sight} sightings + {n_un} unpaired into scenes of {lo}..{hi}"
        )

    scene_order = rng.permutation(len(placed))
    slots: list[tuple[int, int]] = []
    image_of: list[int] = []
    boxes: list[list[float]] = []
    for new_s, old_s in enumerate(scene_order.tolist()):
        inside = [slot for u in placed[old_s] for slot in units[u]]
        inside = [inside[i] for i in rng.permutation(len(inside))]
        for k, slot in enumerate(inside):
            slots.append(slot)
            image_of.append(new_s)
            x1 = _BOX_GAP + k * (_BOX_W + _BOX_GAP)
            boxes.append([x1, 20.0, x1 + _BOX_W, 20.0 + _BOX_H])

    identity = np.asarray([ident for ident, _ in slots], dtype=np.int64)
    feats = np.empty((identity.size, cfg.d_raw))
    for j, ident in enumerate(identity.tolist()):
        feats[j] = _sighting(prototypes[ident], cfg.noise_sigma, rng, 1)[0]

    catalog = SceneCatalog.from_image_of(image_of, len(placed), np.asarray(boxes))
    feats.setflags(write=False)
    identity.setflags(write=False)
    return World(feats, catalog, identity, prototypes, tuple(companions), cfg)


def cotravel_rate(world: World) -> float:
    """Share of pairable identities that received a companion."""
    slots = world.config.n_identities // 2
    return len(world.companions) / slots if slots else 0.0


@dataclass(frozen=True)
class EvalSplit:
    """Fresh sightings of the world's persons for retrieval evaluation.

    Every paired identity contributes queries and gallery entries; every
    unpaired person contributes one gallery distractor.
    """

    query_raw: np.ndarray
    query_identity: np.ndarray
    gallery_raw: np.ndarray
    gallery_identity: np.ndarray

    def relevance(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.gallery_identity == t) for t in self.query_identity.tolist()]


def heldout_split(world: World, queries_per_identity: int = 1, gallery_per_identity: int = 2,
                  distractors_per_unpaired: int = 1) -> EvalSplit:
    """Held-out sightings drawn from a generator seeded independently of the
    training world, so the training data never depends on split sizes."""
    cfg = world.config
    rng = np.random.default_rng([cfg.seed, 0xE7A1])
    sigma = cfg.noise_sigma
    q_raw, q_id, g_raw, g_id = [], [], [], []
    for ident in world.paired_identities.tolist():
        q_raw.append(_sighting(world.prototypes[ident], sigma, rng, queries_per_identity))
        q_id.extend([ident] * queries_per_identity)
        g_raw.append(_sighting(world.prototypes[ident], sigma, rng, gallery_per_identity))
        g_id.extend([ident] * gallery_per_identity)
    for ident in world.unpaired_identities.tolist():
        if distractors_per_unpaired:
            g_raw.append(_sighting(world.prototypes[ident], sigma, rng, distractors_per_unpaired))
            g_id.extend([ident] * distractors_per_unpaired)
    d = cfg.d_raw
    g_raw_arr = np.concatenate(g_raw) if g_raw else np.empty((0, d))
    g_id_arr = np.asarray(g_id, dtype=np.int64)
    perm = rng.permutation(g_id_arr.size)
    return EvalSplit(
        np.concatenate(q_raw) if q_raw else np.empty((0, d)),
        np.asarray(q_id, dtype=np.int64),
        g_raw_arr[perm],
        g_id_arr[perm],
    )
