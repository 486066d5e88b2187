"""Self-training of a linear encoder on pseudo labels.

Each epoch embeds every instance, re-clusters, rebuilds both memory banks and
then runs mini-batch contrastive updates. Everything is driven by numpy
generators spawned from ``TrainConfig.seed``, so a run is a pure function of
its inputs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .cgc import cgc_cluster
from .core import EmbeddingMatrix, SceneCatalog, scene_violations
from .errors import NoPairedClustersError, ZeroVectorError
from .evaluation import pairwise_f1
from .similarity import FAITHFUL
from .uam import init_banks, reid_loss, update_paired_bank, update_unpaired_bank

log = logging.getLogger(__name__)


@dataclass
class LinearEncoder:
    """``y = normalize(x @ W)``."""

    W: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2 or self.W.shape[1] < 2:
            raise ValueError(f"W must be d_in x d_out with d_out >= 2, got {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("W contains non-finite values")

    @classmethod
    def random(cls, d_in: int, d_out: int, rng) -> "LinearEncoder":
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        return cls(rng.standard_normal((d_in, d_out)) / np.sqrt(d_in))

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    @property
    def d_out(self) -> int:
        return self.W.shape[1]


def encode(enc: LinearEncoder, X) -> np.ndarray:
    z = np.atleast_2d(np.asarray(X, dtype=np.float64)) @ enc.W
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(~(norms > 1e-12)):
        raise ZeroVectorError("encoder output has zero norm")
    return z / norms


def backward(enc: LinearEncoder, X, upstream) -> np.ndarray:
    """Gradient w.r.t. ``W`` given gradients w.r.t. the normalized outputs."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    G = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    z = X @ enc.W
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    y = z / norms
    dz = (G - np.sum(G * y, axis=1, keepdims=True) * y) / norms
    return X.T @ dz


@dataclass
class TrainConfig:
    epochs: int = 5
    iters_per_epoch: int = 20
    batch_size: int = 64
    lr: float = 0.5
    tau_c: float = 0.05
    m: float = 0.1
    lambda_sim: float = 0.1
    lambda_reid: float = 0.8
    instances_per_cluster: int = 4
    seed: int = 0
    dim: int = 32
    neighbor_mode: str = FAITHFUL
    optimizer: str = "sgd"
    betas: tuple[float, float] = (0.9, 0.999)
    lr_step: int = 0  # epochs between x0.1 decays; 0 disables
    renorm: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        for name in ("epochs", "iters_per_epoch", "batch_size", "instances_per_cluster", "dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr < 0 or self.tau_c <= 0 or self.m < 0 or self.m > 1 or self.lambda_sim < 0:
            raise ValueError("need lr >= 0, tau_c > 0, 0 <= m <= 1, lambda_sim >= 0")
        if not 0.0 <= self.lambda_reid <= 1.0:
            raise ValueError("lambda_reid must lie in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def reference_adam(cls, **kw) -> "TrainConfig":
        """Adam, lr 3.5e-4, decayed by 10x every 10 epochs."""
        base = dict(optimizer="adam", lr=3.5e-4, lr_step=10)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    encoder: LinearEncoder
    history: list[dict]
    paired: object = None
    unpaired: object = None
    assignment: object = None
    batch_log: list[np.ndarray] = field(default_factory=list, repr=False)


class _Adam:
    def __init__(self, shape, betas):
        self.b1, self.b2 = betas
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad, lr):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1 ** self.t)
        vh = self.v / (1 - self.b2 ** self.t)
        return lr * mh / (np.sqrt(vh) + 1e-8)


def sample_batch(paired, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Instance ids for one batch, drawn only from paired clusters."""
    k = cfg.instances_per_cluster
    n_clusters = min(paired.n_clusters, max(1, cfg.batch_size // k))
    chosen = np.sort(rng.choice(paired.n_clusters, size=n_clusters, replace=False))
    ids = []
    for c in chosen.tolist():
        members = paired.instance_ids[paired.starts[c]:paired._end(c)]
        ids.append(rng.choice(members, size=k, replace=members.size < k))
    return np.concatenate(ids)


def _streams(cfg: TrainConfig):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3)]


def initial_encoder(d_in: int, cfg: TrainConfig) -> LinearEncoder:
    """The random encoder ``train`` starts from under ``cfg``."""
    return LinearEncoder.random(d_in, cfg.dim, _streams(cfg)[0])


def train(raw_features, catalog: SceneCatalog, cfg: TrainConfig, encoder: LinearEncoder | None = None,
          truth=None, log_batches: bool = False) -> TrainResult:
    X = np.asarray(raw_features, dtype=np.float64)
    if X.shape[0] < 4:
        raise ValueError("training needs at least 4 instances")
    if catalog.n != X.shape[0]:
        raise ValueError(f"{X.shape[0]} instances but catalog covers {catalog.n}")
    init_rng, batch_rng, pos_rng = _streams(cfg)
    enc = LinearEncoder(encoder.W.copy()) if encoder is not None else LinearEncoder.random(X.shape[1], cfg.dim, init_rng)
    adam = _Adam(enc.W.shape, cfg.betas) if cfg.optimizer == "adam" else None

    history: list[dict] = []
    batch_log: list[np.ndarray] = []
    assignment = paired = unpaired = None
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (0.1 ** (epoch // cfg.lr_step) if cfg.lr_step else 1.0)
        emb = EmbeddingMatrix(encode(enc, X))
        fresh = cgc_cluster(emb, catalog, cfg.lambda_sim, cfg.neighbor_mode)
        if not fresh.paired_ids:
            if assignment is None:
                raise NoPairedClustersError("first epoch produced no paired clusters")
            log.warning("epoch %d: no paired clusters, keeping previous pseudo labels", epoch + 1)
        else:
            assignment = fresh
        paired, unpaired = init_banks(assignment, emb)
        un_ids = unpaired.instance_ids

        losses = []
        for _ in range(cfg.iters_per_epoch):
            ids = sample_batch(paired, cfg, batch_rng)
            if log_batches:
                batch_log.append(ids)
            Y = encode(enc, X[ids])
            pos = np.asarray([paired.cluster_of[int(i)] for i in ids])
            grads = np.empty_like(Y)
            total = 0.0
            for r in range(Y.shape[0]):
                lv = reid_loss(Y[r], int(pos[r]), paired, unpaired, cfg.tau_c, cfg.lambda_reid, pos_rng)
                total += lv.value
                grads[r] = lv.grad_q
            losses.append(total / Y.shape[0])
            dW = backward(enc, X[ids], grads / Y.shape[0])
            if lr > 0:
                enc.W = enc.W - (adam.step(dW, lr) if adam is not None else lr * dW)
            paired = update_paired_bank(paired, pos, Y, cfg.m, instance_ids=ids, renorm=cfg.renorm)
            if un_ids.size:
                unpaired = update_unpaired_bank(unpaired, np.arange(un_ids.size), encode(enc, X[un_ids]),
                                                cfg.m, renorm=cfg.renorm)

        rec = {
            "epoch": epoch + 1,
            "loss": float(np.mean(losses)),
            "lr": lr,
            "n_paired": len(assignment.paired_ids),
            "n_unpaired": len(assignment.unpaired_ids),
            "scene_violations": scene_violations(assignment, catalog),
        }
        if truth is not None:
            rec["pairwise_f1"] = pairwise_f1(assignment, truth)[2]
        history.append(rec)
        log.info("epoch %d loss %.4f paired %d unpaired %d", rec["epoch"], rec["loss"], rec["n_paired"], rec["n_unpaired"])
    return TrainResult(enc, history, paired, unpaired, assignment, batch_log)
