"""Command-line front end: ``gen``, ``cluster``, ``train``, ``eval``, ``pipeline``.

Exit codes: 0 success, 1 internal error, 2 bad input or config. Logs go to
stderr; on failure a one-line JSON error object is printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cgc import cgc_cluster
from .core import (
    EmbeddingMatrix,
    SceneCatalog,
    read_catalog,
    read_embeddings_jsonl,
    validate_catalog,
    write_catalog,
    write_embeddings_jsonl,
)
from .datagen import WorldConfig, generate, heldout_split
from .errors import CGUAError
from .evaluation import MetricsReport, evaluate_retrieval, gallery_size_sweep, pairwise_f1
from .similarity import NEIGHBOR_MODES
from .trainer import TrainConfig, encode, initial_encoder, train
from .uam import save_banks

log = logging.getLogger("cgua")


class InputError(Exception):
    """Bad user input; maps to exit code 2."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message)
        self.path = path


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _load_json(path):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"file not found: {path}", str(path))
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})", str(path)) from exc


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {path}", str(path))
    return p


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _load_instances(emb_path, catalog_path):
    ids, emb, _ = read_embeddings_jsonl(_need_file(emb_path, "embeddings"), normalize=True)
    if not np.array_equal(ids, np.arange(ids.size)):
        raise InputError(f"{emb_path}: instance ids must be 0..N-1 in order", str(emb_path))
    catalog = read_catalog(_need_file(catalog_path, "catalog"), n=emb.n)
    return emb, catalog


# --- gen ---------------------------------------------------------------------


def write_world(world, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    write_embeddings_jsonl(out / "embeddings.jsonl", world.raw_features)
    write_catalog(out / "catalog.json", world.catalog)
    (out / "labels.json").write_text(_dump({"labels": world.true_identity.tolist()}))
    (out / "world.json").write_text(_dump(world.config.to_dict()))
    return {"embeddings": str(out / "embeddings.jsonl"), "catalog": str(out / "catalog.json"),
            "labels": str(out / "labels.json")}


def cmd_gen(args) -> int:
    cfg = WorldConfig.from_dict(_load_json(args.config)) if args.config else WorldConfig()
    if args.seed is not None:
        cfg = WorldConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    world = generate(cfg)
    paths = write_world(world, Path(args.out))
    log.info("generated %d instances in %d scenes -> %s", world.n, world.catalog.n_scenes, args.out)
    sys.stdout.write(_dump(paths))
    return 0


# --- cluster -----------------------------------------------------------------


def cmd_cluster(args) -> int:
    emb, catalog = _load_instances(args.embeddings, args.catalog)
    a = cgc_cluster(emb, catalog, args.lambda_sim, args.neighbor_mode, threads=args.threads)
    out = {"labels": a.label_of.tolist(), "paired": list(a.paired_ids), "unpaired": list(a.unpaired_ids)}
    text = _dump(out)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    log.info("%d clusters (%d paired, %d unpaired)", a.n_clusters, len(a.paired_ids), len(a.unpaired_ids))
    return 0


# --- train -------------------------------------------------------------------


def _train_config(obj: dict, seed: int | None) -> TrainConfig:
    obj = dict(obj)
    if seed is not None:
        obj["seed"] = seed
    try:
        return TrainConfig.from_dict(obj)
    except TypeError as exc:
        raise InputError(f"bad train config: {exc}") from exc


def write_training(result, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "encoder.json").write_text(json.dumps({"W": result.encoder.W.tolist()}) + "\n")
    save_banks(out / "banks.json", result.paired, result.unpaired)
    with open(out / "history.jsonl", "w") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_train(args) -> int:
    raw = _load_json(args.config)
    inputs = {k: raw.pop(k) for k in ("embeddings", "catalog", "labels") if k in raw}
    emb_path = args.embeddings or inputs.get("embeddings")
    cat_path = args.catalog or inputs.get("catalog")
    if not emb_path or not cat_path:
        raise InputError("train needs --embeddings and --catalog (or the same keys in the config)")
    cfg = _train_config(raw.get("train", raw), args.seed)
    emb, catalog = _load_instances(emb_path, cat_path)
    truth = None
    labels_path = args.labels or inputs.get("labels")
    if labels_path:
        truth = np.asarray(_load_json(labels_path)["labels"])
    result = train(emb.data, catalog, cfg, truth=truth)
    write_training(result, Path(args.out))
    sys.stdout.write(_dump({"history": result.history}))
    return 0


# --- eval --------------------------------------------------------------------


def _relevance_table(obj, query_ids, gallery_ids):
    """Map ``[{"query", "relevant", "gt_box"?}]`` onto row indices."""
    q_row = {int(i): r for r, i in enumerate(query_ids.tolist())}
    g_row = {int(i): r for r, i in enumerate(gallery_ids.tolist())}
    relevance = [[] for _ in q_row]
    gt = [None] * len(q_row)
    for rec in obj:
        qid = int(rec["query"])
        if qid not in q_row:
            raise InputError(f"relevance names unknown query id {qid}")
        relevance[q_row[qid]] = [g_row[int(g)] for g in rec["relevant"] if int(g) in g_row]
        gt[q_row[qid]] = rec.get("gt_box")
    return relevance, (gt if any(b is not None for b in gt) else None)


def _int_keys(d: dict) -> dict:
    return {int(k): v for k, v in d.items()}


def metrics_payload(report: MetricsReport, sweep: dict | None = None) -> dict:
    out = report.to_dict()
    if sweep:
        out["gallery_sweep"] = {str(s): {"mAP": r.mAP, "top1": r.cmc.get(1, 0.0), "n_queries": r.n_queries}
                                for s, r in sorted(sweep.items())}
    return out


def cmd_eval(args) -> int:
    q_ids, queries, _ = read_embeddings_jsonl(_need_file(args.queries, "queries"), normalize=True)
    g_ids, gallery, g_boxes = read_embeddings_jsonl(_need_file(args.gallery, "gallery"), normalize=True)
    rel_obj = _load_json(args.relevance)
    if isinstance(rel_obj, dict):
        rel_obj = rel_obj.get("queries", [rel_obj])
    relevance, gt_boxes = _relevance_table(rel_obj, q_ids, g_ids)
    report = evaluate_retrieval(queries, gallery, relevance, args.topk, g_boxes, gt_boxes)
    sweep = None
    if args.gallery_sizes:
        sweep = gallery_size_sweep(queries, gallery, relevance, args.gallery_sizes, seed=args.seed or 0)
    payload = metrics_payload(report, sweep)
    text = _dump(payload)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.report_dir:
        from . import report as rpt

        d = Path(args.report_dir)
        rpt.plot_cmc({"model": report.cmc}, d / "cmc.png")
        rpt.write_table(d / "cmc.csv", ["k", "top_k"], sorted(report.cmc.items()))
        rpt.write_table(d / "per_query_ap.csv", ["query", "ap"], enumerate(report.aps))
        if sweep:
            rpt.plot_gallery_sweep({"model": _int_keys(payload["gallery_sweep"])}, d / "gallery_sweep.png")
    return 0


# --- pipeline ----------------------------------------------------------------


@dataclass
class PipelineConfig:
    world: dict | None = field(default_factory=lambda: WorldConfig.standard().to_dict())
    inputs: dict | None = None
    train: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    figures: bool = True

    EVAL_DEFAULTS = {
        "topk": [1, 5, 10],
        "gallery_sizes": [10, 25, 50, 75],
        "queries_per_identity": 1,
        "gallery_per_identity": 2,
        "distractors_per_unpaired": 1,
        "holdout_fraction": 0.3,
        "seed": 0,
    }

    @classmethod
    def from_json(cls, obj: dict, seed: int | None = None) -> "PipelineConfig":
        if "config" in obj and "version" in obj:  # a manifest from an earlier run
            obj = obj["config"]
        unknown = set(obj) - {"world", "inputs", "train", "eval", "figures"}
        if unknown:
            raise InputError(f"unknown pipeline config keys: {sorted(unknown)}")
        cfg = cls(
            world=obj.get("world", WorldConfig.standard().to_dict()) if obj.get("inputs") is None else None,
            inputs=obj.get("inputs"),
            train=dict(obj.get("train", {})),
            eval=dict(obj.get("eval", {})),
            figures=bool(obj.get("figures", True)),
        )
        cfg.resolve(seed)
        return cfg

    def resolve(self, seed: int | None) -> None:
        """Fill in every default so the manifest alone can replay the run."""
        try:
            if self.world is not None:
                w = dict(self.world)
                if seed is not None:
                    w["seed"] = seed
                self.world = WorldConfig.from_dict(w).to_dict()
            t = dict(self.train)
            if seed is not None:
                t["seed"] = seed
            self.train = TrainConfig.from_dict(t).to_dict()
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad pipeline config: {exc}") from exc
        e = {**self.EVAL_DEFAULTS, **self.eval}
        unknown = set(e) - set(self.EVAL_DEFAULTS)
        if unknown:
            raise InputError(f"unknown eval keys: {sorted(unknown)}")
        if seed is not None:
            e["seed"] = seed
        self.eval = e
        if self.inputs is not None:
            for key in ("embeddings", "catalog", "labels"):
                if key not in self.inputs:
                    raise InputError(f"inputs.{key} is required")
                _need_file(self.inputs[key], key)
            self.inputs = {k: str(Path(v).resolve()) for k, v in self.inputs.items()}

    def to_json(self) -> dict:
        return {"world": self.world, "inputs": self.inputs, "train": self.train, "eval": self.eval,
                "figures": self.figures}


def _scene_holdout(catalog: SceneCatalog, fraction: float, seed: int):
    """Split loaded data by scene: train on the rest, query each held-out
    instance against the other held-out instances."""
    rng = np.random.default_rng([seed, 0x5C3E])
    m = catalog.n_scenes
    test_scenes = np.sort(rng.choice(m, size=max(1, int(round(fraction * m))), replace=False))
    test_mask = np.isin(catalog.image_of, test_scenes)
    train_idx, test_idx = np.flatnonzero(~test_mask), np.flatnonzero(test_mask)
    return train_idx, test_idx


def _subset_catalog(catalog: SceneCatalog, idx: np.ndarray) -> SceneCatalog:
    _, image_of = np.unique(catalog.image_of[idx], return_inverse=True)
    boxes = None if catalog.boxes is None else catalog.boxes[idx]
    return SceneCatalog.from_image_of(image_of.reshape(-1), boxes=boxes)


def run_pipeline(cfg: PipelineConfig, out: Path, threads: int = 1) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    tcfg = TrainConfig.from_dict(cfg.train)
    ev = cfg.eval
    if cfg.world is not None:
        world = generate(WorldConfig.from_dict(cfg.world))
        write_world(world, out / "world")
        X, catalog, truth = world.raw_features, world.catalog, world.true_identity
        split = heldout_split(world, ev["queries_per_identity"], ev["gallery_per_identity"],
                              ev["distractors_per_unpaired"])
        q_raw, g_raw, relevance = split.query_raw, split.gallery_raw, split.relevance()
        loo = False
    else:
        emb, full_catalog = _load_instances(cfg.inputs["embeddings"], cfg.inputs["catalog"])
        labels = np.asarray(_load_json(cfg.inputs["labels"])["labels"])
        if labels.shape[0] != emb.n:
            raise InputError(f"{labels.shape[0]} labels for {emb.n} instances", cfg.inputs["labels"])
        train_idx, test_idx = _scene_holdout(full_catalog, ev["holdout_fraction"], ev["seed"])
        X, truth = emb.data[train_idx], labels[train_idx]
        catalog = _subset_catalog(full_catalog, train_idx)
        # every held-out instance queries the other held-out instances
        q_raw = g_raw = emb.data[test_idx]
        t_labels = labels[test_idx]
        relevance = [[j for j in np.flatnonzero(t_labels == t_labels[i]).tolist() if j != i]
                     for i in range(test_idx.size)]
        loo = True
    validate_catalog(catalog, X.shape[0])

    clustering = cgc_cluster(EmbeddingMatrix.from_raw(X), catalog, tcfg.lambda_sim, tcfg.neighbor_mode,
                             threads=threads)
    p, r, f1 = pairwise_f1(clustering, truth)
    result = train(X, catalog, tcfg, truth=truth)
    write_training(result, out)
    init = initial_encoder(X.shape[1], tcfg)

    def score(enc):
        if loo:
            return _loo_eval(encode(enc, g_raw), relevance, ev["topk"]), None
        Qe, Ge = encode(enc, q_raw), encode(enc, g_raw)
        rep = evaluate_retrieval(Qe, Ge, relevance, ev["topk"])
        sweep = gallery_size_sweep(Qe, Ge, relevance, ev["gallery_sizes"], ev["seed"]) if ev["gallery_sizes"] else None
        return rep, sweep

    trained, trained_sweep = score(result.encoder)
    untrained, untrained_sweep = score(init)
    metrics = {
        "clustering": {"precision": p, "recall": r, "f1": f1, "n_paired": len(clustering.paired_ids),
                       "n_unpaired": len(clustering.unpaired_ids)},
        "retrieval": metrics_payload(trained, trained_sweep),
        "retrieval_untrained": metrics_payload(untrained, untrained_sweep),
        "train": {"final_loss": result.history[-1]["loss"], "first_loss": result.history[0]["loss"],
                  "epochs": len(result.history)},
    }
    (out / "metrics.json").write_text(_dump(metrics))
    manifest = {"version": __version__, "config": cfg.to_json()}
    (out / "manifest.json").write_text(_dump(manifest))

    from . import report as rpt

    rpt.write_table(out / "summary.csv", ["metric", "value"], [
        ("clustering_f1", f1), ("mAP", trained.mAP), ("mAP_untrained", untrained.mAP),
        *[(f"top{k}", v) for k, v in sorted(trained.cmc.items())],
        ("final_loss", result.history[-1]["loss"]),
    ])
    rpt.write_table(out / "history.csv", ["epoch", "loss", "n_paired", "n_unpaired", "pairwise_f1"],
                    [(h["epoch"], h["loss"], h["n_paired"], h["n_unpaired"], h.get("pairwise_f1", ""))
                     for h in result.history])
    if cfg.figures:
        rpt.plot_history(result.history, out / "figures" / "history.png")
        rpt.plot_cmc({"trained": trained.cmc, "untrained": untrained.cmc}, out / "figures" / "cmc.png")
        if trained_sweep:
            rpt.plot_gallery_sweep({"trained": _int_keys(metrics["retrieval"]["gallery_sweep"]),
                                    "untrained": _int_keys(metrics["retrieval_untrained"]["gallery_sweep"])},
                                   out / "figures" / "gallery_sweep.png")
    return metrics


def _loo_eval(G: np.ndarray, relevance, ks) -> MetricsReport:
    from .evaluation import average_precision, cmc_topk, retrieve

    aps, flags_all = [], []
    for i in range(G.shape[0]):
        if not relevance[i]:
            continue
        others = np.delete(np.arange(G.shape[0]), i)
        res = retrieve(G[i], G[others], i)
        flags = np.isin(others[res.ranked], relevance[i])
        aps.append(average_precision(flags))
        flags_all.append(flags)
    skipped = G.shape[0] - len(aps)
    return MetricsReport(float(np.mean(aps)) if aps else 0.0, cmc_topk(flags_all, ks), aps, len(aps), skipped)


def cmd_pipeline(args) -> int:
    obj = _load_json(args.config) if args.config else {}
    cfg = PipelineConfig.from_json(obj, args.seed)
    if args.no_figures:
        cfg.figures = False
    metrics = run_pipeline(cfg, Path(args.out), threads=args.threads)
    log.info("clustering F1 %.3f, mAP %.3f (untrained %.3f)", metrics["clustering"]["f1"],
             metrics["retrieval"]["mAP"], metrics["retrieval_untrained"]["mAP"])
    sys.stdout.write(_dump({"metrics": str(Path(args.out) / "metrics.json"),
                            "manifest": str(Path(args.out) / "manifest.json")}))
    return 0


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cgua", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=None, help="override every seed in the config")
    ap.add_argument("--threads", type=int, default=1, help="threads for similarity kernels")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic world")
    g.add_argument("--config", help="WorldConfig JSON")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("cluster", help="context-guided clustering")
    c.add_argument("--embeddings", required=True)
    c.add_argument("--catalog", required=True)
    c.add_argument("--lambda-sim", type=float, default=0.1)
    c.add_argument("--neighbor-mode", choices=NEIGHBOR_MODES, default="faithful")
    c.add_argument("--out")
    c.set_defaults(func=cmd_cluster)

    t = sub.add_parser("train", help="self-train a linear encoder")
    t.add_argument("--config", required=True, help="TrainConfig JSON")
    t.add_argument("--embeddings")
    t.add_argument("--catalog")
    t.add_argument("--labels", help="ground truth, only for logging pairwise F1")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval mAP / CMC")
    e.add_argument("--queries", required=True)
    e.add_argument("--gallery", required=True)
    e.add_argument("--relevance", required=True)
    e.add_argument("--topk", type=_int_list, default=[1, 5, 10])
    e.add_argument("--gallery-sizes", type=_int_list, default=[])
    e.add_argument("--out")
    e.add_argument("--report-dir", help="also write CSV tables and figures here")
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="gen -> cluster -> train -> eval")
    p.add_argument("--config", help="pipeline config or an earlier manifest.json")
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_pipeline)
    return ap


def _fail(code: int, kind: str, message: str, path: str | None = None) -> int:
    payload = {"error": kind, "message": message}
    if path is not None:
        payload["path"] = path
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    log.error("%s: %s", kind, message)
    return code


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    if args.threads < 1:
        return _fail(2, "InputError", "--threads must be >= 1")
    try:
        return args.func(args)
    except InputError as exc:
        return _fail(2, "InputError", str(exc), exc.path)
    except FileNotFoundError as exc:
        return _fail(2, "FileNotFoundError", str(exc), exc.filename)
    except (CGUAError, ValueError, KeyError) as exc:
        return _fail(2, type(exc).__name__, str(exc))
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        return _fail(1, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
