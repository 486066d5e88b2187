"""Figures and delimited tables written next to a run's JSON output."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "svg.hashsalt": "cgua",
}
# PNG metadata would otherwise carry a matplotlib version string only; keep it fixed anyway
_PNG_META = {"Software": "cgua"}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_META if path.suffix == ".png" else None)
    plt.close(fig)
    return path


def write_table(path, header: Iterable[str], rows: Iterable[Iterable], delimiter: str = ",") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
    return path


def plot_history(history: list[dict], path) -> Path:
    """Epoch-mean loss on the left, cluster counts on the right."""
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        ax1.plot(epochs, [h["loss"] for h in history], "o-", color="C0")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("mean reid loss")
        ax2.plot(epochs, [h["n_paired"] for h in history], "s-", label="paired", color="C1")
        ax2.plot(epochs, [h["n_unpaired"] for h in history], "^-", label="unpaired", color="C2")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("clusters")
        ax2.legend(frameon=False)
        for ax in (ax1, ax2):
            ax.set_xticks(epochs)
        fig.tight_layout()
        return _save(fig, path)


def plot_cmc(curves: Mapping[str, Mapping[int, float]], path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 2.8))
        for k, (name, cmc) in enumerate(curves.items()):
            ks = sorted(cmc)
            ax.plot(ks, [cmc[x] for x in ks], "o-", label=name, color=f"C{k}")
        ax.set_xlabel("rank k")
        ax.set_ylabel("top-k accuracy")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        return _save(fig, path)


def plot_gallery_sweep(sweeps: Mapping[str, Mapping[int, Mapping[str, float]]], path) -> Path:
    """``sweeps[name][size] = {"mAP": .., "top1": ..}``."""
    with plt.rc_context(RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7.0, 2.8), sharex=True)
        for k, (name, sweep) in enumerate(sweeps.items()):
            sizes = sorted(sweep)
            ax1.plot(sizes, [sweep[s]["mAP"] for s in sizes], "o-", label=name, color=f"C{k}")
            ax2.plot(sizes, [sweep[s]["top1"] for s in sizes], "o-", label=name, color=f"C{k}")
        ax1.set_ylabel("mAP")
        ax2.set_ylabel("top-1")
        for ax in (ax1, ax2):
            ax.set_xlabel("gallery size")
            ax.set_ylim(0, 1.02)
        ax1.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)
