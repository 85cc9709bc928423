"""Figures written next to the CSV exports.

Every function takes already-computed rows and a path, draws one figure
with the non-interactive Agg backend, saves it and closes it.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path) -> None:
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def _pivot(rows: Iterable[Tuple[object, float, float]]):
    keys, mus, table = [], [], defaultdict(dict)
    for key, mu, value in rows:
        if key not in table:
            keys.append(key)
        if mu not in mus:
            mus.append(mu)
        table[key][mu] = value
    grid = np.array([[table[k].get(m, np.nan) for k in keys] for m in mus])
    return keys, mus, grid


def plot_profile_scatter(points, path, labels=None) -> None:
    """Users in the first two principal components; ``labels`` maps user -> annotation."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        xs = [p.x for p in points]
        ys = [p.y for p in points]
        ax.scatter(xs, ys, s=14, alpha=0.8)
        if labels:
            for p in points:
                if p.user_id in labels:
                    ax.annotate(labels[p.user_id], (p.x, p.y), fontsize=7)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        ax.set_title("User topical profiles")
        _save(fig, path)


def plot_interest_heatmap(rows, path, clicked=frozenset()) -> None:
    docs, mus, grid = _pivot(rows)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(docs), 3.6))
        im = ax.imshow(grid, aspect="auto", cmap="viridis", origin="lower")
        ax.set_xticks(range(len(docs)))
        ax.set_xticklabels([f"{d}*" if d in clicked else str(d) for d in docs], rotation=45, ha="right")
        ax.set_yticks(range(len(mus)))
        ax.set_yticklabels([f"{m:g}" for m in mus])
        ax.set_ylabel("kernel mu")
        ax.set_title("Interest kernels (* clicked)")
        fig.colorbar(im, ax=ax, label="log kernel value")
        _save(fig, path)


def plot_layer_heatmap(rows, path) -> None:
    layers, mus, grid = _pivot(rows)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.6))
        im = ax.imshow(grid, aspect="auto", cmap="magma", origin="lower")
        ax.set_xticks(range(len(layers)))
        ax.set_xticklabels([str(l) for l in layers])
        ax.set_yticks(range(len(mus)))
        ax.set_yticklabels([f"{m:g}" for m in mus])
        ax.set_xlabel("layer (shallow to deep)")
        ax.set_ylabel("kernel mu")
        ax.set_title("Semantic kernel activation by layer")
        fig.colorbar(im, ax=ax, label="summed log kernel value")
        _save(fig, path)


def plot_sweep(rows: Sequence, path) -> None:
    """Coherence and ranking metrics against the topic count."""
    ok = [r for r in rows if not r.error]
    ts = [r.n_topics for r in ok]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3))
        axes[0].plot(ts, [r.coherence for r in ok], "o-")
        axes[0].set_ylabel("UMass coherence")
        axes[1].plot(ts, [r.a_clk for r in ok], "o-", color="C3")
        axes[1].set_ylabel("A.Clk")
        for attr, label in (("mrr", "MRR"), ("map", "MAP"), ("p_at_1", "P@1")):
            axes[2].plot(ts, [getattr(r, attr) for r in ok], "o-", label=label)
        axes[2].legend()
        for ax in axes:
            ax.set_xlabel("topics")
        _save(fig, path)


def plot_training_curve(log, path) -> None:
    epochs = [e.epoch for e in log]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(epochs, [e.mean_loss for e in log], "o-", label="hinge loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean hinge loss")
        ax2 = ax.twinx()
        ax2.plot(epochs, [e.val_mrr for e in log], "s--", color="C1", label="validation MRR")
        ax2.set_ylabel("validation MRR")
        ax2.spines["right"].set_visible(True)
        _save(fig, path)


def plot_report(rows, path) -> None:
    names = [m for m, _ in rows]
    metrics = ("map", "mrr", "p_at_1")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.5 + 1.5 * len(names), 3))
        width = 0.8 / len(metrics)
        x = np.arange(len(names))
        for i, (attr, label) in enumerate(zip(metrics, ("MAP", "MRR", "P@1"))):
            ax.bar(x + i * width, [getattr(r, attr) for _, r in rows], width, label=label)
        ax.set_xticks(x + width)
        ax.set_xticklabels(names)
        ax.set_ylim(0, 1)
        ax.legend()
        _save(fig, path)
