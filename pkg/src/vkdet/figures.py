"""Report figures rendered to files next to the delimited outputs.

PNG output is kept byte-deterministic: fixed size, fixed dpi, and a fixed
metadata block (matplotlib would otherwise stamp its own version string).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KW = dict(dpi=110, metadata={"Software": "vkdet"})


def save_pr_curves(path, curves: dict) -> None:
    """Precision-recall curves, one line per class.

    curves maps class name to (recall array, precision array).
    """
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for name in sorted(curves):
        recall, precision = curves[name]
        if len(recall) == 0:
            continue
        ax.plot(recall, precision, label=name, linewidth=1.5)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3)
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_ap_bars(path, per_class_ap: dict, base: list, novel: list) -> None:
    """Per-class AP bars, base classes then novel classes."""
    names = [n for n in list(base) + list(novel) if per_class_ap.get(n) is not None]
    values = [100.0 * per_class_ap[n] for n in names]
    colors = ["tab:blue" if n in base else "tab:orange" for n in names]
    fig, ax = plt.subplots(figsize=(max(5.0, 0.6 * len(names) + 2), 3.6))
    ax.bar(range(len(names)), values, color=colors)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("AP x100")
    ax.set_ylim(0, 105)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_ablation_bars(path, rows: list) -> None:
    """Novel-split mAP per score-component combination.

    rows is a list of dicts with "components" and "map_novel".
    """
    labels = [r["components"] for r in rows]
    values = [100.0 * r["map_novel"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(5.0, 0.8 * len(rows) + 2), 3.6))
    ax.bar(range(len(rows)), values, color="tab:green")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("novel mAP x100")
    ax.set_ylim(0, 105)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
