"""Matplotlib figures written next to the CSV reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")  # NOQA
import matplotlib.pyplot as plt

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "figure.dpi": 100,
}


def plot_curves(series, path):
    """Accuracy and loss against global epoch, one line per (label, T, acc, loss) series."""
    with plt.rc_context(RC):
        fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
        for label, rounds, acc, loss in series:
            ax_acc.plot(rounds, acc, marker="o", markersize=2.5, linewidth=1.2, label=label)
            ax_loss.plot(rounds, loss, marker="o", markersize=2.5, linewidth=1.2, label=label)
        ax_acc.set(xlabel="global epoch T", ylabel="test accuracy", title="Test accuracy")
        ax_loss.set(xlabel="global epoch T", ylabel="test loss", title="Test loss")
        ax_acc.set_ylim(0, 1)
        ax_acc.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_proportions(rows, path):
    """Grouped bars of final accuracy per biased-client proportion (one group per p)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(8, 4))
        strategies = sorted({r["strategy"] for r in rows})
        props = sorted({r["p_biased"] for r in rows})
        width = 0.8 / max(len(strategies), 1)
        for k, strategy in enumerate(strategies):
            vals = {r["p_biased"]: r for r in rows if r["strategy"] == strategy}
            xs = [i + (k - (len(strategies) - 1) / 2) * width for i in range(len(props))]
            ax.bar(xs, [vals[p]["mean_final_accuracy"] for p in props], width,
                   yerr=[vals[p]["std_final_accuracy"] for p in props], capsize=2,
                   label=strategy)
        ax.set_xticks(range(len(props)))
        ax.set_xticklabels([f"{p:.0%}:{1 - p:.0%}" for p in props], rotation=30)
        ax.set(xlabel="non-IID : IID clients", ylabel="final test accuracy", ylim=(0, 1))
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
