"""Figures for the report path. Everything renders to files via Agg."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    # keep output byte-stable across runs
    "svg.hashsalt": "kgrank",
}

_SAVE_KW = {"metadata": {"Software": None}}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def plot_loss_curve(epochs, losses, path, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(list(epochs), list(losses), marker="o", ms=3, lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_source_mrr(solo: dict, weights: dict, ensemble_mrr: float, path):
    """Horizontal bars of solo MRR per source; selected sources are highlighted."""
    names = list(solo)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 0.28 * len(names) + 1.4))
        colors = ["tab:blue" if weights.get(n, 0) > 0 else "0.7" for n in names]
        ax.barh(range(len(names)), [solo[n] for n in names], color=colors)
        ax.axvline(ensemble_mrr, color="tab:red", lw=1, ls="--", label=f"ensemble {ensemble_mrr:.4f}")
        ax.set_yticks(range(len(names)), names)
        ax.invert_yaxis()
        ax.set_xlabel("validation MRR")
        ax.set_xlim(0, 1)
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)


def plot_alpha_sweep(results: dict, path, title=None):
    alphas = sorted(results)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(alphas, [results[a] for a in alphas], marker="s", ms=4)
        ax.set_xlabel("alpha")
        ax.set_ylabel("validation MRR")
        if title:
            ax.set_title(title)
        return _save(fig, path)
