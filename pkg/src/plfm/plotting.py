"""Figures for run reports. Everything renders off-screen to image files."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_loss_curve(curve, path, title="training loss", keys=None):
    """``curve`` is a list of dicts with a ``step`` key and one entry per loss term."""
    if not curve:
        raise ValueError("empty curve")
    keys = keys or [k for k in curve[0] if k != "step"]
    steps = np.array([row["step"] for row in curve])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for k in keys:
            vals = np.array([row[k] for row in curve], dtype=float)
            ax.plot(steps, np.where(vals > 0, vals, np.nan), label=k, lw=1.2)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_chi_densities(densities, path, reference=None, max_panels=16):
    """Grid of chi histograms; an optional reference set is overlaid as a step line."""
    items = sorted(densities.items())[:max_panels]
    if not items:
        raise ValueError("no densities to plot")
    ncol = min(4, len(items))
    nrow = -(-len(items) // ncol)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrow, ncol, figsize=(2.6 * ncol, 1.9 * nrow), squeeze=False)
        for ax, ((name, k), h) in zip(axes.flat, items):
            centers = np.degrees(h.centers())
            width = 360.0 / h.n_bins
            ax.bar(centers, h.density, width=width, color="C0", alpha=0.75)
            if reference and (name, k) in reference:
                ax.step(centers, reference[(name, k)].density, where="mid", color="C3", lw=0.9)
            ax.set_xlim(-180, 180)
            ax.set_xticks([-180, -60, 60, 180])
            ax.set_title(f"{name} chi{k + 1}", fontsize=8)
        for ax in list(axes.flat)[len(items):]:
            ax.set_visible(False)
        return _save(fig, path)


def plot_metric_histogram(values, path, xlabel, threshold=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.hist(np.asarray(values, dtype=float), bins=20, color="C2", alpha=0.8)
        if threshold is not None:
            ax.axvline(threshold, color="k", ls="--", lw=0.8)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("samples")
        return _save(fig, path)
