"""Static figures for metric reports: per-metric distributions and a macro table chart."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import HISTOGRAM_EDGES, MetricReport  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
LABELS = {
    "SE": "Structural entropy (bits)",
    "MD": "Max depth",
    "MB": "Max breadth",
    "SemH": "Semantic homogeneity",
}
# strip timestamps/version so repeated runs give identical bytes
PNG_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def plot_distributions(rep: MetricReport, out_dir: str | Path, stem: str = "prop_metrics") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(HISTOGRAM_EDGES), figsize=(3.0 * len(HISTOGRAM_EDGES), 2.6))
        for ax, metric in zip(axes, HISTOGRAM_EDGES):
            for m in rep.methods:
                h = m.histograms[metric]
                total = sum(h["counts"]) or 1
                ax.stairs(np.asarray(h["counts"]) / total, h["edges"], label=m.method)
            ax.set_xlabel(LABELS[metric])
            ax.set_ylabel("fraction of trees")
        axes[0].legend(frameon=False)
        fig.tight_layout()
        paths.append(_save(fig, out / f"{stem}_distributions.png"))

        metrics = ["SE", "MD", "MB", "SemC", "SenC", "SemH"]
        fig, axes = plt.subplots(1, len(metrics), figsize=(2.2 * len(metrics), 2.4))
        names = [m.method for m in rep.methods]
        x = np.arange(len(names))
        for ax, metric in zip(axes, metrics):
            vals = [m.macro.get(metric) for m in rep.methods]
            ax.bar(x, [np.nan if v is None else v for v in vals], color="0.45")
            ax.set_xticks(x, names, rotation=45, ha="right")
            ax.set_title(metric)
        fig.tight_layout()
        paths.append(_save(fig, out / f"{stem}_macro.png"))
    return paths
