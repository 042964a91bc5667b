"""Bar-chart rendering of metric reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .report import MetricReport  # noqa: E402


def plot_reports(reports: Sequence[MetricReport], path: str | Path, title: str | None = None) -> Path:
    """One panel per dataset, one bar group per metric, one bar per report."""
    path = Path(path)
    datasets = list(reports[0].datasets)
    fig, axes = plt.subplots(1, len(datasets), figsize=(4.5 * len(datasets), 3.6), squeeze=False)
    width = 0.8 / len(reports)
    for ax, ds in zip(axes[0], datasets):
        metrics = list(reports[0].datasets[ds].values)
        x = np.arange(len(metrics))
        for j, r in enumerate(reports):
            vals = [100.0 * r.datasets[ds].values[m] for m in metrics]
            ax.bar(x + (j - (len(reports) - 1) / 2) * width, vals, width, label=r.label)
        ax.set_xticks(x)
        ax.set_xticklabels(metrics, rotation=30, ha="right", fontsize=8)
        ax.set_ylim(0, 100)
        ax.set_ylabel("%")
        ax.set_title(ds, fontsize=10)
        ax.grid(axis="y", alpha=0.3)
    axes[0][-1].legend(fontsize=8, loc="upper right")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
