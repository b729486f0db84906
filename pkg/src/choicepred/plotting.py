"""SVG bar charts for report tables.

Figures are written without timestamps and with a fixed element-id salt so
the same table always produces the same file.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {"svg.hashsalt": "choicepred", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def grouped_bars(groups: Sequence[str], series: dict[str, Sequence[float]], ylabel: str, title: str,
                 path: str | Path) -> Path:
    """One cluster of bars per group, one bar per series."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        x = np.arange(len(groups))
        width = 0.8 / max(1, len(series))
        for k, (name, vals) in enumerate(series.items()):
            ax.bar(x + (k - (len(series) - 1) / 2) * width, np.asarray(vals, dtype=float), width, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(groups)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_ablation(summary: Sequence[tuple[str, str, float, float]], path: str | Path) -> Path:
    """Test MSE by feature condition, one series per algorithm."""
    conditions = list(dict.fromkeys(c for c, _, _, _ in summary))
    series: dict[str, list[float]] = {}
    for algo in dict.fromkeys(a for _, a, _, _ in summary):
        lookup = {c: m for c, a, m, _ in summary if a == algo}
        series[algo] = [lookup.get(c, np.nan) for c in conditions]
    return grouped_bars(conditions, series, "test MSE", "Error by feature set", path)


def plot_comparison(rows, path: str | Path) -> Path:
    """Raw versus foresight MSE per behavioural model."""
    names = [r.model for r in rows]
    series = {"on its own": [r.mse_raw for r in rows], "as foresight": [r.mse_foresight for r in rows]}
    return grouped_bars(names, series, "test MSE", "Models alone and as a forest feature", path)


def plot_scores(labels: Sequence[str], mses: Sequence[float], path: str | Path) -> Path:
    return grouped_bars(list(labels), {"MSE": list(mses)}, "MSE", "Prediction error", path)
