"""Figures written next to the tabular reports."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed metadata keeps PNG output byte-stable across runs
_PNG_META = {"Software": None}

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_category_accuracy(
    rows: Sequence[tuple[str, Sequence[tuple[str, float | None]]]],
    path: str | Path,
    title: str = "Accuracy by category",
) -> Path:
    """Grouped bars, one group per table column, one bar per row (method or fold)."""
    with plt.rc_context(STYLE):
        columns = [c for c, _ in rows[0][1]]
        fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(columns)), 3.2))
        width = 0.8 / len(rows)
        for r, (label, cols) in enumerate(rows):
            xs = [i + (r - (len(rows) - 1) / 2) * width for i in range(len(columns))]
            ax.bar(xs, [v if v is not None else 0.0 for _, v in cols], width=width, label=label)
        ax.set_xticks(range(len(columns)))
        ax.set_xticklabels([c.replace(" ", "\n") for c in columns])
        ax.set_ylabel("Accuracy (%)")
        ax.set_ylim(0, 100)
        ax.set_title(title)
        if len(rows) > 1:
            ax.legend(frameon=False, ncol=min(len(rows), 4))
        fig.tight_layout()
        return _save(fig, path)


def plot_training_curve(metrics: Sequence[Mapping], path: str | Path) -> Path:
    """Meta-memory size and mean judge verdict rate per training step."""
    with plt.rc_context(STYLE):
        steps = [m["step"] for m in metrics]
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(steps, [m["units"] for m in metrics], marker="o", color="C0", label="units")
        ax.set_xlabel("Training step")
        ax.set_ylabel("Meta-memory units", color="C0")
        rates = [(s, m["verdict_rate"]) for s, m in zip(steps, metrics) if m.get("verdict_rate") is not None]
        if rates:
            ax2 = ax.twinx()
            ax2.plot([s for s, _ in rates], [100 * r for _, r in rates], marker="s", color="C1", label="verdict rate")
            ax2.set_ylabel("Sampled responses judged correct (%)", color="C1")
            ax2.set_ylim(0, 100)
        fig.tight_layout()
        return _save(fig, path)


def plot_general_proportion(
    steps: Sequence[int],
    proportions: Sequence[float | None],
    path: str | Path,
) -> Path:
    with plt.rc_context(STYLE):
        pts = [(s, 100 * p) for s, p in zip(steps, proportions) if p is not None]
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        if pts:
            ax.plot([s for s, _ in pts], [p for _, p in pts], marker="o", label="General")
            ax.plot([s for s, _ in pts], [100 - p for _, p in pts], marker="s", label="Specific")
            ax.legend(frameon=False)
        ax.set_xlabel("Training step")
        ax.set_ylabel("Share of units (%)")
        ax.set_ylim(0, 100)
        fig.tight_layout()
        return _save(fig, path)
