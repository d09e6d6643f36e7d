"""Report rendering: delimited metric tables plus matplotlib figures.

Every CLI command that produces numbers writes them twice into the output
directory: a CSV for downstream tooling and a PNG chart for eyeballs.
Figures are rendered with the Agg backend and fixed metadata so reruns with
the same inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_PNG_META = {"Software": "bridgeplan"}
_DPI = 120


def write_csv(path: str | Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, dpi=_DPI, metadata=_PNG_META)
    plt.close(fig)


def save_loss_curve(losses: list[float], path: str | Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(losses) + 1), losses, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_metrics_chart(reports: dict[str, dict], path: str | Path) -> None:
    """Grouped bars of the per-split metric values (skips the count key)."""
    splits = list(reports)
    metric_names = [k for k in next(iter(reports.values())) if k != "n"]
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(1, len(splits))
    for i, split in enumerate(splits):
        values = [reports[split][name] for name in metric_names]
        offsets = [j + i * width for j in range(len(metric_names))]
        ax.bar(offsets, values, width=width, label=split)
    ax.set_xticks([j + width * (len(splits) - 1) / 2 for j in range(len(metric_names))])
    ax.set_xticklabels(metric_names)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("planning metrics")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)


def save_selfplay_chart(turns: list[int], successes: list[bool], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    won = [t for t, ok in zip(turns, successes) if ok]
    lost = [t for t, ok in zip(turns, successes) if not ok]
    bins = range(0, max(turns, default=1) + 2)
    ax.hist([won, lost], bins=bins, stacked=True, label=["success", "failure"])
    ax.set_xlabel("system turns used")
    ax.set_ylabel("episodes")
    ax.set_title("self-play outcomes")
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
