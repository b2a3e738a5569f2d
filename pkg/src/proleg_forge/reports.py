"""Delimited summaries and figures for datasets and evaluation runs."""

from __future__ import annotations

import csv
from pathlib import Path

from .augment import DatasetStats


def write_stats_csv(stats: DatasetStats, path: str | Path) -> None:
    """Slot-holder distribution as contract,role,surface,count rows."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["contract", "role", "surface", "count"])
        for role_stat in stats.role_counts:
            for surface, count in role_stat.surfaces:
                writer.writerow([role_stat.contract_id, role_stat.role, surface, count])


def write_report_csv(per_sample, path: str | Path) -> None:
    """Per-sample evaluation records, one row each."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id", "contract_id", "template_id", "exact_match",
             "gold_verdict", "predicted_verdict", "verdicts_agree", "error"]
        )
        for record in per_sample:
            agree = record.verdicts_agree
            writer.writerow(
                [
                    record.sample_id,
                    record.contract_id,
                    record.template_id,
                    int(record.exact_match),
                    record.gold_verdict or "",
                    record.predicted_verdict or "",
                    "" if agree is None else int(agree),
                    record.error or "",
                ]
            )


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_slot_distribution_figure(stats: DatasetStats, path: str | Path, top: int = 20) -> None:
    """Horizontal bar chart of the most frequent slot-holder surfaces."""
    plt = _pyplot()
    rows = list(stats.surface_counts[:top])
    rows.reverse()
    labels = [surface for surface, _ in rows]
    counts = [count for _, count in rows]
    fig, ax = plt.subplots(figsize=(8, max(3, 0.32 * len(rows) + 1)))
    ax.barh(range(len(rows)), counts, color="#4878a8")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.set_xlabel("entity spans")
    ax.set_title(f"Slot holder distribution (top {len(rows)} of {len(stats.surface_counts)})")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metrics_figure(metrics: dict[str, float | None], path: str | Path) -> None:
    """Bar chart of the headline evaluation metrics (values in [0, 1])."""
    plt = _pyplot()
    items = [(name, value) for name, value in metrics.items() if value is not None]
    fig, ax = plt.subplots(figsize=(1.6 * max(4, len(items)), 4))
    names = [name for name, _ in items]
    values = [value for _, value in items]
    ax.bar(range(len(items)), values, color="#6a9a58", width=0.6)
    ax.set_xticks(range(len(items)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.axhline(0.95, color="#a84848", linestyle="--", linewidth=1)
    for i, value in enumerate(values):
        ax.text(i, value + 0.01, f"{value:.3f}", ha="center", fontsize=8)
    ax.set_title("Evaluation metrics")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
