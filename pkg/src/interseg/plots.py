"""Report figures rendered alongside the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import MetricsReport


def render_report_figures(report: MetricsReport, out_dir) -> list[Path]:
    """Dice-curve figures: per-dataset means and per-case spaghetti."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for name, entry in sorted(report.datasets.items()):
        ax.plot(range(len(entry["curve"])), entry["curve"], marker="o", label=f"{name} (n={entry['n_cases']})")
    ax.plot(
        range(len(report.overall_curve)),
        report.overall_curve,
        color="black",
        linewidth=2.0,
        linestyle="--",
        label=f"overall (AUC {report.overall_auc:.3f})",
    )
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean Dice")
    ax.set_ylim(0.0, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "dice_curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for case_id in sorted(report.cases):
        curve = report.cases[case_id]["curve"]
        ax.plot(range(len(curve)), curve, alpha=0.5, linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("Dice")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(f"{len(report.cases)} cases")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = out_dir / "dice_per_case.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written
