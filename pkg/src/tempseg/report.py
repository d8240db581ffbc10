"""Report writers: delimited output plus a rendered figure next to it.

Every report path emits a CSV and a PNG of the same content so results can be
consumed by scripts and skimmed by eye.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport


def write_eval_report(out_dir, report: EvalReport) -> tuple[Path, Path]:
    """Per-class IoU table (CSV) with a bar-chart figure alongside."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "eval_report.csv"
    rows = sorted(report.iou_by_name().items())
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "iou"])
        for name, iou in rows:
            writer.writerow([name, "" if iou != iou else f"{iou:.6f}"])
        writer.writerow(["mIoU", f"{report.miou:.6f}"])

    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(rows) + 2.0), 3.2))
    names = [name for name, _ in rows]
    values = [0.0 if iou != iou else iou for _, iou in rows]
    ax.bar(range(len(rows)), values, color="#4878cf")
    ax.axhline(report.miou, color="#d65f5f", linestyle="--", linewidth=1,
               label=f"mIoU = {report.miou:.3f}")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("IoU")
    ax.set_ylim(0.0, 1.0)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    png_path = out_dir / "eval_report.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def write_bench_report(out_dir, rows: Sequence[dict]) -> tuple[Path, Path]:
    """Timing table (CSV) with a horizontal bar figure of the medians."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "bench.csv"
    fields = ["operation", "points", "k", "runs", "median_ms", "p90_ms"]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({f: row[f] for f in fields})

    fig, ax = plt.subplots(figsize=(6.0, 0.6 * len(rows) + 1.6))
    labels = [r["operation"] for r in rows]
    medians = [r["median_ms"] for r in rows]
    ax.barh(range(len(rows)), medians, color="#6acc65")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("median wall time (ms)")
    for i, v in enumerate(medians):
        ax.text(v, i, f" {v:.1f}", va="center", fontsize=8)
    fig.tight_layout()
    png_path = out_dir / "bench.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return csv_path, png_path


def write_loss_curve(out_dir, records: Sequence[dict], stem: str = "loss_curve") -> Path:
    """Training loss per step, one line per stage found in the records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    stages = sorted({r["stage"] for r in records if "loss" in r})
    for stage in stages:
        steps = [r["step"] for r in records if "loss" in r and r["stage"] == stage]
        losses = [r["loss"] for r in records if "loss" in r and r["stage"] == stage]
        ax.plot(steps, losses, linewidth=1, label=f"stage {stage}")
    ax.set_xlabel("step")
    ax.set_ylabel("focal loss")
    if stages:
        ax.legend(fontsize=8)
    fig.tight_layout()
    png_path = out_dir / f"{stem}.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path
