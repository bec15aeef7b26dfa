"""Delimited metric outputs and the matplotlib figures rendered next to them."""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _clean(value):
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


def _clean_list(values):
    return [_clean(v) for v in values]


def render_loss_curves(path, rows):
    """Loss-term trajectories plus the learning-rate schedule."""
    iters = [r["iter"] for r in rows]
    fig, (ax_loss, ax_lr) = plt.subplots(
        2, 1, figsize=(7, 6), sharex=True, height_ratios=[3, 1]
    )
    for key, label in (("L_M", "mask CE"), ("L_D", "duality L1"),
                       ("L_E", "balanced BCE"), ("total", "total")):
        values = [r[key] for r in rows]
        if any(v != 0.0 for v in values):
            ax_loss.plot(iters, values, label=label, linewidth=1.0)
    ax_loss.set_yscale("log")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(loc="upper right", fontsize=8)
    ax_loss.grid(alpha=0.3)
    ax_lr.plot(iters, [r["lr"] for r in rows], color="tab:gray", linewidth=1.0)
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("iteration")
    ax_lr.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _write_per_class_csv(path, header, values):
    lines = [f"class,{header}"]
    for k, v in enumerate(values):
        lines.append(f"{k},{'' if v is None else repr(v)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_segmentation_report(out_dir, per_class, mean):
    """miou.csv, summary.json and a per-class IoU bar chart."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cleaned = _clean_list(per_class)
    _write_per_class_csv(out_dir / "miou.csv", "iou", cleaned)
    summary = {
        "miou": _clean(mean),
        "mf_ods": None,
        "ap": None,
        "per_class": {"iou": cleaned},
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")

    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = np.arange(len(per_class))
    ax.bar(xs, [0.0 if v is None else v for v in cleaned], color="tab:blue")
    if _clean(mean) is not None:
        ax.axhline(mean, color="tab:red", linewidth=1.0, label=f"mean {mean:.3f}")
        ax.legend(fontsize=8)
    ax.set_xticks(xs)
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("class")
    ax.set_ylabel("IoU")
    fig.tight_layout()
    fig.savefig(out_dir / "per_class_iou.png", dpi=110)
    plt.close(fig)
    return summary


def write_boundary_report(out_dir, acc, mf_per, mf_mean, ap_per, ap_mean):
    """mf_ods.csv, ap.csv, pr_curves.csv, summary.json and the PR figure."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_per_class_csv(out_dir / "mf_ods.csv", "mf_ods", _clean_list(mf_per))
    _write_per_class_csv(out_dir / "ap.csv", "ap", _clean_list(ap_per))

    precision, recall = acc.precision_recall()
    lines = ["class,threshold,precision,recall"]
    for k in range(acc.classes):
        for ti, tau in enumerate(acc.thresholds):
            lines.append(
                f"{k},{float(tau)!r},{precision[k, ti]!r},{recall[k, ti]!r}"
            )
    (out_dir / "pr_curves.csv").write_text("\n".join(lines) + "\n")

    summary = {
        "miou": None,
        "mf_ods": _clean(mf_mean),
        "ap": _clean(ap_mean),
        "per_class": {
            "mf_ods": _clean_list(mf_per),
            "ap": _clean_list(ap_per),
        },
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")

    fig, ax = plt.subplots(figsize=(5, 5))
    for k in range(acc.classes):
        order = np.argsort(recall[k])
        ax.plot(recall[k][order], precision[k][order], linewidth=1.0,
                label=f"class {k}")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.0)
    ax.set_ylim(0, 1.05)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "pr_curves.png", dpi=110)
    plt.close(fig)
    return summary
