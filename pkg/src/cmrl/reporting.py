"""Run artifacts: JSON reports, flat CSVs, and matplotlib figures.

Every figure is rendered to a file next to the delimited output it was drawn
from; nothing opens a display.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .model import ModelState, save_checkpoint

STEP_FIELDS = ("epoch", "step", "l_sup", "l_causal", "l_kl", "l_int", "l_final")


def write_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def write_steps_csv(steps: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=STEP_FIELDS)
        writer.writeheader()
        for rec in steps:
            writer.writerow({k: rec[k] for k in STEP_FIELDS})


def write_history_csv(history: list[dict], path) -> None:
    if not history:
        return
    metric_keys = sorted(history[0].get("valid", {}) or {})
    fields = ["epoch", "lr", "l_sup", "l_causal", "l_kl", "l_int", "l_final"] + [
        f"valid_{k}" for k in metric_keys
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for rec in history:
            row = {k: rec[k] for k in fields if k in rec}
            for k in metric_keys:
                row[f"valid_{k}"] = rec.get("valid", {}).get(k)
            writer.writerow(row)


def write_run_outputs(report, state: ModelState, out_dir) -> None:
    """report.json, step/history CSVs, resolved config, and a checkpoint."""
    os.makedirs(out_dir, exist_ok=True)
    write_json(report.to_dict(), os.path.join(out_dir, "report.json"))
    write_json(report.config, os.path.join(out_dir, "config.json"))
    write_steps_csv(report.steps, os.path.join(out_dir, "metrics.csv"))
    write_history_csv(report.history, os.path.join(out_dir, "history.csv"))
    save_checkpoint(state, os.path.join(out_dir, "checkpoint.bin"))


def render_run_figures(report: dict, out_dir) -> list[str]:
    """Loss curves and the validation metric curve for one training run."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    history = report.get("history", [])
    if history:
        epochs = [h["epoch"] for h in history]
        fig, ax = plt.subplots(figsize=(6, 4))
        for term in ("l_sup", "l_causal", "l_kl", "l_int", "l_final"):
            ax.plot(epochs, [h[term] for h in history], label=term)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss (epoch mean)")
        ax.set_yscale("log")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, "training_losses.png")
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

        metric_keys = sorted((history[0].get("valid") or {}).keys())
        if metric_keys:
            fig, ax = plt.subplots(figsize=(6, 4))
            for key in metric_keys:
                vals = [(h["valid"] or {}).get(key) for h in history]
                ax.plot(epochs, [np.nan if v is None else v for v in vals], label=key)
            if report.get("best_epoch", -1) >= 0:
                ax.axvline(report["best_epoch"], color="gray", ls="--", lw=1, label="best epoch")
            ax.set_xlabel("epoch")
            ax.set_ylabel("validation metric")
            ax.legend(fontsize=8)
            fig.tight_layout()
            path = os.path.join(out_dir, "validation_metric.png")
            fig.savefig(path, dpi=150)
            plt.close(fig)
            written.append(path)
    return written


def write_cv_csv(result: dict, path) -> None:
    """Flat (run, epoch, metric...) rows across all cross-validation runs."""
    metric_keys = sorted(result["aggregate"]["mean"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "epoch", "l_final"] + [f"valid_{k}" for k in metric_keys])
        for run_idx, report in enumerate(result["reports"]):
            for rec in report["history"]:
                valid = rec.get("valid") or {}
                writer.writerow([run_idx, rec["epoch"], rec["l_final"]]
                                + [valid.get(k) for k in metric_keys])


def write_sweep_csv(sweep: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bias", "ablation", "seed", "accuracy", "auroc"])
        for cell in sweep["cells"]:
            writer.writerow([
                cell["bias"], cell["ablation"], cell["seed"],
                cell["test"].get("accuracy"), cell["test"].get("auroc"),
            ])


def render_sweep_figures(sweep: dict, out_dir) -> list[str]:
    """Accuracy-vs-bias curves per ablation plus the gap series."""
    os.makedirs(out_dir, exist_ok=True)
    levels = sweep["levels"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    for ablation in sweep["ablations"]:
        means = [sweep["aggregate"][f"{b:g}"][ablation]["mean"] for b in levels]
        stds = [sweep["aggregate"][f"{b:g}"][ablation]["std"] for b in levels]
        ax1.errorbar(levels, means, yerr=stds, marker="o", capsize=3, label=ablation)
    ax1.set_xlabel("bias level b")
    ax1.set_ylabel("test accuracy")
    ax1.invert_xaxis()  # bias gets more severe to the right
    ax1.legend()
    if sweep.get("gap"):
        gaps = [sweep["gap"][f"{b:g}"] for b in levels]
        ax2.plot(levels, gaps, marker="s", color="tab:red")
        ax2.axhline(0.0, color="gray", lw=1)
        ax2.set_xlabel("bias level b")
        ax2.set_ylabel("accuracy gap (full - no_causal)")
        ax2.invert_xaxis()
    fig.tight_layout()
    path = os.path.join(out_dir, "bias_sweep.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    write_sweep_csv(sweep, os.path.join(out_dir, "bias_sweep.csv"))
    return [path]


def dump_interaction_map(imap: np.ndarray, path) -> None:
    """Plain text matrix, one row of similarities per atom of graph 1."""
    np.savetxt(path, imap, fmt="%.17g")
