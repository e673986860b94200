"""Merged comparison tables and SVG plots over a directory of training runs."""

import csv
import math
import os

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "datcnn"
import matplotlib.pyplot as plt

import numpy as np

from . import io as F
from .errors import DataError
from .evaluate import format_mean_std

METRICS = ("acc", "sens", "spec", "f1", "bal_acc")
SPATIAL_COLOR = {"u": "tab:blue", "w": "tab:orange"}


def discover_runs(results_dir):
    """Run directories are subdirectories holding config.txt and folds.csv."""
    runs = []
    if not os.path.isdir(results_dir):
        raise DataError(f"{results_dir}: not a directory")
    for name in sorted(os.listdir(results_dir)):
        path = os.path.join(results_dir, name)
        if (os.path.isfile(os.path.join(path, "config.txt"))
                and os.path.isfile(os.path.join(path, "folds.csv"))):
            runs.append(path)
    if not runs:
        raise DataError(f"{results_dir}: no training runs found")
    return runs


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def load_run(path):
    cfg = F.read_config(os.path.join(path, "config.txt"))
    header, rows = _read_csv(os.path.join(path, "folds.csv"))
    if header != ["fold"] + list(METRICS):
        raise DataError(f"{path}: unexpected folds.csv header {header}")
    folds = {name: np.array([float(r[i + 1]) for r in rows])
             for i, name in enumerate(METRICS)}
    _, roc_rows = _read_csv(os.path.join(path, "roc.csv"))
    fpr = np.array([float(r[0]) for r in roc_rows])
    tpr = np.array([float(r[1]) for r in roc_rows])
    histories = []
    for i in range(len(rows)):
        hist_path = os.path.join(path, f"history_fold{i}.csv")
        if os.path.isfile(hist_path):
            _, hrows = _read_csv(hist_path)
            histories.append(np.array([float(r[2]) for r in hrows]))
    return {
        "name": os.path.basename(path),
        "model": cfg.get("model", "?"),
        "tag": cfg.get("tag", "?"),
        "loss": cfg.get("loss", "?"),
        "folds": folds,
        "fpr": fpr,
        "tpr": tpr,
        "auc": float(np.trapezoid(tpr, fpr)),
        "histories": histories,
    }


def merged_table(runs):
    """One line per run, metrics in the mean [std] layout."""
    header = f"{'model':<16} {'tag':<7} {'loss':<14} " + " ".join(
        f"{m:<15}" for m in METRICS) + " auc"
    lines = [header]
    for run in runs:
        cells = []
        for m in METRICS:
            vals = run["folds"][m]
            cells.append(f"{format_mean_std(float(vals.mean()), float(vals.std())):<15}")
        lines.append(f"{run['model']:<16} {run['tag']:<7} {run['loss']:<14} "
                     + " ".join(cells) + f" {run['auc']:.3f}")
    return "\n".join(lines) + "\n"


def _run_label(run):
    return f"{run['tag']} {run['loss']}"


def plot_accuracy_bands(runs, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run in runs:
        if not run["histories"]:
            continue
        hist = np.stack(run["histories"])
        epochs = np.arange(1, hist.shape[1] + 1)
        mean, std = hist.mean(axis=0), hist.std(axis=0)
        line, = ax.plot(epochs, mean, label=_run_label(run))
        ax.fill_between(epochs, mean - std, mean + std,
                        color=line.get_color(), alpha=0.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_roc_overlay(runs, path):
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for run in runs:
        ax.plot(run["fpr"], run["tpr"],
                label=f"{_run_label(run)} (auc={run['auc']:.3f})")
    ax.plot([0, 1], [0, 1], "k:", linewidth=0.8)
    ax.set_xlabel("1 - specificity")
    ax.set_ylabel("sensitivity")
    ax.legend(fontsize=7)
    _save(fig, path)


def plot_accuracy_box(runs, path):
    """Per-fold accuracy grouped by intensity kind, colored by spatial kind."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    intensities = ("no", "int", "max")
    spatials = ("u", "w")
    width = 0.35
    seen = set()
    for si, spatial in enumerate(spatials):
        positions, data = [], []
        for ii, intensity in enumerate(intensities):
            accs = [run["folds"]["acc"] for run in runs
                    if run["tag"] == f"{intensity}_{spatial}"]
            if not accs:
                continue
            positions.append(ii + (si - 0.5) * width)
            data.append(np.concatenate(accs))
        if not data:
            continue
        boxes = ax.boxplot(data, positions=positions, widths=width * 0.9,
                           patch_artist=True)
        for box in boxes["boxes"]:
            box.set_facecolor(SPATIAL_COLOR[spatial])
        seen.add(spatial)
    ax.set_xticks(range(len(intensities)))
    ax.set_xticklabels(intensities)
    ax.set_xlabel("intensity normalization")
    ax.set_ylabel("fold accuracy")
    handles = [plt.Line2D([], [], color=SPATIAL_COLOR[s], lw=6,
                          label={"u": "native space", "w": "registered"}[s])
               for s in sorted(seen)]
    ax.legend(handles=handles, fontsize=8)
    _save(fig, path)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_report(results_dir, out_file):
    """Merge all runs under results_dir into a table plus SVG plots."""
    runs = [load_run(p) for p in discover_runs(results_dir)]
    F.atomic_write_text(out_file, merged_table(runs))
    stem, _ = os.path.splitext(out_file)
    plot_accuracy_bands(runs, stem + "_acc.svg")
    plot_roc_overlay(runs, stem + "_roc.svg")
    if len(runs) > 1:
        plot_accuracy_box(runs, stem + "_box.svg")
    return runs
