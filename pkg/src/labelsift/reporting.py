"""Render run logs into figures and aggregate tables.

The CSV logs are the canonical record; figures are a convenience rendered
next to them. All plotting goes through the Agg backend so runs work
headless.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import read_csv  # noqa: E402


def _series(rows: list[dict], column: str, net_id: str | None = None):
    xs, ys = [], []
    for row in rows:
        if net_id is not None and row["net_id"] != net_id:
            continue
        if row[column] == "":
            continue
        xs.append(int(row["epoch"]))
        ys.append(float(row[column]))
    return xs, ys


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_reports(run_dir: str | Path) -> list[Path]:
    """Write the standard per-run figures next to metrics.csv/losses.csv."""
    run_dir = Path(run_dir)
    rows = read_csv(run_dir / "metrics.csv")
    out_paths = []

    fig, ax = plt.subplots(figsize=(6, 4))
    for column, label in (("test_acc_net1", "net 1"), ("test_acc_net2", "net 2"),
                          ("test_acc_ensemble", "ensemble")):
        xs, ys = _series([r for r in rows if r["net_id"] == "1"], column)
        ax.plot(xs, ys, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.legend()
    path = run_dir / "test_accuracy.png"
    _save(fig, path)
    out_paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for net in ("1", "2"):
        for column, style in (("precision", "-"), ("recall", "--"), ("f1", ":")):
            xs, ys = _series(rows, column, net)
            if xs:
                ax.plot(xs, ys, style, label=f"{column} net {net}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("selection quality")
    if ax.lines:
        ax.legend(fontsize=8)
    path = run_dir / "selection_quality.png"
    _save(fig, path)
    out_paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    for net in ("1", "2"):
        xs, ys = _series(rows, "pseudo_acc", net)
        if xs:
            ax.plot(xs, ys, label=f"net {net}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("pseudo-label accuracy")
    if ax.lines:
        ax.legend()
    path = run_dir / "pseudo_accuracy.png"
    _save(fig, path)
    out_paths.append(path)

    loss_file = run_dir / "losses.csv"
    if loss_file.exists():
        loss_rows = read_csv(loss_file)
        fig, ax = plt.subplots(figsize=(6, 4))
        for column in ("l_total", "l_cls", "l_cr", "l_mix"):
            xs, ys = _series(loss_rows, column, "1")
            ax.plot(xs, ys, label=column)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss (net 1)")
        ax.legend()
        path = run_dir / "losses.png"
        _save(fig, path)
        out_paths.append(path)
    return out_paths


def summarize_run(run_dir: str | Path) -> dict:
    """Headline numbers for one run directory, computed from metrics.csv."""
    run_dir = Path(run_dir)
    rows = [r for r in read_csv(run_dir / "metrics.csv") if r["net_id"] == "1"]
    ens = [float(r["test_acc_ensemble"]) for r in rows]
    precisions = [float(r["precision"]) for r in rows if r["precision"] != ""]
    recalls = [float(r["recall"]) for r in rows if r["recall"] != ""]
    pseudo = [float(r["pseudo_acc"]) for r in rows if r["pseudo_acc"] != ""]
    return {
        "run": run_dir.name,
        "epochs": len(ens),
        "best_ensemble": max(ens) if ens else float("nan"),
        "last10_ensemble": sum(ens[-10:]) / len(ens[-10:]) if ens else float("nan"),
        "final_precision": precisions[-1] if precisions else float("nan"),
        "final_recall": recalls[-1] if recalls else float("nan"),
        "last10_pseudo_acc": (sum(pseudo[-10:]) / len(pseudo[-10:])) if pseudo else float("nan"),
    }


def compare_runs(run_dirs: list[str | Path], out_dir: str | Path) -> Path:
    """Aggregate several runs into comparison.csv plus an overlay figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = [summarize_run(d) for d in run_dirs]

    table = out / "comparison.csv"
    with open(table, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(summaries[0].keys()))
        writer.writeheader()
        writer.writerows(summaries)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for run_dir in run_dirs:
        rows = [r for r in read_csv(Path(run_dir) / "metrics.csv") if r["net_id"] == "1"]
        xs = [int(r["epoch"]) for r in rows]
        ys = [float(r["test_acc_ensemble"]) for r in rows]
        ax.plot(xs, ys, label=Path(run_dir).name)
    ax.set_xlabel("epoch")
    ax.set_ylabel("ensemble test accuracy")
    ax.legend(fontsize=8)
    _save(fig, out / "comparison.png")
    return table
