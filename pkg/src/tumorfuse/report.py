"""Report files: curves.csv, confusion.csv, summary.txt and SVG figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .pipeline import BRANCH_ORDER, Metrics  # noqa: E402

LABEL_NAMES = ("tumor", "notumor")
SVG_SALT = "tumorfuse"


def _writable_dir(outdir) -> Path:
    outdir = Path(outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {outdir}: {exc}") from exc
    return outdir


def _fmt(value: float) -> str:
    return repr(float(value))


def write_curves(metrics: Metrics, path: Path) -> int:
    """One row per (epoch, branch, split); returns the row count."""
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "branch", "split", "loss", "accuracy"])
        for branch in BRANCH_ORDER:
            for rec in metrics.curves.get(branch, []):
                writer.writerow([rec.epoch, branch, "train", _fmt(rec.train_loss), _fmt(rec.train_accuracy)])
                writer.writerow([rec.epoch, branch, "validation", _fmt(rec.val_loss), _fmt(rec.val_accuracy)])
                rows += 2
    return rows


def write_confusion(metrics: Metrics, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["true_label", "predicted_tumor", "predicted_notumor"])
        for k, name in enumerate(LABEL_NAMES):
            writer.writerow([name, int(metrics.confusion[k, 0]), int(metrics.confusion[k, 1])])


def summary_text(metrics: Metrics) -> str:
    lines = [
        f"fused accuracy: {metrics.accuracy:.4f}",
        *(f"{name} accuracy: {metrics.branch_accuracy[name]:.4f}" for name in BRANCH_ORDER),
        f"test samples: {metrics.total}",
        f"TP={metrics.tp} FP={metrics.fp} FN={metrics.fn} TN={metrics.tn} (positive class: tumor)",
    ]
    return "\n".join(lines) + "\n"


def _save_svg(fig, path: Path) -> None:
    # fixed hash salt and no date keep the SVG byte-identical across runs
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_curves(metrics: Metrics, branch: str, path: Path) -> None:
    recs = metrics.curves.get(branch, [])
    epochs = [r.epoch for r in recs]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3.2))
    ax_loss.plot(epochs, [r.train_loss for r in recs], marker="o", label="train")
    ax_loss.plot(epochs, [r.val_loss for r in recs], marker="s", label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_acc.plot(epochs, [r.train_accuracy for r in recs], marker="o", label="train")
    ax_acc.plot(epochs, [r.val_accuracy for r in recs], marker="s", label="validation")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.legend(loc="lower right")
    fig.suptitle(branch)
    fig.tight_layout()
    _save_svg(fig, path)


def plot_confusion(metrics: Metrics, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(3.6, 3.2))
    ax.imshow(metrics.confusion, cmap="Blues")
    for i in range(2):
        for j in range(2):
            ax.text(j, i, str(int(metrics.confusion[i, j])), ha="center", va="center")
    ax.set_xticks([0, 1], labels=LABEL_NAMES)
    ax.set_yticks([0, 1], labels=LABEL_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"fused accuracy {metrics.accuracy:.4f}")
    fig.tight_layout()
    _save_svg(fig, path)


def write_report(metrics: Metrics, outdir) -> list[Path]:
    outdir = _writable_dir(outdir)
    paths = [outdir / "curves.csv", outdir / "confusion.csv", outdir / "summary.txt"]
    write_curves(metrics, paths[0])
    write_confusion(metrics, paths[1])
    paths[2].write_text(summary_text(metrics))
    for branch in BRANCH_ORDER:
        p = outdir / f"{branch}_curves.svg"
        plot_curves(metrics, branch, p)
        paths.append(p)
    p = outdir / "confusion.svg"
    plot_confusion(metrics, p)
    paths.append(p)
    return paths


def save_metrics(metrics: Metrics, path) -> None:
    Path(path).write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n")


def load_metrics(path) -> Metrics:
    return Metrics.from_dict(json.loads(Path(path).read_text()))
