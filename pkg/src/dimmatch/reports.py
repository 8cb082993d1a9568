"""CSV and PNG report writers for the CLI."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .evaluation import BoundingBox, EvalCurve
from .imaging import as_image, save_image


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in row])
    return path


def write_success_csv(path, curves: dict[str, EvalCurve]) -> Path:
    names = list(curves)
    t = curves[names[0]].thresholds
    return write_csv(path, ["threshold", *names], ([float(t[i])] + [float(curves[n].values[i]) for n in names]
                                                   for i in range(len(t))))


def write_pr_csv(path, curve: EvalCurve) -> Path:
    return write_csv(path, ["threshold", "precision", "recall", "fscore"],
                     ((float(t), float(p), float(r), float(f))
                      for t, p, r, f in zip(curve.thresholds, curve.precision, curve.recall, curve.values)))


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_success(path, curves: dict[str, EvalCurve], title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, c in curves.items():
        ax.plot(c.thresholds, c.values, label=f"{name} (AUC {c.auc:.3f})")
    ax.set_xlabel("overlap threshold")
    ax.set_ylabel("success rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower left", fontsize="small")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def plot_pr(path, curves: dict[str, EvalCurve], title: str = "") -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for name, c in curves.items():
        ax.plot(c.recall, c.precision, label=f"{name} (f {c.best_fscore:.3f})")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower left", fontsize="small")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)


def save_heatmap(path, S) -> Path:
    """Min-max scaled grayscale PNG of a similarity map."""
    S = np.asarray(S, dtype=float)
    lo, hi = float(S.min()), float(S.max())
    scaled = (S - lo) / (hi - lo) if hi > lo else np.zeros_like(S)
    save_image(path, scaled)
    return Path(path)


def draw_boxes(img, boxes: Sequence[BoundingBox], colours: Sequence[tuple[float, float, float]]) -> np.ndarray:
    """Return an RGB copy of ``img`` with one-pixel box outlines."""
    img = as_image(img)
    out = np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img.copy()
    H, W = out.shape[:2]
    for b, col in zip(boxes, colours):
        x0, y0 = max(b.x, 0), max(b.y, 0)
        x1, y1 = min(b.x + b.w - 1, W - 1), min(b.y + b.h - 1, H - 1)
        if x0 > x1 or y0 > y1:
            continue
        for yy in {y0, y1}:
            out[yy, x0:x1 + 1] = col
        for xx in {x0, x1}:
            out[y0:y1 + 1, xx] = col
    return out
