"""Ground-truth geometry and benchmark metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage
from skimage.morphology import local_maxima


@dataclass(frozen=True)
class BoundingBox:
    """Integer rectangle: top-left ``(x, y)``, size ``w x h`` pixels."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box dimensions must be >= 1, got {self.w}x{self.h}")

    @classmethod
    def around(cls, cx: float, cy: float, w: int, h: int) -> "BoundingBox":
        """Box of size ``w x h`` whose centre pixel (``(w-1)//2`` etc.) is at ``(cx, cy)``."""
        return cls(int(round(cx)) - (w - 1) // 2, int(round(cy)) - (h - 1) // 2, w, h)

    @property
    def centre(self) -> tuple[int, int]:
        return self.x + (self.w - 1) // 2, self.y + (self.h - 1) // 2

    @property
    def area(self) -> int:
        return self.w * self.h

    def as_tuple(self) -> tuple[int, int, int, int]:
        return self.x, self.y, self.w, self.h

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x + self.w <= width and self.y + self.h <= height

    def clipped(self, width: int, height: int) -> "BoundingBox":
        """Shift (not shrink) the box so that it lies within the image where possible."""
        x = min(max(self.x, 0), max(width - self.w, 0))
        y = min(max(self.y, 0), max(height - self.h, 0))
        return BoundingBox(x, y, self.w, self.h)


def intersection(a: BoundingBox, b: BoundingBox) -> int:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    return max(iw, 0) * max(ih, 0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    inter = intersection(a, b)
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Homography:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float).reshape(3, 3)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise ValueError("homography is not invertible")
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def scaled(self, scale: float) -> "Homography":
        """Same mapping expressed in images resized by ``scale``: ``S H S^-1``."""
        s = np.diag([scale, scale, 1.0])
        return Homography(s @ self.matrix @ np.diag([1 / scale, 1 / scale, 1.0]))


def apply_homography(H, point) -> tuple[float, float]:
    m = H.matrix if isinstance(H, Homography) else Homography(H).matrix
    x, y, w = m @ np.array([point[0], point[1], 1.0])
    if abs(w) < 1e-12:
        raise ValueError(f"point {tuple(point)} maps to infinity")
    return x / w, y / w


@dataclass(frozen=True)
class EvalCurve:
    """Sampled curve plus summary.

    For success curves ``values`` are success fractions and ``summary`` the
    AUC. For precision-recall curves ``values`` are f-scores, ``precision``
    and ``recall`` are filled in and ``summary`` is the best f-score.
    """

    thresholds: np.ndarray
    values: np.ndarray
    summary: float
    precision: np.ndarray | None = None
    recall: np.ndarray | None = None

    @property
    def auc(self) -> float:
        return self.summary

    @property
    def best_fscore(self) -> float:
        return self.summary


def success_thresholds() -> np.ndarray:
    return np.linspace(0.0, 1.0, 101)


def success_curve(ious: Iterable[float], thresholds=None) -> EvalCurve:
    """Fraction of IoUs strictly above each threshold.

    The AUC is the exact area under that step function over the threshold
    range, normalised by its length. On the default ``[0, 1]`` grid it is
    the mean IoU; the sampled ``values`` are for plotting and tables.
    """
    ious = np.asarray(list(ious), dtype=float)
    if ious.size == 0:
        raise ValueError("success curve needs at least one IoU")
    if np.any((ious < 0) | (ious > 1)):
        raise ValueError("IoU values must lie in [0, 1]")
    t = success_thresholds() if thresholds is None else np.asarray(thresholds, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    values = (ious[None, :] > t[:, None]).mean(axis=1)
    lo, hi = float(t[0]), float(t[-1])
    auc = float(np.mean(np.clip(ious, lo, hi) - lo) / (hi - lo)) if hi > lo else float(values[0])
    return EvalCurve(t, values, auc)


def local_maxima_points(Y) -> list[tuple[int, int, float]]:
    """Regional maxima of ``Y`` over the 8-neighbourhood as ``(x, y, score)``.

    A plateau counts once if every pixel bordering it is lower; the reported
    pixel is the plateau member nearest its centroid. Constant arrays have
    no maxima.
    """
    Y = np.asarray(Y, dtype=float)
    mask = local_maxima(Y, connectivity=2, allow_borders=True)
    labels, n = ndimage.label(mask, structure=np.ones((3, 3)))
    if n == 0:
        return []
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    counts = np.bincount(lab, minlength=n + 1)
    singles = counts[lab] == 1
    out = [(int(x), int(y), float(Y[y, x])) for x, y in zip(xs[singles], ys[singles])]
    for idx in np.nonzero(counts[1:] > 1)[0] + 1:
        sel = lab == idx
        py, px = ys[sel], xs[sel]
        k = np.argmin((py - py.mean()) ** 2 + (px - px.mean()) ** 2)
        out.append((int(px[k]), int(py[k]), float(Y[py[k], px[k]])))
    return out


def _sorted_peaks(Y):
    # descending score, ties in row-major order
    return sorted(local_maxima_points(Y), key=lambda p: (-p[2], p[1], p[0]))


def top_k_peaks(Y, k: int) -> list[tuple[int, int, float]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return _sorted_peaks(Y)[:k]


def argmax_point(Y) -> tuple[int, int]:
    y, x = np.unravel_index(int(np.argmax(Y)), np.shape(Y))
    return int(x), int(y)


def detect_matches(Y, threshold: float, box_dims) -> list[tuple[BoundingBox, float]]:
    """Boxes around local maxima whose score exceeds ``threshold``."""
    bw, bh = box_dims
    H, W = np.shape(Y)
    return [(BoundingBox.around(x, y, bw, bh).clipped(W, H), s)
            for x, y, s in _sorted_peaks(Y) if s > threshold]


def match_detections(detections: Sequence[tuple[BoundingBox, float]], truths: Sequence[BoundingBox],
                     iou_min: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Greedy matching in descending score order.

    Returns ``(scores, is_tp)``. Each detection claims the unclaimed truth
    with the highest IoU, provided it reaches ``iou_min``; everything else is
    a false positive. Because higher scores are handled first, the matching
    of any score-prefix is the same as matching that prefix alone.
    """
    order = sorted(range(len(detections)), key=lambda i: -detections[i][1])
    scores = np.array([detections[i][1] for i in order], dtype=float)
    is_tp = np.zeros(len(order), dtype=bool)
    free = list(truths)
    for n, i in enumerate(order):
        if not free:
            break
        box = detections[i][0]
        overlaps = [iou(box, g) for g in free]
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_min:
            is_tp[n] = True
            free.pop(best)
    return scores, is_tp


def pr_from_matches(scores: np.ndarray, is_tp: np.ndarray, n_truth: int, thresholds=None,
                    n_thresholds: int = 101) -> EvalCurve:
    """Precision/recall/f-score sweep from pooled match results."""
    scores = np.asarray(scores, dtype=float)
    is_tp = np.asarray(is_tp, dtype=bool)
    if thresholds is None:
        top = float(scores.max()) if scores.size else 1.0
        thresholds = np.linspace(0.0, top if top > 0 else 1.0, n_thresholds)
    t = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    order = np.argsort(scores, kind="stable")
    s_sorted = scores[order]
    tp_cum = np.concatenate([[0], np.cumsum(is_tp[order][::-1])])[::-1]
    # count of detections (and of true positives) with score > t
    first_above = np.searchsorted(s_sorted, t, side="right")
    n_det = scores.size - first_above
    tp = tp_cum[first_above]
    fp = n_det - tp
    fn = n_truth - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(n_det > 0, tp / np.maximum(n_det, 1), 1.0)
        recall = np.where(n_truth > 0, tp / max(n_truth, 1), 1.0)
        denom = 2 * tp + fp + fn
        fscore = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 1.0)
    return EvalCurve(t, fscore.astype(float), float(fscore.max()), precision.astype(float), recall.astype(float))


def pr_curve(detections: Sequence[Sequence[tuple[BoundingBox, float]]],
             ground_truth: Sequence[BoundingBox | Sequence[BoundingBox] | None],
             iou_min: float = 0.5, thresholds=None) -> EvalCurve:
    """Pooled precision-recall over (template, image) cases.

    ``detections[c]`` lists ``(box, score)`` for case ``c`` and
    ``ground_truth[c]`` is that case's box, a list of boxes, or ``None``
    when the template does not occur in the image.
    """
    if len(detections) != len(ground_truth):
        raise ValueError("detections and ground truth must describe the same cases")
    all_scores, all_tp, n_truth = [], [], 0
    for dets, gt in zip(detections, ground_truth):
        truths = [] if gt is None else ([gt] if isinstance(gt, BoundingBox) else list(gt))
        s, tp = match_detections(dets, truths, iou_min)
        all_scores.append(s)
        all_tp.append(tp)
        n_truth += len(truths)
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    is_tp = np.concatenate(all_tp) if all_tp else np.zeros(0, dtype=bool)
    return pr_from_matches(scores, is_tp, n_truth, thresholds)
