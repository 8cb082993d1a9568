"""Harris keypoints, keypoint rejection rules, patch extraction and the
strategies for choosing additional (non-target) templates."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .evaluation import BoundingBox, apply_homography, intersection, local_maxima_points
from .imaging import ChannelStack, as_image, convert_colorspace
from .zncc import zncc_match

HARRIS_KAPPA = 0.04
HARRIS_SIGMA = 1.5
STRATEGIES = ("maxcorr", "keypoint", "random")


@dataclass(frozen=True)
class Keypoint:
    x: int
    y: int
    response: float


class FewKeypointsWarning(UserWarning):
    """Fewer keypoints than requested survived selection."""


def harris_response(img) -> np.ndarray:
    img = as_image(img)
    gray = convert_colorspace(img, "gray")[:, :, 0] if img.shape[2] == 3 else img[:, :, 0]
    gx = ndimage.sobel(gray, axis=1, mode="reflect")
    gy = ndimage.sobel(gray, axis=0, mode="reflect")
    sxx = ndimage.gaussian_filter(gx * gx, HARRIS_SIGMA, mode="reflect")
    syy = ndimage.gaussian_filter(gy * gy, HARRIS_SIGMA, mode="reflect")
    sxy = ndimage.gaussian_filter(gx * gy, HARRIS_SIGMA, mode="reflect")
    return sxx * syy - sxy * sxy - HARRIS_KAPPA * (sxx + syy) ** 2


def harris_detect(img, count: int | None = None, min_manhattan: int = 0) -> list[Keypoint]:
    """Harris corners in descending response order.

    Candidates are positive local maxima of the corner response (3x3
    suppression). They are accepted greedily, skipping any within
    ``min_manhattan`` (L1 distance, exclusive) of an accepted corner, until
    ``count`` are found. A :class:`FewKeypointsWarning` is issued when
    fewer than ``count`` exist.
    """
    r = harris_response(img)
    scale = float(np.abs(r).max())
    cands = []
    if scale > 0:
        peak = r == ndimage.maximum_filter(r, size=3, mode="nearest")
        # ignore round-off-level responses on flat regions
        ys, xs = np.nonzero(peak & (r > 1e-8 * scale) & (r > 1e-12))
        cands = sorted(zip(r[ys, xs], ys, xs), key=lambda c: (-c[0], c[1], c[2]))
    out: list[Keypoint] = []
    for resp, y, x in cands:
        if count is not None and len(out) >= count:
            break
        if min_manhattan > 0 and any(abs(k.x - x) + abs(k.y - y) < min_manhattan for k in out):
            continue
        out.append(Keypoint(int(x), int(y), float(resp)))
    if count is not None and len(out) < count:
        warnings.warn(f"only {len(out)} of {count} keypoints found", FewKeypointsWarning, stacklevel=2)
    return out


def filter_keypoints_vgg(kps: Sequence[Keypoint], tpl_w: int, tpl_h: int, img1_dims, img2_dims,
                         H, min_spacing: int = 24, count: int | None = 25) -> list[Keypoint]:
    """Keep keypoints whose templates are usable for correspondence.

    Rejects a keypoint when its template box leaves image 1, when the box
    around its mapped location leaves any query image, or when it lies
    closer (L1) than ``min(min_spacing, template size)`` to a keypoint
    already kept. ``img2_dims`` and ``H`` may be single values or parallel
    lists covering several query images. Dimensions are ``(width, height)``.
    """
    hs = list(H) if isinstance(H, (list, tuple)) else [H]
    dims2 = list(img2_dims) if isinstance(img2_dims[0], (list, tuple)) else [img2_dims]
    if len(dims2) == 1 and len(hs) > 1:
        dims2 = dims2 * len(hs)
    spacing = min(min_spacing, max(tpl_w, tpl_h))
    kept: list[Keypoint] = []
    for kp in sorted(kps, key=lambda k: -k.response):
        if count is not None and len(kept) >= count:
            break
        if not BoundingBox.around(kp.x, kp.y, tpl_w, tpl_h).inside(*img1_dims):
            continue
        ok = True
        for h, (w2, h2) in zip(hs, dims2):
            try:
                mx, my = apply_homography(h, (kp.x, kp.y))
            except ValueError:
                ok = False
                break
            if not np.isfinite(mx) or not np.isfinite(my) or \
                    not BoundingBox.around(mx, my, tpl_w, tpl_h).inside(w2, h2):
                ok = False
                break
        if not ok:
            continue
        if any(abs(k.x - kp.x) + abs(k.y - kp.y) < spacing for k in kept):
            continue
        kept.append(kp)
    return kept


def extract_patch(source, box) -> np.ndarray:
    """Copy the region ``box`` out of an image or a preprocessed stack.

    ``box`` is a :class:`BoundingBox` or ``(x, y, w, h)`` in original image
    coordinates. Images give ``(h, w, C)``; stacks give ``(k, h, w)`` taken
    from the padded planes.
    """
    x, y, w, h = box.as_tuple() if isinstance(box, BoundingBox) else (int(v) for v in box)
    if isinstance(source, ChannelStack):
        H, W = source.original_shape
        oy, ox = source.pad.top, source.pad.left
        arr = source.planes
    else:
        arr = as_image(source)
        H, W = arr.shape[:2]
        oy = ox = 0
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise ValueError(f"box {(x, y, w, h)} is outside the {W}x{H} image")
    if isinstance(source, ChannelStack):
        return arr[:, oy + y:oy + y + h, ox + x:ox + x + w].copy()
    return arr[y:y + h, x:x + w].copy()


@dataclass(frozen=True)
class SelectionStrategy:
    """How additional templates are chosen.

    ``kind`` is ``maxcorr``, ``keypoint`` or ``random``. With ``source`` set,
    the strategy runs on that unrelated image instead of the target's.
    """

    kind: str = "maxcorr"
    max_count: int = 4
    source: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.max_count < 0:
            raise ValueError("max_count must be >= 0")


def _greedy_boxes(centres, w, h, W, H, blocked, max_count):
    boxes: list[BoundingBox] = []
    for cx, cy in centres:
        if len(boxes) >= max_count:
            break
        b = BoundingBox.around(cx, cy, w, h).clipped(W, H)
        if any(intersection(b, o) > 0 for o in blocked) or any(intersection(b, o) > 0 for o in boxes):
            continue
        boxes.append(b)
    return boxes


def select_additional(img1, target_box: BoundingBox, strategy: SelectionStrategy,
                      colorspace: str = "hsv") -> list[BoundingBox]:
    """Boxes for additional templates, target-sized and mutually disjoint.

    Boxes never overlap each other nor (when taken from the target's own
    image) the target box. Fewer than ``max_count`` are returned when no
    more fit. The boxes refer to ``strategy.source`` when that is set.
    """
    if strategy.max_count == 0:
        return []
    img1 = as_image(img1)
    if not target_box.inside(img1.shape[1], img1.shape[0]):
        raise ValueError("target box must lie inside the first image")
    w, h = target_box.w, target_box.h
    if strategy.source is not None:
        img = as_image(strategy.source)
        blocked: list[BoundingBox] = []
    else:
        img = img1
        blocked = [target_box]
    H, W = img.shape[:2]
    if w > W or h > H:
        return []

    if strategy.kind == "maxcorr":
        tpl = extract_patch(img1, target_box)
        if tpl.shape[2] != img.shape[2]:
            raise ValueError("target and source images differ in channel count")
        try:
            corr = zncc_match(img, tpl, colorspace)
        except ValueError:
            return []
        peaks = sorted(local_maxima_points(corr), key=lambda p: (-p[2], p[1], p[0]))
        centres = [(x, y) for x, y, _ in peaks]
        return _greedy_boxes(centres, w, h, W, H, blocked, strategy.max_count)

    if strategy.kind == "keypoint":
        kps = harris_detect(img)
        return _greedy_boxes([(k.x, k.y) for k in kps], w, h, W, H, blocked, strategy.max_count)

    rng = np.random.default_rng(strategy.seed)
    attempts = 200 * strategy.max_count + 1000
    xs = rng.integers(0, W - w + 1, size=attempts)
    ys = rng.integers(0, H - h + 1, size=attempts)
    centres = [(x + (w - 1) // 2, y + (h - 1) // 2) for x, y in zip(xs, ys)]
    return _greedy_boxes(centres, w, h, W, H, blocked, strategy.max_count)
