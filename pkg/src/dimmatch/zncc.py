"""Zero-mean normalised cross-correlation baseline.

The map has the query image's size. Entry ``(y, x)`` scores the placement
whose template centre (``(h-1)//2, (w-1)//2``) sits on that pixel.
Placements that overhang the border and flat image patches score 0.
Colour images are scored per channel and the channel maps summed.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .convolution import ConvPlan, xcorr2_same
from .imaging import as_image, convert_colorspace

# a patch (or template) is flat when its two-pass summed squared deviation
# is below this fraction of its summed squares, i.e. rounding noise
_FLAT_TOL = 1e-24
# one-pass variances below this fraction of the summed squares have lost too
# many digits to cancellation and are recomputed two-pass
_ILL_TOL = 1e-4
_CHUNK = 1 << 22


def _box_sum(a, h, w):
    """Sums over every ``h x w`` window fully inside ``a`` (valid placements).

    Separable window sums rather than an integral image: cumulative totals
    grow with the image and their round-off swamps small patch variances.
    """
    rows = sliding_window_view(a, h, axis=0).sum(axis=-1)
    return sliding_window_view(rows, w, axis=1).sum(axis=-1)


def _refine(plane, t0, idx):
    """Two-pass numerator and variance for the windows at ``idx``."""
    h, w = t0.shape
    windows = sliding_window_view(plane, (h, w))
    ys, xs = idx
    num = np.empty(ys.size)
    var = np.empty(ys.size)
    step = max(1, _CHUNK // (h * w))
    for s in range(0, ys.size, step):
        p = windows[ys[s:s + step], xs[s:s + step]]
        d = p - p.mean(axis=(1, 2), keepdims=True)
        num[s:s + step] = np.einsum("kij,ij->k", d, t0)
        var[s:s + step] = np.einsum("kij,kij->k", d, d)
    return num, var


def zncc_channel(plane, tpl, plan=None):
    """Valid-placement ZNCC of one channel, shape ``(H-h+1, W-w+1)``.

    Returns ``None`` for a flat template channel.
    """
    plane = np.asarray(plane, dtype=float)
    # ZNCC ignores offsets; centring keeps the window sums small
    plane = plane - plane.mean()
    tpl = np.asarray(tpl, dtype=float)
    h, w = tpl.shape
    n = h * w
    t0 = tpl - tpl.mean()
    tnorm2 = float(np.sum(t0 * t0))
    if tnorm2 <= _FLAT_TOL * float(np.sum(tpl * tpl)):
        return None
    # correlate the zero-mean template; the patch mean then drops out
    num_same = xcorr2_same(plane, t0, plan)
    cy, cx = (h - 1) // 2, (w - 1) // 2
    H, W = plane.shape
    num = num_same[cy:cy + H - h + 1, cx:cx + W - w + 1].copy()
    s1 = _box_sum(plane, h, w)
    s2 = _box_sum(plane * plane, h, w)
    pvar = np.maximum(s2 - s1 * s1 / n, 0.0)
    ill = pvar <= _ILL_TOL * s2
    if ill.any():
        # exactly constant windows are flat; only the rest need refining
        oy, ox = h // 2, w // 2
        vh, vw = num.shape
        spread = (ndimage.maximum_filter(plane, (h, w)) - ndimage.minimum_filter(plane, (h, w)))
        const = spread[oy:oy + vh, ox:ox + vw] == 0
        pvar[ill & const] = 0.0
        idx = np.nonzero(ill & ~const)
        if idx[0].size:
            num[idx], pvar[idx] = _refine(plane, t0, idx)
    ok = pvar > _FLAT_TOL * s2
    out = np.zeros_like(num)
    out[ok] = num[ok] / np.sqrt(pvar[ok] * tnorm2)
    return np.clip(out, -1.0, 1.0)


def zncc_match(img, tpl, colorspace: str = "hsv", plan: ConvPlan | None = None) -> np.ndarray:
    """Image-sized ZNCC similarity map of template ``tpl`` over ``img``.

    Both inputs are RGB or grayscale images; colour inputs are first
    converted to ``colorspace``. Values lie in ``[-C, C]`` for ``C``
    channels.
    """
    img = as_image(img)
    tpl = as_image(tpl)
    if img.shape[2] == 3 and tpl.shape[2] == 3:
        img = convert_colorspace(img, colorspace)
        tpl = convert_colorspace(tpl, colorspace)
    if img.shape[2] != tpl.shape[2]:
        raise ValueError(f"channel mismatch: image {img.shape[2]}, template {tpl.shape[2]}")
    h, w = tpl.shape[:2]
    H, W = img.shape[:2]
    if h > H or w > W:
        raise ValueError(f"template {w}x{h} larger than image {W}x{H}")
    cy, cx = (h - 1) // 2, (w - 1) // 2
    out = np.zeros((H, W))
    used = 0
    for c in range(img.shape[2]):
        valid = zncc_channel(img[:, :, c], tpl[:, :, c], plan)
        if valid is None:
            continue
        used += 1
        out[cy:cy + H - h + 1, cx:cx + W - w + 1] += valid
    if used == 0:
        raise ValueError("degenerate template: zero variance in every channel")
    return out

