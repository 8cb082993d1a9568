"""Image representation, colour conversion, padding, blurring and the
ON/OFF preprocessing that turns intensities into non-negative planes.

Images are plain float64 arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and values in ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage
from skimage import color as skcolor

COLORSPACES = ("gray", "rgb", "lab", "hsv")

# ITU-R BT.601 luma weights, the same ones MATLAB's rgb2gray uses.
_LUMA = np.array([0.2989, 0.5870, 0.1140])
_LUMA = _LUMA / _LUMA.sum()


class Pad(NamedTuple):
    left: int = 0
    right: int = 0
    top: int = 0
    bottom: int = 0


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float
    radius: int | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.radius is None:
            object.__setattr__(self, "radius", max(1, math.ceil(3 * self.sigma)))
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")

    def kernel1d(self) -> np.ndarray:
        x = np.arange(-self.radius, self.radius + 1, dtype=float)
        k = np.exp(-0.5 * (x / self.sigma) ** 2)
        return k / k.sum()


@dataclass
class ChannelStack:
    """``k`` non-negative planes of identical size plus the padding that was
    applied to the source image before they were computed."""

    planes: np.ndarray
    pad: Pad = field(default_factory=Pad)

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=float)
        if self.planes.ndim != 3:
            raise ValueError("planes must have shape (k, H, W)")
        self.pad = Pad(*self.pad)

    @property
    def k(self) -> int:
        return self.planes.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1:]

    @property
    def original_shape(self) -> tuple[int, int]:
        h, w = self.shape
        p = self.pad
        return h - p.top - p.bottom, w - p.left - p.right

    def cropped(self) -> np.ndarray:
        h, w = self.original_shape
        return self.planes[:, self.pad.top:self.pad.top + h, self.pad.left:self.pad.left + w]


def as_image(arr) -> np.ndarray:
    """Coerce ``arr`` to a validated ``(H, W, C)`` float image."""
    img = np.asarray(arr, dtype=float)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W), (H, W, 1) or (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must be at least 1x1")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def load_image(path) -> np.ndarray:
    """Read PNG/PPM/PGM (or anything Pillow reads) into a [0, 1] float image."""
    path = Path(path)
    with PILImage.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            data = np.asarray(im, dtype=float) / 65535.0
        else:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            data = np.asarray(im, dtype=float) / 255.0
    return as_image(data)


def save_image(path, img) -> None:
    img = as_image(img)
    data = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(Path(path))


def resize_image(img, scale: float) -> np.ndarray:
    """Rescale by ``scale`` with bicubic interpolation (antialiased when shrinking)."""
    img = as_image(img)
    h, w = img.shape[:2]
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    planes = []
    for c in range(img.shape[2]):
        pim = PILImage.fromarray(img[:, :, c].astype(np.float32), mode="F")
        planes.append(np.asarray(pim.resize(size, PILImage.Resampling.BICUBIC), dtype=float))
    return as_image(np.clip(np.stack(planes, axis=2), 0.0, 1.0))


def convert_colorspace(img, target: str) -> np.ndarray:
    """Convert an RGB (or grayscale) image to ``target``.

    ``gray`` collapses to a single luminance channel. ``lab`` and ``hsv``
    are rescaled into ``[0, 1]``: L* by 1/100, a* and b* affinely from
    ``[-128, 127]``.
    """
    img = as_image(img)
    target = target.lower()
    if target not in COLORSPACES:
        raise ValueError(f"unknown colorspace {target!r}; expected one of {COLORSPACES}")
    if img.shape[2] == 1:
        if target == "gray":
            return img.copy()
        raise ValueError("grayscale source cannot be converted to a 3-channel colorspace")
    if target == "gray":
        return img @ _LUMA[:, None]
    if target == "rgb":
        return img.copy()
    if target == "hsv":
        return skcolor.rgb2hsv(np.clip(img, 0, 1))
    lab = skcolor.rgb2lab(np.clip(img, 0, 1))
    lab[..., 0] /= 100.0
    lab[..., 1:] = (lab[..., 1:] + 128.0) / 255.0
    return lab


def mirror_pad(img, left: int, right: int, top: int, bottom: int) -> np.ndarray:
    """Pad by symmetric reflection, duplicating the edge pixel.

    ``[a, b, c]`` padded by one on each side gives ``[a, a, b, c, c]``.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    if min(left, right, top, bottom) < 0:
        raise ValueError("pad amounts must be non-negative")
    if max(left, right) > w or max(top, bottom) > h:
        raise ValueError(f"pad too large for {w}x{h} image: {(left, right, top, bottom)}")
    return np.pad(img, ((top, bottom), (left, right), (0, 0)), mode="symmetric")


def gaussian_blur(img, spec: GaussianSpec) -> np.ndarray:
    """Separable same-size Gaussian blur of every channel.

    Samples beyond the border are symmetric reflections, so constants are
    preserved everywhere; callers wanting border fidelity pad first.
    """
    img = as_image(img)
    k = spec.kernel1d()
    out = ndimage.correlate1d(img, k, axis=0, mode="reflect")
    return ndimage.correlate1d(out, k, axis=1, mode="reflect")


def sigma_for_template(template_w: int, template_h: int, factor: float = 0.5) -> float:
    return factor * min(template_w, template_h)


def preprocess(img, template_w: int, template_h: int, sigma: float | None = None) -> ChannelStack:
    """Split an image into rectified ON/OFF contrast planes.

    The image is mirror padded by the template width (left/right) and height
    (top/bottom), the local mean is estimated with a Gaussian of standard
    deviation ``sigma`` (default half the smaller template side), and
    ``2 * (I - mean)`` is split into positive and negative parts per channel.
    The result stays padded; ``ChannelStack.pad`` records by how much.
    """
    img = as_image(img)
    if template_w < 1 or template_h < 1:
        raise ValueError("template dimensions must be >= 1")
    if sigma is None:
        sigma = sigma_for_template(template_w, template_h)
    h, w = img.shape[:2]
    # reflection is limited to one image width; larger templates fall back to
    # repeated reflection which np.pad handles for us
    pad = Pad(template_w, template_w, template_h, template_h)
    if template_w <= w and template_h <= h:
        padded = mirror_pad(img, *pad)
    else:
        padded = np.pad(img, ((pad.top, pad.bottom), (pad.left, pad.right), (0, 0)), mode="symmetric")
    mean = gaussian_blur(padded, GaussianSpec(sigma))
    contrast = 2.0 * (padded - mean)
    planes = np.empty((2 * img.shape[2],) + padded.shape[:2])
    for c in range(img.shape[2]):
        planes[2 * c] = np.maximum(contrast[:, :, c], 0.0)
        planes[2 * c + 1] = np.maximum(-contrast[:, :, c], 0.0)
    return ChannelStack(planes, pad)
