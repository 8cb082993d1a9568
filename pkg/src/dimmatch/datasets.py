"""Benchmark dataset loaders and a synthetic scene generator.

BBS correspondence layout (one directory)::

    <case>_1.<ext>   first frame
    <case>_2.<ext>   second frame
    <case>_gt.txt    two lines "x y w h": target box in frame 1, then frame 2

Boxes are 0-based top-left pixel coordinates. Cases are ordered by natural
sort of ``<case>``.

VGG affine-covariant layout (one directory per sequence, as distributed)::

    img1.ppm ... img6.ppm       (or .pgm / .png)
    H1to2p ... H1to6p           nine floats, row-major 3x3
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .evaluation import BoundingBox, Homography
from .imaging import as_image, load_image, resize_image, save_image

IMAGE_EXTS = (".png", ".ppm", ".pgm", ".jpg", ".jpeg", ".bmp")
DATASET_ENV = "DIM_DATASET_ROOT"


class DatasetError(ValueError):
    pass


def _natural_key(s: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", s)]


def _find_image(root: Path, stem: str) -> Path | None:
    for ext in IMAGE_EXTS:
        p = root / f"{stem}{ext}"
        if p.exists():
            return p
    return None


def dataset_root(explicit=None, sub: str | None = None) -> Path | None:
    """Resolve a dataset directory from an explicit path or ``$DIM_DATASET_ROOT``."""
    base = explicit or os.environ.get(DATASET_ENV)
    if not base:
        return None
    p = Path(base)
    if sub is not None and (p / sub).is_dir():
        p = p / sub
    return p


@dataclass
class PairCase:
    name: str
    image1: Path
    image2: Path
    gt_box1: BoundingBox
    gt_box2: BoundingBox
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def load(self) -> tuple[np.ndarray, np.ndarray]:
        if "imgs" not in self._cache:
            self._cache["imgs"] = (load_image(self.image1), load_image(self.image2))
        return self._cache["imgs"]


def _parse_box(line: str, where: str) -> BoundingBox:
    parts = line.replace(",", " ").split()
    if len(parts) != 4:
        raise DatasetError(f"{where}: expected 'x y w h', got {line!r}")
    try:
        x, y, w, h = (int(round(float(v))) for v in parts)
        return BoundingBox(x, y, w, h)
    except ValueError as e:
        raise DatasetError(f"{where}: {e}") from None


def _image_dims(path: Path) -> tuple[int, int]:
    with PILImage.open(path) as im:
        return im.size


def load_bbs_dataset(root) -> list[PairCase]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"BBS dataset directory not found: {root}")
    names = sorted((p.name[:-len("_gt.txt")] for p in root.glob("*_gt.txt")), key=_natural_key)
    if not names:
        raise DatasetError(f"no '*_gt.txt' files in {root}")
    cases = []
    for name in names:
        im1, im2 = _find_image(root, f"{name}_1"), _find_image(root, f"{name}_2")
        if im1 is None or im2 is None:
            raise DatasetError(f"case {name}: missing image file(s)")
        lines = [l for l in (root / f"{name}_gt.txt").read_text().splitlines() if l.strip()]
        if len(lines) != 2:
            raise DatasetError(f"case {name}: ground truth must have 2 lines, found {len(lines)}")
        b1 = _parse_box(lines[0], f"case {name} line 1")
        b2 = _parse_box(lines[1], f"case {name} line 2")
        for box, path in ((b1, im1), (b2, im2)):
            if not box.inside(*_image_dims(path)):
                raise DatasetError(f"case {name}: box {box.as_tuple()} exceeds image {path.name}")
        cases.append(PairCase(name, im1, im2, b1, b2))
    return cases


def write_bbs_case(root, name: str, img1, img2, box1: BoundingBox, box2: BoundingBox) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_image(root / f"{name}_1.png", img1)
    save_image(root / f"{name}_2.png", img2)
    (root / f"{name}_gt.txt").write_text(
        "\n".join(" ".join(str(v) for v in b.as_tuple()) for b in (box1, box2)) + "\n")


@dataclass
class SequenceCase:
    name: str
    images: list[np.ndarray]
    homographies: list[Homography]
    scale: float = 1.0

    @property
    def grayscale(self) -> bool:
        return self.images[0].shape[2] == 1


def read_homography(path) -> Homography:
    vals = np.array(Path(path).read_text().split(), dtype=float)
    if vals.size != 9:
        raise DatasetError(f"{path}: expected 9 numbers, found {vals.size}")
    try:
        return Homography(vals.reshape(3, 3))
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from None


def write_homography(path, H) -> None:
    m = H.matrix if isinstance(H, Homography) else np.asarray(H, dtype=float)
    Path(path).write_text("\n".join(" ".join(repr(float(v)) for v in row) for row in m) + "\n")


def load_vgg_sequence(root, scale: float = 0.5) -> SequenceCase:
    """Load six images and five homographies, resized by ``scale``."""
    root = Path(root)
    if not scale > 0:
        raise DatasetError("scale must be positive")
    images = []
    for k in range(1, 7):
        p = _find_image(root, f"img{k}")
        if p is None:
            raise DatasetError(f"sequence {root.name}: missing img{k}")
        img = load_image(p)
        images.append(img if scale == 1 else resize_image(img, scale))
    hs = []
    for k in range(2, 7):
        p = root / f"H1to{k}p"
        if not p.exists():
            raise DatasetError(f"sequence {root.name}: missing H1to{k}p")
        H = read_homography(p)
        hs.append(H if scale == 1 else H.scaled(scale))
    return SequenceCase(root.name, images, hs, scale)


def load_vgg_dataset(root, scale: float = 0.5) -> list[SequenceCase]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"VGG dataset directory not found: {root}")
    seqs = sorted((d for d in root.iterdir() if d.is_dir() and _find_image(d, "img1")),
                  key=lambda d: _natural_key(d.name))
    if not seqs:
        raise DatasetError(f"no sequences under {root}")
    return [load_vgg_sequence(d, scale) for d in seqs]


def _smooth_noise(rng, shape, sigma):
    a = rng.random(shape)
    if sigma > 0:
        a = ndimage.gaussian_filter(a, (sigma, sigma, 0), mode="reflect")
        a = (a - a.min()) / max(a.max() - a.min(), 1e-12)
    return a


def packing_capacity(tpl_dims, img_dims) -> int:
    (tw, th), (W, H) = tpl_dims, img_dims
    return (W // tw) * (H // th)


def synth_scene(seed: int, n_plants: int, tpl_dims=(17, 17), img_dims=(128, 128), noise_sigma: float = 0.0,
                channels: int = 3, clean: bool = False):
    """Textured background with ``n_plants`` random, non-overlapping patches.

    Returns ``(image, boxes, patches)`` where ``patches`` are the noise-free
    planted pixels; with ``clean=True`` a fourth element, the noise-free
    scene, is appended. Pixel noise is Gaussian with ``noise_sigma`` and the
    result is clipped to ``[0, 1]``.
    """
    tw, th = tpl_dims
    W, H = img_dims
    if n_plants < 0 or tw < 1 or th < 1 or tw > W or th > H:
        raise ValueError("invalid scene geometry")
    if n_plants > packing_capacity(tpl_dims, img_dims):
        raise ValueError(f"{n_plants} plants of {tw}x{th} cannot fit in {W}x{H}")
    rng = np.random.default_rng(seed)
    scene = 0.2 + 0.6 * _smooth_noise(rng, (H, W, channels), 3.0)
    boxes: list[BoundingBox] = []
    for _ in range(200 * max(n_plants, 1)):
        if len(boxes) == n_plants:
            break
        b = BoundingBox(int(rng.integers(0, W - tw + 1)), int(rng.integers(0, H - th + 1)), tw, th)
        if all(_disjoint(b, o) for o in boxes):
            boxes.append(b)
    if len(boxes) < n_plants:
        # random placement got stuck; fall back to random grid cells
        cells = rng.permutation(packing_capacity(tpl_dims, img_dims))[:n_plants]
        cols = W // tw
        boxes = [BoundingBox(int(c % cols) * tw, int(c // cols) * th, tw, th) for c in cells]
    patches = []
    for b in boxes:
        patch = _smooth_noise(rng, (th, tw, channels), 1.0)
        scene[b.y:b.y + th, b.x:b.x + tw] = patch
        patches.append(as_image(patch))
    image = scene
    if noise_sigma > 0:
        image = np.clip(scene + rng.normal(0.0, noise_sigma, scene.shape), 0.0, 1.0)
    if clean:
        return as_image(image), boxes, patches, as_image(scene)
    return as_image(image), boxes, patches


def _disjoint(a: BoundingBox, b: BoundingBox) -> bool:
    return (a.x + a.w <= b.x or b.x + b.w <= a.x or a.y + a.h <= b.y or b.y + b.h <= a.y)
