"""Template matching by Divisive Input Modulation (DIM).

Templates compete to reconstruct the non-negative input planes ``X``.
One iteration computes::

    R_i = sum_j conv(Y_j, v_ji)
    E_i = X_i / max(eps2, R_i)
    Y_j = max(eps1, Y_j) * sum_i xcorr(E_i, w_ji)

starting from ``Y = 0``. Each template's ``w`` sums to one over all of its
channels and pixels; ``v`` is the same template scaled to a peak of one.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .convolution import ConvPlan, KernelSpectra, conv2_same, fft_shape, xcorr2_same
from .imaging import ChannelStack, Pad, as_image, convert_colorspace, preprocess, sigma_for_template

log = logging.getLogger(__name__)

# above this many bytes of cached kernel spectra, spectra are recomputed per use
SPECTRA_CACHE_LIMIT = 768 * 2**20


@dataclass(frozen=True)
class DimParams:
    epsilon2: float = 1e-2
    epsilon1: float | None = None
    epsilon1_scale: float = 1.0
    iterations: int | None = None
    lam: float = 0.025
    sigma_factor: float = 0.5
    conv_mode: str = "auto"

    def __post_init__(self):
        if not self.epsilon2 > 0:
            raise ValueError("epsilon2 must be positive")
        if self.epsilon1 is not None and not self.epsilon1 > 0:
            raise ValueError("epsilon1 must be positive")
        if not self.epsilon1_scale > 0:
            raise ValueError("epsilon1_scale must be positive")
        if self.iterations is not None and self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.sigma_factor > 0:
            raise ValueError("sigma_factor must be positive")
        ConvPlan(self.conv_mode)

    @property
    def plan(self) -> ConvPlan:
        return ConvPlan(self.conv_mode)

    def iterations_for(self, n_templates: int) -> int:
        if self.iterations is not None:
            return self.iterations
        return 10 if n_templates <= 31 else 20

    def epsilon1_for(self, bank: "TemplateBank") -> float:
        eps1 = self.epsilon1 if self.epsilon1 is not None else self.epsilon2 / bank.v.sum(axis=0).max()
        return eps1 * self.epsilon1_scale


@dataclass(frozen=True)
class TemplateBank:
    """Normalised templates, shape ``(p, k, h, w)`` for both ``w`` and ``v``."""

    w: np.ndarray
    v: np.ndarray
    labels: tuple = ()

    @property
    def p(self) -> int:
        return self.w.shape[0]

    @property
    def k(self) -> int:
        return self.w.shape[1]

    @property
    def template_shape(self) -> tuple[int, int]:
        return self.w.shape[2:]


@dataclass
class SimilarityField:
    """Per-template similarity maps ``(p, H, W)`` and the padding they carry."""

    maps: np.ndarray
    pad: Pad = field(default_factory=Pad)
    cropped: bool = False

    def __len__(self):
        return self.maps.shape[0]

    def __getitem__(self, j) -> np.ndarray:
        return self.maps[j]


def build_bank(patches: Sequence[np.ndarray], labels: Sequence[str] | None = None) -> TemplateBank:
    """Normalise preprocessed patches (each ``(k, h, w)``) into a bank."""
    if len(patches) == 0:
        raise ValueError("at least one template is required")
    arr = np.stack([np.asarray(p, dtype=float) for p in patches])
    if arr.ndim != 4:
        raise ValueError("patches must each have shape (k, h, w)")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("template values must be finite and non-negative")
    totals = arr.sum(axis=(1, 2, 3))
    peaks = arr.max(axis=(1, 2, 3))
    if np.any(peaks <= 0):
        bad = int(np.argmin(peaks))
        raise ValueError(f"degenerate template {bad}: all values are zero")
    w = arr / totals[:, None, None, None]
    v = arr / peaks[:, None, None, None]
    if labels is None:
        labels = ("target",) + ("additional",) * (len(patches) - 1)
    return TemplateBank(w, v, tuple(labels))


def _check_shapes(X: ChannelStack, bank: TemplateBank):
    if X.k != bank.k:
        raise ValueError(f"input has {X.k} channels but templates have {bank.k}")
    th, tw = bank.template_shape
    if th > X.shape[0] or tw > X.shape[1]:
        raise ValueError("templates larger than the input")


class _Solver:
    """Per-solve state: the chosen backend and, for Fourier, cached spectra."""

    def __init__(self, X: ChannelStack, bank: TemplateBank, params: DimParams):
        _check_shapes(X, bank)
        self.X = X.planes
        self.bank = bank
        self.eps1 = params.epsilon1_for(bank)
        self.eps2 = params.epsilon2
        self.plan = params.plan
        self.mode = self.plan.resolve(X.shape, bank.template_shape)
        self.spectra = None
        if self.mode == "fourier":
            self._scale = (bank.v.reshape(bank.p, -1).max(axis=1) /
                           bank.w.reshape(bank.p, -1).max(axis=1))
            cache_bytes = bank.p * bank.k * np.prod(self._spec_shape()) * 16
            if cache_bytes <= SPECTRA_CACHE_LIMIT:
                self.spectra = KernelSpectra(bank.w, X.shape)
            else:
                log.debug("kernel spectra (%d MB) recomputed per iteration", cache_bytes >> 20)

    def _spec_shape(self):
        fy, fx = fft_shape(self.X.shape[1:], self.bank.template_shape)
        return fy, fx // 2 + 1

    def _w_spectra(self, j):
        if self.spectra is not None:
            return self.spectra, self.spectra.spectra[j]
        ks = KernelSpectra(self.bank.w[j], self.X.shape[1:])
        return ks, ks.spectra

    def reconstruct(self, Y: np.ndarray) -> np.ndarray:
        bank = self.bank
        if self.mode == "direct":
            R = np.zeros_like(self.X)
            for i in range(bank.k):
                for j in range(bank.p):
                    R[i] += conv2_same(Y[j], bank.v[j, i], self.plan)
            return R
        acc = None
        ks = None
        for j in range(bank.p):
            ks, wspec = self._w_spectra(j)
            fy = ks.forward(Y[j])
            term = (self._scale[j] * fy) * wspec
            acc = term if acc is None else acc + term
        return np.maximum(ks.convolve(acc), 0.0)

    def feedforward(self, E: np.ndarray) -> np.ndarray:
        """``sum_i xcorr(E_i, w_ji)`` for every template ``j``."""
        bank = self.bank
        out = np.empty((bank.p,) + E.shape[1:])
        if self.mode == "direct":
            for j in range(bank.p):
                out[j] = sum(xcorr2_same(E[i], bank.w[j, i], self.plan) for i in range(bank.k))
            return out
        fe = None
        for j in range(bank.p):
            ks, wspec = self._w_spectra(j)
            if fe is None:
                fe = ks.forward(E)
            out[j] = ks.correlate((fe * np.conj(wspec)).sum(axis=0))
        return np.maximum(out, 0.0)

    def step(self, Y: np.ndarray) -> np.ndarray:
        R = self.reconstruct(Y)
        E = self.X / np.maximum(self.eps2, R)
        return np.maximum(self.eps1, Y) * self.feedforward(E)


def reconstruct(Y: SimilarityField, bank: TemplateBank, X: ChannelStack, params: DimParams | None = None) -> np.ndarray:
    """Reconstruction ``R`` of the input implied by similarity maps ``Y``."""
    return _Solver(X, bank, params or DimParams()).reconstruct(Y.maps)


def kl_divergence(X: np.ndarray, R: np.ndarray, epsilon2: float = 1e-2) -> float:
    """Generalised KL divergence ``D(X || max(eps2, R))`` summed over all elements."""
    X = np.asarray(X, dtype=float)
    Rc = np.maximum(epsilon2, np.asarray(R, dtype=float))
    pos = X > 0
    return float(np.sum(X[pos] * np.log(X[pos] / Rc[pos])) - X.sum() + Rc.sum())


def dim_step(X: ChannelStack, Y: SimilarityField, bank: TemplateBank, params: DimParams | None = None) -> SimilarityField:
    """Apply one DIM iteration and return the new similarity field."""
    params = params or DimParams()
    if Y.maps.shape != (bank.p,) + X.shape:
        raise ValueError(f"similarity maps {Y.maps.shape} do not match input {(bank.p,) + X.shape}")
    if np.any(Y.maps < 0):
        raise ValueError("similarity values must be non-negative")
    return SimilarityField(_Solver(X, bank, params).step(Y.maps), X.pad)


def dim_solve(X: ChannelStack, bank: TemplateBank, params: DimParams | None = None) -> SimilarityField:
    """Iterate from ``Y = 0`` for the configured number of iterations."""
    params = params or DimParams()
    solver = _Solver(X, bank, params)
    Y = np.zeros((bank.p,) + X.shape)
    for _ in range(params.iterations_for(bank.p)):
        Y = solver.step(Y)
    return SimilarityField(Y, X.pad)


def crop_field(Y: SimilarityField) -> SimilarityField:
    if Y.cropped:
        raise ValueError("similarity field is already cropped")
    p = Y.pad
    h = Y.maps.shape[1] - p.top - p.bottom
    w = Y.maps.shape[2] - p.left - p.right
    maps = Y.maps[:, p.top:p.top + h, p.left:p.left + w].copy()
    return SimilarityField(maps, Pad(), cropped=True)


def ellipse_kernel(width: float, height: float) -> np.ndarray:
    """Binary ellipse with full axes ``width`` x ``height`` pixels.

    Each axis is floored at one pixel, so tiny ellipses degenerate to a
    single centre pixel. Offsets ``(dx, dy)`` are inside iff
    ``(2dx/width)^2 + (2dy/height)^2 <= 1``.
    """
    width = max(float(width), 1.0)
    height = max(float(height), 1.0)
    rx, ry = int(width // 2), int(height // 2)
    dy, dx = np.mgrid[-ry:ry + 1, -rx:rx + 1]
    return ((2 * dx / width) ** 2 + (2 * dy / height) ** 2 <= 1.0).astype(float)


def postprocess_sum(Y: SimilarityField, template_w: int, template_h: int, lam: float = 0.025,
                    plan: ConvPlan | None = None) -> SimilarityField:
    """Sum similarities over an ellipse of ``lam`` times the template size."""
    kernel = ellipse_kernel(lam * template_w, lam * template_h)
    if kernel.size == 1:
        return SimilarityField(Y.maps.copy(), Y.pad, Y.cropped)
    maps = np.stack([np.maximum(conv2_same(m, kernel, plan), 0.0) for m in Y.maps])
    return SimilarityField(maps, Y.pad, Y.cropped)


@dataclass(frozen=True)
class PatchSpec:
    """A template: box ``(x, y, w, h)`` taken from ``source`` image."""

    source: np.ndarray
    box: tuple[int, int, int, int]


def extract_stack_patch(stack: ChannelStack, box) -> np.ndarray:
    """Copy box ``(x, y, w, h)`` (original-image coordinates) out of a padded stack."""
    x, y, w, h = (int(v) for v in box)
    H, W = stack.original_shape
    if w < 1 or h < 1 or x < 0 or y < 0 or x + w > W or y + h > H:
        raise ValueError(f"box {(x, y, w, h)} outside {W}x{H} image")
    oy, ox = stack.pad.top + y, stack.pad.left + x
    return stack.planes[:, oy:oy + h, ox:ox + w].copy()


def prepare(img, colorspace: str = "lab") -> np.ndarray:
    img = as_image(img)
    if img.shape[2] == 1:
        return img
    return convert_colorspace(img, colorspace)


def template_patches(specs: Sequence[PatchSpec], template_w: int, template_h: int,
                     params: DimParams, colorspace: str = "lab") -> list[np.ndarray]:
    """Preprocess each distinct source once and cut the template boxes from it."""
    sigma = sigma_for_template(template_w, template_h, params.sigma_factor)
    cache: dict[int, ChannelStack] = {}
    patches = []
    for spec in specs:
        key = id(spec.source)
        if key not in cache:
            cache[key] = preprocess(prepare(spec.source, colorspace), template_w, template_h, sigma)
        patches.append(extract_stack_patch(cache[key], spec.box))
    return patches


def match(img, target: PatchSpec, additional: Sequence[PatchSpec] = (), params: DimParams | None = None,
          colorspace: str = "lab", postprocess: bool = True) -> SimilarityField:
    """Run the full DIM pipeline; index 0 of the result is the target.

    All templates must share the target's size. The query is preprocessed
    with the Gaussian width implied by that size, matched, cropped back to
    image coordinates and (unless ``postprocess`` is false) summed over
    the elliptical neighbourhood.
    """
    params = params or DimParams()
    tw, th = int(target.box[2]), int(target.box[3])
    for spec in additional:
        if (int(spec.box[2]), int(spec.box[3])) != (tw, th):
            raise ValueError("additional templates must have the target's dimensions")
    specs = [target, *additional]
    patches = template_patches(specs, tw, th, params, colorspace)
    bank = build_bank(patches)
    sigma = sigma_for_template(tw, th, params.sigma_factor)
    X = preprocess(prepare(img, colorspace), tw, th, sigma)
    Y = crop_field(dim_solve(X, bank, params))
    if postprocess:
        Y = postprocess_sum(Y, tw, th, params.lam, params.plan)
    return Y


def match_bank(img, bank: TemplateBank, params: DimParams | None = None, colorspace: str = "lab",
               postprocess: bool = True) -> SimilarityField:
    """Match an already built bank against ``img``."""
    params = params or DimParams()
    th, tw = bank.template_shape
    sigma = sigma_for_template(tw, th, params.sigma_factor)
    X = preprocess(prepare(img, colorspace), tw, th, sigma)
    Y = crop_field(dim_solve(X, bank, params))
    if postprocess:
        Y = postprocess_sum(Y, tw, th, params.lam, params.plan)
    return Y


def with_overrides(params: DimParams, **kw) -> DimParams:
    return replace(params, **{k: v for k, v in kw.items() if v is not None})
