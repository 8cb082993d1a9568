"""Same-size 2D cross-correlation and convolution.

Two interchangeable backends are provided: ``direct`` (spatial summation)
and ``fourier`` (real FFTs padded to a fast length). ``auto`` picks the
Fourier route whenever the kernel area exceeds ``log`` of the plane area.

Centre convention for a kernel of height ``h`` and width ``w``::

    cy = (h - 1) // 2,  cx = (w - 1) // 2
    xcorr(y, x) = sum_{u,v} k(u, v) * plane(y + u - cy, x + v - cx)

with samples outside the plane taken as zero. Convolution is correlation
with the kernel rotated by 180 degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import signal

MODES = ("direct", "fourier", "auto")


@dataclass(frozen=True)
class ConvPlan:
    mode: str = "auto"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown convolution mode {self.mode!r}; expected one of {MODES}")

    def resolve(self, plane_shape, kernel_shape) -> str:
        if self.mode != "auto":
            return self.mode
        area = plane_shape[0] * plane_shape[1]
        return "fourier" if kernel_shape[0] * kernel_shape[1] > math.log(area) else "direct"


def _as_kernel(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or min(k.shape) < 1:
        raise ValueError(f"kernel must be a non-empty 2D array, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError("kernel contains non-finite values")
    return k


def _check(plane, k):
    plane = np.asarray(plane, dtype=float)
    if plane.ndim != 2:
        raise ValueError(f"plane must be 2D, got shape {plane.shape}")
    k = _as_kernel(k)
    if k.shape[0] > plane.shape[0] or k.shape[1] > plane.shape[1]:
        raise ValueError(f"kernel {k.shape} larger than plane {plane.shape}")
    return plane, k


def rot180(k) -> np.ndarray:
    return np.asarray(k)[::-1, ::-1]


def centre(kernel_shape) -> tuple[int, int]:
    return (kernel_shape[0] - 1) // 2, (kernel_shape[1] - 1) // 2


def fft_shape(plane_shape, kernel_shape) -> tuple[int, int]:
    return (sfft.next_fast_len(plane_shape[0] + kernel_shape[0] - 1, real=True),
            sfft.next_fast_len(plane_shape[1] + kernel_shape[1] - 1, real=True))


def _direct_xcorr(plane, k):
    h, w = k.shape
    cy, cx = centre(k.shape)
    full = signal.correlate2d(plane, k, mode="full")
    oy, ox = h - 1 - cy, w - 1 - cx
    return full[oy:oy + plane.shape[0], ox:ox + plane.shape[1]]


def _fourier_xcorr(plane, k):
    h, w = k.shape
    cy, cx = centre(k.shape)
    shape = fft_shape(plane.shape, k.shape)
    spec = sfft.rfft2(plane, shape) * sfft.rfft2(rot180(k), shape)
    full = sfft.irfft2(spec, shape)
    oy, ox = h - 1 - cy, w - 1 - cx
    return full[oy:oy + plane.shape[0], ox:ox + plane.shape[1]]


def xcorr2_same(plane, k, plan: ConvPlan | None = None) -> np.ndarray:
    """Cross-correlate ``plane`` with kernel ``k``; output matches ``plane``."""
    plane, k = _check(plane, k)
    plan = plan or ConvPlan()
    if plan.resolve(plane.shape, k.shape) == "direct":
        return _direct_xcorr(plane, k)
    return _fourier_xcorr(plane, k)


def conv2_same(plane, k, plan: ConvPlan | None = None) -> np.ndarray:
    """Convolve ``plane`` with ``k``; equals ``xcorr2_same(plane, rot180(k))``."""
    return xcorr2_same(plane, rot180(_as_kernel(k)), plan)


class KernelSpectra:
    """Spectra of a stack of equally sized kernels for one plane shape.

    Used for repeated correlation/convolution of many planes with many
    kernels (the inner loop of the DIM solver). A single forward transform
    per kernel serves both operations: correlation multiplies by the
    conjugate spectrum, convolution by the spectrum itself. Instances are
    read-only after construction and can be shared between threads.
    """

    def __init__(self, kernels, plane_shape):
        kernels = np.asarray(kernels, dtype=float)
        self.kernel_shape = kernels.shape[-2:]
        self.plane_shape = tuple(plane_shape)
        self.shape = fft_shape(self.plane_shape, self.kernel_shape)
        self.spectra = sfft.rfft2(kernels, self.shape)
        self._cy, self._cx = centre(self.kernel_shape)

    def forward(self, planes) -> np.ndarray:
        return sfft.rfft2(planes, self.shape)

    def correlate(self, plane_spectra) -> np.ndarray:
        """Inverse transform products formed with :meth:`conj` spectra, as correlation."""
        full = sfft.irfft2(plane_spectra, self.shape)
        # circular lag d = y - cy lives at index (y - cy) mod N
        full = np.roll(full, (self._cy, self._cx), axis=(-2, -1))
        return full[..., :self.plane_shape[0], :self.plane_shape[1]]

    def convolve(self, plane_spectra) -> np.ndarray:
        full = sfft.irfft2(plane_spectra, self.shape)
        oy = self.kernel_shape[0] - 1 - self._cy
        ox = self.kernel_shape[1] - 1 - self._cx
        return full[..., oy:oy + self.plane_shape[0], ox:ox + self.plane_shape[1]]
