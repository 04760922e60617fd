"""Dense Zernike-moment features.

A bank of complex Zernike kernels is sampled on a small disk-inscribed
window and cross-correlated with the image at every pixel. The complex
moments are rotation-covariant (a rotation multiplies moment (p, q) by a
unit phase), so their magnitudes are rotation-invariant, which is what
makes them usable for matching duplicated regions under rotation.

Moment set: all (p, q) with 0 <= q <= p <= max_order and p - q even.
Max order 5 gives 12 moments.
"""

import math
from functools import cached_property

import numpy as np
import scipy.fft

from .imagecore import TENSOR_MAGIC, write_tensor  # noqa: F401  (re-export convenience)


def moment_orders(max_order=5):
    """(p, q) pairs with q <= p, p - q even, ordered by p then q."""
    return [
        (p, q)
        for p in range(max_order + 1)
        for q in range(p % 2, p + 1, 2)
    ]


def radial_polynomial(p, q, rho):
    """Standard Zernike radial polynomial R_{p,q} evaluated elementwise.

    R_{p,q}(rho) = sum_s (-1)^s (p-s)! / (s! ((p+q)/2-s)! ((p-q)/2-s)!)
                   * rho^(p-2s),  s = 0 .. (p-q)/2
    """
    if (p - q) % 2 != 0 or q < 0 or q > p:
        raise ValueError(f"invalid order pair ({p}, {q})")
    rho = np.asarray(rho, dtype=np.float64)
    out = np.zeros_like(rho)
    for s in range((p - q) // 2 + 1):
        coeff = (
            (-1) ** s
            * math.factorial(p - s)
            / (
                math.factorial(s)
                * math.factorial((p + q) // 2 - s)
                * math.factorial((p - q) // 2 - s)
            )
        )
        out += coeff * rho ** (p - 2 * s)
    return out


class ZernikeKernelStack:
    """Complex kernels ready for dense cross-correlation.

    kernels[k] samples (p+1)/pi * R_{p,q}(rho) * exp(-1j*q*theta) at pixel
    centers of a diameter x diameter window, times the normalized pixel
    area 1/r^2, and is zero outside the unit disk (rho > 1). r = (d-1)/2
    so the disk inscribes the window.
    """

    def __init__(self, diameter, orders, kernels):
        self.diameter = diameter
        self.orders = orders
        self.kernels = kernels
        self._fft_cache = {}

    def kernel_ffts(self, shape):
        """FFTs of the index-reversed kernels at a padded shape, cached."""
        key = tuple(shape)
        if key not in self._fft_cache:
            rev = self.kernels[:, ::-1, ::-1]
            self._fft_cache[key] = scipy.fft.fft2(rev, s=shape, axes=(-2, -1))
        return self._fft_cache[key]

    def as_array(self):
        """(n_orders, d, d, 2) float32 view (real, imag) for export."""
        out = np.empty(self.kernels.shape + (2,), dtype=np.float32)
        out[..., 0] = self.kernels.real
        out[..., 1] = self.kernels.imag
        return out


def make_kernels(max_order=5, diameter=17):
    if diameter < 3 or diameter % 2 == 0:
        raise ValueError("diameter must be an odd integer >= 3")
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    orders = moment_orders(max_order)
    r = (diameter - 1) / 2.0
    coords = np.arange(diameter) - r
    xg, yg = np.meshgrid(coords, coords)
    rho = np.sqrt(xg**2 + yg**2) / r
    theta = np.arctan2(yg, xg)
    disk = rho <= 1.0
    kernels = np.zeros((len(orders), diameter, diameter), dtype=np.complex128)
    for k, (p, q) in enumerate(orders):
        rad = radial_polynomial(p, q, rho)
        kern = rad * np.exp(-1j * q * theta) * ((p + 1) / np.pi) / (r * r)
        kern[~disk] = 0.0
        kernels[k] = kern
    return ZernikeKernelStack(diameter, orders, kernels)


class ZernikeFeatures:
    """Dense complex moments plus derived real-valued views.

    moments        (H, W, n) complex
    complex_map    (H, W, 2n) float: channels interleave Re, Im per moment
    magnitude_map  (H, W, n) float: per-pixel moduli, rotation-invariant
    """

    def __init__(self, moments, orders):
        self.moments = moments
        self.orders = orders

    @cached_property
    def complex_map(self):
        h, w, n = self.moments.shape
        out = np.empty((h, w, 2 * n), dtype=np.float64)
        out[:, :, 0::2] = self.moments.real
        out[:, :, 1::2] = self.moments.imag
        return out

    @cached_property
    def magnitude_map(self):
        return np.abs(self.moments)


def extract(img, ks):
    """Dense moments of a single-channel image, one vector per pixel.

    Borders are reflect-padded (no repeated edge sample) so the output
    keeps the input's H x W. Correlation runs in the frequency domain;
    kernel FFTs are cached on the stack.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ValueError("extract expects a single-channel image")
    d = ks.diameter
    h, w = arr.shape
    if h < d or w < d:
        raise ValueError(f"image dims {arr.shape} smaller than kernel diameter {d}")
    r = (d - 1) // 2
    padded = np.pad(arr, r, mode="reflect")
    fh = scipy.fft.next_fast_len(padded.shape[0] + d - 1)
    fw = scipy.fft.next_fast_len(padded.shape[1] + d - 1)
    img_fft = scipy.fft.fft2(padded, s=(fh, fw))
    prod = img_fft[None, :, :] * ks.kernel_ffts((fh, fw))
    full = scipy.fft.ifft2(prod, axes=(-2, -1))
    # convolution with the reversed kernel == correlation; crop the valid part
    crop = full[:, d - 1 : d - 1 + h, d - 1 : d - 1 + w]
    moments = np.ascontiguousarray(np.moveaxis(crop, 0, -1))
    return ZernikeFeatures(moments, list(ks.orders))


def export_kernels(ks, path):
    """Write the kernel bank as an (n, d, d, 2) tensor file."""
    write_tensor(ks.as_array(), path)
