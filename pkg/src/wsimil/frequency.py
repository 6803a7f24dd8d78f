"""2D discrete Fourier and level-1 Haar transforms for frequency-domain patches."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError
from .imaging import RasterImage, Semantics, resize_bilinear
from .validation import as_real_grid, check_even_dims, check_semantics, check_square


@dataclass(frozen=True)
class ComplexGrid:
    """Row-major complex spectrum of a 2D transform."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.complex128)
        if arr.ndim != 2:
            raise DimensionError(f"complex grid must be 2D, got {arr.shape}")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def re(self) -> np.ndarray:
        return self.values.real

    @property
    def im(self) -> np.ndarray:
        return self.values.imag


@dataclass(frozen=True)
class SubbandSet:
    """The four half-resolution subbands of a level-1 2D wavelet analysis."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray

    def __post_init__(self):
        shapes = {np.asarray(s).shape for s in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise DimensionError(f"subband shapes disagree: {sorted(shapes)}")


@lru_cache(maxsize=32)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    rev.flags.writeable = False
    return rev


def _fft_pow2(a: np.ndarray) -> np.ndarray:
    """Iterative radix-2 FFT along the last axis (length must be a power of 2)."""
    n = a.shape[-1]
    out = np.ascontiguousarray(a[..., _bit_reverse_indices(n)], dtype=np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp((-2j * np.pi / size) * np.arange(half))
        blocks = out.reshape(out.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * twiddle
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2
    return out


def _ifft_pow2(a: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(a))) / a.shape[-1]


def _fft_bluestein(a: np.ndarray) -> np.ndarray:
    """Chirp-z FFT for arbitrary length via a power-of-two convolution."""
    n = a.shape[-1]
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 has period 2n in the chirp phase; reduce first to keep it exact
    chirp = np.exp((-1j * np.pi / n) * ((k * k) % (2 * n)))
    buf = np.zeros(a.shape[:-1] + (m,), dtype=np.complex128)
    buf[..., :n] = a * chirp
    kernel = np.zeros(m, dtype=np.complex128)
    kernel[:n] = np.conj(chirp)
    if n > 1:
        kernel[m - (n - 1) :] = np.conj(chirp[1:])[::-1]
    conv = _ifft_pow2(_fft_pow2(buf) * _fft_pow2(kernel))
    return conv[..., :n] * chirp


def _fft_forward(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    if n & (n - 1) == 0:
        return _fft_pow2(a)
    return _fft_bluestein(a)


def fft1d(signal, inverse: bool = False) -> np.ndarray:
    """FFT of a 1D sequence; forward kernel exp(-2*pi*i*k*n/N), inverse /= N.

    Power-of-two lengths take the radix-2 path, everything else Bluestein.
    """
    x = np.asarray(signal, dtype=np.complex128)
    if x.ndim != 1 or x.size < 1:
        raise DimensionError(f"1D sequence of length >= 1 required, got {x.shape}")
    if inverse:
        return np.conj(_fft_forward(np.conj(x))) / x.size
    return _fft_forward(x)


def dft2d(channel) -> ComplexGrid:
    """2D DFT of a real grid by row-column decomposition."""
    grid = as_real_grid(channel)
    rows = _fft_forward(grid.astype(np.complex128))
    cols = _fft_forward(rows.T).T
    return ComplexGrid(cols)


def idft2d(grid: ComplexGrid) -> ComplexGrid:
    """Inverse 2D DFT (divides by M*N)."""
    v = grid.values
    rows = np.conj(_fft_forward(np.conj(v))) / v.shape[1]
    cols = (np.conj(_fft_forward(np.conj(rows.T))) / v.shape[0]).T
    return ComplexGrid(cols)


def _center_shift(grid: np.ndarray) -> np.ndarray:
    h, w = grid.shape
    return np.roll(grid, (h // 2, w // 2), axis=(0, 1))


def dft_stack(patch: RasterImage) -> RasterImage:
    """Per-channel 2D DFT real parts of a YCbCr patch, DC bin centered."""
    check_semantics(patch, Semantics.YCBCR)
    check_square(patch)
    planes = [_center_shift(dft2d(c).re) for c in patch.data]
    return RasterImage(np.stack(planes), Semantics.SPECTRUM3)


def dft_log_magnitude(patch: RasterImage) -> RasterImage:
    """log(1 + |I|) magnitude view, centered. For inspection, not features."""
    check_semantics(patch, Semantics.YCBCR)
    check_square(patch)
    planes = [_center_shift(np.log1p(np.abs(dft2d(c).values))) for c in patch.data]
    return RasterImage(np.stack(planes), Semantics.SPECTRUM3)


def threshold_view(spectrum: RasterImage) -> RasterImage:
    """Binarize a 3-channel spectrum at the mean of all its values.

    A pixel is 1 when its channel-mean lies strictly above the global mean.
    """
    check_semantics(spectrum, Semantics.SPECTRUM3)
    global_mean = spectrum.data.mean()
    per_pixel = spectrum.data.mean(axis=0)
    return RasterImage(
        (per_pixel > global_mean).astype(np.float64)[None], Semantics.GRAY1
    )


def dwt_haar(channel) -> SubbandSet:
    """Orthonormal level-1 Haar analysis of an even-sized grid.

    For each 2x2 block [a b; c d]:
        ll = (a+b+c+d)/2   lh = (a+b-c-d)/2  (vertical detail)
        hl = (a-b+c-d)/2   hh = (a-b-c+d)/2  (horizontal / diagonal detail)
    """
    grid = as_real_grid(channel)
    check_even_dims(grid)
    a = grid[0::2, 0::2]
    b = grid[0::2, 1::2]
    c = grid[1::2, 0::2]
    d = grid[1::2, 1::2]
    # grouped butterflies keep constant blocks and identical rows exactly flat
    top_sum, top_diff = a + b, a - b
    bot_sum, bot_diff = c + d, c - d
    return SubbandSet(
        ll=(top_sum + bot_sum) / 2.0,
        lh=(top_sum - bot_sum) / 2.0,
        hl=(top_diff + bot_diff) / 2.0,
        hh=(top_diff - bot_diff) / 2.0,
    )


def idwt_haar(sub: SubbandSet) -> np.ndarray:
    """Exact synthesis inverse of dwt_haar."""
    ll = np.asarray(sub.ll, dtype=np.float64)
    lh, hl, hh = sub.lh, sub.hl, sub.hh
    h, w = ll.shape
    low_sum, low_diff = ll + lh, ll - lh
    high_sum, high_diff = hl + hh, hl - hh
    out = np.empty((2 * h, 2 * w), dtype=np.float64)
    out[0::2, 0::2] = (low_sum + high_sum) / 2.0
    out[0::2, 1::2] = (low_sum - high_sum) / 2.0
    out[1::2, 0::2] = (low_diff + high_diff) / 2.0
    out[1::2, 1::2] = (low_diff - high_diff) / 2.0
    return out


# Fixed subband ordering of the 12-channel stack, per source channel.
SUBBAND_ORDER = ("ll", "lh", "hl", "hh")


def dwt_stack(patch: RasterImage) -> RasterImage:
    """12-channel Haar stack of a YCbCr patch at its native resolution.

    The patch is upscaled 2x bilinearly first, so each subband comes back at
    the original size. Channel layout is Y, Cb, Cr major with subbands in
    SUBBAND_ORDER, i.e. (Y.ll, Y.lh, Y.hl, Y.hh, Cb.ll, ..., Cr.hh).
    """
    check_semantics(patch, Semantics.YCBCR)
    check_square(patch)
    doubled = resize_bilinear(patch, 2 * patch.width, 2 * patch.height)
    planes = []
    for channel in doubled.data:
        sub = dwt_haar(channel)
        planes.extend(getattr(sub, name) for name in SUBBAND_ORDER)
    return RasterImage(np.stack(planes), Semantics.SUBBAND12)
