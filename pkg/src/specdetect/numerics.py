"""Signal/spectrum arithmetic and the hand-rolled gradients built on top of it.

The forward transform is evaluated directly from its definition, as a matrix
product against a cached kernel: X[k] = sum_n x[n] * exp(-2*pi*i*k*n/N).  No
normalization on the forward pass; the inverse carries the 1/N.  At the
signal lengths this project works with (N <= 1024) the O(N^2) product is
cheap, and it keeps the arithmetic inspectable.  `dft_fast` wraps numpy's FFT
as an optional fast path and is validated against the direct form in tests.

The kernel is built so that two structural facts hold bit-for-bit, not just
to tolerance:

* rows k and N-k are exact complex conjugates, so the spectrum of any real
  signal is exactly Hermitian-symmetric;
* the imaginary parts of the DC row and (for even N) the Nyquist row are
  exactly zero.

The forward pass also subtracts the signal mean before the product and adds
the DC term back afterwards.  That makes a constant offset of the input land
exactly in bin 0 whenever the input values sit on a dyadic grid, which the
perturbation harness relies on.

Gradient convention: spectra are differentiated as pairs of independent real
components, never as holomorphic complex quantities.  A "spectrum gradient"
here is a complex array packing dL/d(re) + 1j * dL/d(im).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "OneSidedSpectrum",
    "dft",
    "dft_fast",
    "dft_vjp",
    "fourier_kernel",
    "from_one_sided",
    "idft",
    "mirror_indices",
    "modulus",
    "modulus_vjp",
    "n_one_sided",
    "one_sided_weights",
    "to_one_sided",
]

HERMITIAN_RTOL = 1e-9


def _as_signal(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("signal must be a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite signal")
    return x


def _as_spectrum(values) -> np.ndarray:
    X = np.asarray(values, dtype=np.complex128)
    if X.ndim != 1 or X.size == 0:
        raise ValueError("spectrum must be a non-empty 1-D array")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite spectrum")
    return X


@lru_cache(maxsize=None)
def fourier_kernel(n: int) -> np.ndarray:
    """N x N forward kernel K[k, t] = exp(-2*pi*i*k*t/N).

    Rows 0..floor(N/2) are built from angles reduced mod N, with the trig
    values snapped exactly at the four cardinal angles; the remaining rows
    are the exact conjugates of their mirror rows.  The array is cached per
    length and marked read-only.
    """
    if n < 1:
        raise ValueError("kernel length must be >= 1")
    half = n // 2
    k = np.arange(half + 1)[:, None]
    m = (k * np.arange(n)) % n
    theta = (-2.0 * np.pi / n) * m
    re = np.cos(theta)
    im = np.sin(theta)
    # exact values at multiples of pi/2, so DC/Nyquist rows are exactly real
    re[m == 0] = 1.0
    im[m == 0] = 0.0
    if n % 2 == 0:
        sel = m == half
        re[sel] = -1.0
        im[sel] = 0.0
    if n % 4 == 0:
        sel = m == n // 4
        re[sel] = 0.0
        im[sel] = -1.0
        sel = m == 3 * (n // 4)
        re[sel] = 0.0
        im[sel] = 1.0
    top = re + 1j * im
    if half + 1 == n:
        kern = top
    else:
        kern = np.vstack([top, np.conj(top[1 : (n + 1) // 2][::-1])])
    kern.flags.writeable = False
    return kern


def dft(signal) -> np.ndarray:
    """Unnormalized forward transform of a real signal.

    Raises ValueError("non-finite signal") on NaN/inf input.
    """
    x = _as_signal(signal)
    n = x.size
    mean = x.mean()
    spec = fourier_kernel(n) @ (x - mean)
    spec[0] += n * mean
    return spec


def dft_fast(signal) -> np.ndarray:
    """FFT-backed evaluation of the same transform (library fast path)."""
    x = _as_signal(signal)
    return np.fft.fft(x)


def _check_hermitian(X: np.ndarray) -> None:
    n = X.size
    scale = float(np.max(np.abs(X))) if n else 0.0
    k = np.arange(n)
    asym = np.max(np.abs(X[(n - k) % n] - np.conj(X)))
    if asym > HERMITIAN_RTOL * scale:
        raise ValueError("non-Hermitian spectrum")


def idft(spectrum) -> np.ndarray:
    """Inverse transform; accepts only Hermitian-symmetric spectra.

    The imaginary residue of the reconstruction must vanish below
    1e-9 * max(1, max|X|); it is asserted and then discarded.
    """
    X = _as_spectrum(spectrum)
    _check_hermitian(X)
    n = X.size
    out = (np.conj(fourier_kernel(n)) @ X) / n
    limit = 1e-9 * max(1.0, float(np.max(np.abs(X))))
    if np.max(np.abs(out.imag)) >= limit:
        raise ValueError("non-Hermitian spectrum")
    return np.ascontiguousarray(out.real)


def n_one_sided(n: int) -> int:
    """Number of independent bins of a length-n real signal's spectrum."""
    return n // 2 + 1


@dataclass(frozen=True)
class OneSidedSpectrum:
    """First floor(N/2)+1 bins of a Hermitian spectrum plus the original length.

    Bin 0 is exactly real, and so is the last bin when the original length is
    even.  Violations raise at construction time.
    """

    bins: np.ndarray
    original_length: int

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.complex128)
        object.__setattr__(self, "bins", bins)
        if bins.ndim != 1:
            raise ValueError("one-sided bins must be 1-D")
        if self.original_length < 1:
            raise ValueError("original_length must be >= 1")
        if bins.size != n_one_sided(self.original_length):
            raise ValueError("bin count does not match original_length")
        if not np.all(np.isfinite(bins)):
            raise ValueError("non-finite spectrum")
        if bins[0].imag != 0.0:
            raise ValueError("violated DC realness")
        if self.original_length % 2 == 0 and bins[-1].imag != 0.0:
            raise ValueError("violated Nyquist realness")

    @property
    def n_bins(self) -> int:
        return self.bins.size


def to_one_sided(spectrum) -> OneSidedSpectrum:
    """Keep the non-redundant half of a Hermitian spectrum.

    The DC bin (and the Nyquist bin for even lengths) is snapped exactly real
    after the symmetry check, so the structural invariants hold bit-for-bit.
    """
    X = _as_spectrum(spectrum)
    _check_hermitian(X)
    n = X.size
    bins = X[: n_one_sided(n)].copy()
    bins[0] = bins[0].real
    if n % 2 == 0:
        bins[-1] = bins[-1].real
    return OneSidedSpectrum(bins=bins, original_length=n)


def mirror_indices(n: int) -> np.ndarray:
    """Indices into the one-sided bins that rebuild bins m..N-1 by conjugation."""
    m = n_one_sided(n)
    if n % 2 == 0:
        return np.arange(m - 2, 0, -1)
    return np.arange(m - 1, 0, -1)


def one_sided_weights(n: int) -> np.ndarray:
    """Multiplicity of each one-sided bin in the full spectrum (1 or 2)."""
    w = np.full(n_one_sided(n), 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def from_one_sided(one_sided: OneSidedSpectrum) -> np.ndarray:
    """Mirror a one-sided spectrum back to the full Hermitian layout."""
    if not isinstance(one_sided, OneSidedSpectrum):
        raise TypeError("expected a OneSidedSpectrum")
    bins = one_sided.bins
    n = one_sided.original_length
    return np.concatenate([bins, np.conj(bins[mirror_indices(n)])])


def modulus(one_sided: OneSidedSpectrum) -> np.ndarray:
    return np.abs(one_sided.bins)


def dft_vjp(upstream, n: int | None = None) -> np.ndarray:
    """Adjoint of the forward transform, viewed as R^N -> R^2N.

    `upstream` packs dL/d(re) + 1j*dL/d(im) per output bin.  Returns dL/dx:

        g[t] = sum_k gre[k]*cos(2*pi*k*t/N) - gim[k]*sin(2*pi*k*t/N)
    """
    u = np.asarray(upstream, dtype=np.complex128)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("upstream gradient must be a non-empty 1-D array")
    if n is None:
        n = u.size
    if n != u.size:
        raise ValueError("upstream gradient length must equal the signal length")
    kern = fourier_kernel(n)
    return kern.real.T @ u.real + kern.imag.T @ u.imag


def modulus_vjp(one_sided: OneSidedSpectrum, upstream) -> np.ndarray:
    """Adjoint of the per-bin modulus.

    Returns a spectrum gradient (dL/d(re) + 1j*dL/d(im)).  At a bin whose
    modulus is exactly zero the subgradient 0 is used.
    """
    g = np.asarray(upstream, dtype=np.float64)
    bins = one_sided.bins
    if g.shape != bins.shape:
        raise ValueError("upstream gradient shape does not match the spectrum")
    mod = np.abs(bins)
    scale = np.divide(g, mod, out=np.zeros_like(g), where=mod > 0.0)
    return scale * bins
