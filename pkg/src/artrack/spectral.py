"""Discrete Fourier transforms, the adaptive Gaussian frequency kernel, and
their differentiable counterparts for (tokens, channels) feature maps.

Transforms run along axis 0, so a (N, C) array is treated as C independent
length-N signals.  Convention: ``X[k] = sum_n x[n] exp(-2j*pi*k*n/N)`` and the
inverse carries the ``1/N`` factor.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor, record

FORWARD_CONVENTION = "exp(-2j*pi*k*n/N)"


class ComplexResidueWarning(RuntimeWarning):
    """An inverse transform had a non-negligible imaginary part that was dropped."""


@dataclass
class Spectrum:
    bins: np.ndarray
    convention: str = FORWARD_CONVENTION

    @property
    def length(self) -> int:
        return self.bins.shape[0]

    def is_conjugate_symmetric(self, atol: float = 1e-9) -> bool:
        mirrored = np.conj(self.bins[(-np.arange(self.length)) % self.length])
        return bool(np.allclose(self.bins, mirrored, rtol=0.0, atol=atol))


@dataclass
class GaussianKernelSpec:
    mu: float = 0.0
    sigma: float = 1.0
    epsilon: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _as_signal(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 0 or x.shape[0] < 1:
        raise ValueError("signal must have at least one sample along axis 0")
    return x.astype(np.complex128)


@functools.lru_cache(maxsize=16)
def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    # reduce k*n mod N first so the phase stays accurate for large N
    phase = (np.outer(k, k) % n) * (-2.0 * np.pi / n)
    w = np.exp(1j * phase)
    w.setflags(write=False)
    return w


def dft_naive(x) -> Spectrum:
    """Literal O(N^2) transform: the reference every faster path is checked against."""
    x = _as_signal(x)
    return Spectrum(_dft_matrix(x.shape[0]) @ x)


@functools.lru_cache(maxsize=None)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    if bits == 0:
        return np.zeros(1, dtype=np.int64)
    return np.array([int(format(i, f"0{bits}b")[::-1], 2) for i in range(n)])


def fft_radix2(x) -> Spectrum:
    """Iterative Cooley-Tukey transform; N must be a power of two."""
    x = _as_signal(x)
    n = x.shape[0]
    if not is_power_of_two(n):
        raise ValueError(f"fft_radix2 needs a power-of-two length, got {n}")
    a = x[_bit_reversal(n)]
    tail = a.shape[1:]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size).reshape((half,) + (1,) * len(tail))
        blocks = a.reshape((n // size, size) + tail)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        a = blocks.reshape((n,) + tail)
        size *= 2
    return Spectrum(a)


def dft(x) -> Spectrum:
    """Radix-2 FFT for power-of-two lengths, the direct sum otherwise."""
    x = np.asarray(x)
    return fft_radix2(x) if is_power_of_two(x.shape[0]) else dft_naive(x)


def idft(s: Spectrum | np.ndarray, real: bool = True, warn_threshold: float = 1e-6) -> np.ndarray:
    """Inverse transform ``x[n] = (1/N) sum_k X[k] exp(+2j*pi*k*n/N)``.

    With ``real=True`` the imaginary residue is dropped; a
    :class:`ComplexResidueWarning` is issued when it reaches ``warn_threshold``,
    which means the input was not conjugate-symmetric.
    """
    bins = s.bins if isinstance(s, Spectrum) else np.asarray(s, dtype=np.complex128)
    n = bins.shape[0]
    x = np.conj(dft(np.conj(bins)).bins) / n
    if not real:
        return x
    residue = float(np.max(np.abs(x.imag))) if x.size else 0.0
    if residue >= warn_threshold:
        warnings.warn(f"discarding imaginary residue {residue:.3e} from inverse transform",
                      ComplexResidueWarning, stacklevel=2)
    return x.real.copy()


def normalized_frequency(n: int) -> np.ndarray:
    """Distance of each bin from DC, scaled to [0, 1]; symmetric under k <-> N-k."""
    if n < 1:
        raise ValueError("N must be at least 1")
    k = np.arange(n)
    return np.minimum(k, n - k) / (n / 2.0)


def gaussian_kernel(spec: GaussianKernelSpec, n: int) -> np.ndarray:
    if not spec.sigma > 0:
        raise ValueError(f"sigma must be positive, got {spec.sigma}")
    x = normalized_frequency(n)
    z = (x - spec.mu) / spec.sigma
    return spec.epsilon / (spec.sigma * math.sqrt(2.0 * math.pi)) * np.exp(-0.5 * z * z)


def circular_convolve(x, h) -> np.ndarray:
    """``y[n] = sum_m x[m] h[(n - m) mod N]`` evaluated term by term."""
    x, h = np.asarray(x), np.asarray(h)
    if x.shape != h.shape or x.ndim != 1:
        raise ValueError(f"circular_convolve needs equal-length 1-D inputs, got {x.shape}, {h.shape}")
    n = x.shape[0]
    y = np.zeros(n, dtype=np.result_type(x, h, np.float64))
    for i in range(n):
        for m in range(n):
            y[i] += x[m] * h[(i - m) % n]
    return y


# ---------------------------------------------------------------------------
# Differentiable transforms on real (T, C) tensors.  The spectrum travels as a
# pair of real tensors (real part, imaginary part).


def spectrum_of(x) -> tuple[Tensor, Tensor]:
    """Forward transform of a real tensor along axis 0, as (re, im) tensors."""
    x = as_tensor(x)
    bins = dft(x.data).bins
    n = x.shape[0]

    # For X = W x with x real: dL/dx = Re(W^H (g_re + j g_im)) = N * Re(idft(g)).
    def back_re(g):
        return (n * idft(g.astype(np.complex128), real=False).real,)

    def back_im(g):
        return (n * idft(1j * g, real=False).real,)

    re = record(bins.real.copy(), (x,), back_re, "dft_re")
    im = record(bins.imag.copy(), (x,), back_im, "dft_im")
    return re, im


def inverse_spectrum(re, im) -> tuple[Tensor, float]:
    """Inverse transform of (re, im) along axis 0, keeping the real part.

    Returns the real signal and the largest dropped imaginary magnitude.
    """
    re, im = as_tensor(re), as_tensor(im)
    x = idft(re.data + 1j * im.data, real=False)
    residue = float(np.max(np.abs(x.imag))) if x.size else 0.0

    # x = Re((1/N) W^H X): dL/dRe(X) + j dL/dIm(X) = (1/N) W g = dft(g) / N.
    def _back(g):
        n = g.shape[0]
        gb = dft(g).bins / n
        return gb.real, gb.imag

    return record(x.real.copy(), (re, im), _back, "idft"), residue


# ---------------------------------------------------------------------------
# Oracle suite


SPECTRAL_TOLERANCE = 1e-9
FFT_LENGTHS = tuple(2**k for k in range(2, 11))
CONV_LENGTHS = (4, 8, 16, 32)


def verify_spectra(trials: int = 50, seed: int = 0) -> dict[str, float]:
    """Max abs errors: radix-2 vs direct sum, inverse round trip, convolution theorem."""
    rng = np.random.default_rng(seed)
    fft_err = roundtrip_err = conv_err = 0.0
    for n in FFT_LENGTHS:
        for _ in range(trials):
            x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            fast = fft_radix2(x).bins
            fft_err = max(fft_err, float(np.max(np.abs(fast - dft_naive(x).bins))))
            roundtrip_err = max(roundtrip_err, float(np.max(np.abs(idft(Spectrum(fast), real=False) - x))))
    for n in CONV_LENGTHS:
        for _ in range(trials):
            x, h = rng.standard_normal(n), rng.standard_normal(n)
            via_spectrum = idft(Spectrum(dft(x).bins * dft(h).bins))
            conv_err = max(conv_err, float(np.max(np.abs(via_spectrum - circular_convolve(x, h)))))
    return {"fft_vs_naive": fft_err, "roundtrip": roundtrip_err, "convolution_theorem": conv_err}
