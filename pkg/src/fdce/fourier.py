"""2D discrete Fourier transforms and amplitude/phase decomposition.

Convention: unnormalized forward transform (DC coefficient = pixel sum),
inverse scaled by 1/(H*W). Power-of-two extents take the iterative radix-2
path; any other extent falls back to a direct DFT matrix product.

Transforms are differentiable: `fft2` / `ifft2` record adjoint closures on
the tensor tape, so the FSRB frequency path trains end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, TensorError, atan2

PHASE_EPS = 1e-8  # amplitude guard keeping the phase adjoint defined at A=0


_MATMUL_CUTOFF = 64  # lengths at or below this use the cached DFT matrix


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


from functools import lru_cache


@lru_cache(maxsize=None)
def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


@lru_cache(maxsize=None)
def _twiddles(m, sign):
    return np.exp(sign * 2j * np.pi * np.arange(m // 2) / m)


@lru_cache(maxsize=None)
def _dft_matrix(n, sign):
    k = np.arange(n)
    return np.exp(sign * 2j * np.pi * np.outer(k, k) / n)


def _fft1d(a, sign):
    """Unnormalized 1D transform along the last axis of a complex array.

    sign=-1 is the forward transform, sign=+1 the (unscaled) inverse.
    """
    n = a.shape[-1]
    if n == 1:
        return a.astype(np.complex128)
    if not _is_pow2(n):
        return a @ _dft_matrix(n, sign)  # direct DFT for general extents
    if n <= _MATMUL_CUTOFF:
        # base case: one BLAS product beats the staged butterflies here
        return a @ _dft_matrix(n, sign)
    out = np.ascontiguousarray(a[..., _bit_reverse_indices(n)],
                               dtype=np.complex128)
    flat = out.reshape(-1, n)
    m = 2
    while m <= n:
        half = m // 2
        w = _twiddles(m, sign)
        o = flat.reshape(-1, n // m, m)
        t = o[:, :, half:] * w
        o[:, :, half:] = o[:, :, :half] - t
        o[:, :, :half] += t
        m *= 2
    return out


def _dft2(a, sign):
    """Unnormalized 2D transform over the last two axes."""
    out = _fft1d(np.asarray(a, dtype=np.complex128), sign)
    out = _fft1d(out.swapaxes(-1, -2), sign)
    return out.swapaxes(-1, -2)


def dft2(a):
    return _dft2(a, -1)


def idft2(a):
    h, w = a.shape[-2:]
    return _dft2(a, +1) / (h * w)


@dataclass
class Spectrum:
    """Complex 2D frequency representation as a real/imaginary tensor pair."""
    real_part: Tensor
    imag_part: Tensor

    @property
    def shape(self):
        return self.real_part.shape

    def complex_data(self):
        return self.real_part.data + 1j * self.imag_part.data


@dataclass
class PolarSpectrum:
    """Amplitude (>= 0) and phase (radians in (-pi, pi]) planes."""
    amplitude: Tensor
    phase: Tensor


def fft2(img):
    """Forward 2D transform of a real tensor [..., H, W] -> Spectrum."""
    if not isinstance(img, Tensor):
        img = Tensor(img)
    if img.size == 0:
        raise TensorError("fft2 of empty input")
    spec = dft2(img.data)

    def back_re(g):
        img._accum(_dft2(g.astype(np.complex128), -1).real)

    def back_im(g):
        img._accum(_dft2(-1j * g.astype(np.complex128), -1).real)

    re = Tensor(spec.real.astype(img.dtype), _parents=(img,), _backward=back_re)
    im = Tensor(spec.imag.astype(img.dtype), _parents=(img,), _backward=back_im)
    return Spectrum(re, im)


def ifft2(s, max_imag=None):
    """Inverse transform; returns the real part scaled by 1/(H*W).

    If `max_imag` is given, raises when the discarded imaginary residue
    exceeds it (useful for spectra that should be conjugate-symmetric).
    """
    h, w = s.real_part.shape[-2:]
    full = idft2(s.complex_data())
    if max_imag is not None and np.abs(full.imag).max() > max_imag:
        raise FloatingPointError(
            f"imaginary residue {np.abs(full.imag).max():.3e} exceeds {max_imag}")
    re_in, im_in = s.real_part, s.imag_part

    def back_re(g):
        gs = _dft2(g.astype(np.complex128), -1) / (h * w)
        re_in._accum(gs.real)

    def back_im(g):
        gs = _dft2(g.astype(np.complex128), -1) / (h * w)
        im_in._accum(gs.imag)

    dtype = re_in.dtype
    out_re = Tensor(full.real.astype(dtype), _parents=(re_in,), _backward=back_re)
    # route the imaginary-part adjoint through a zero-valued summand
    bridge = Tensor(np.zeros_like(full.real, dtype=dtype), _parents=(im_in,),
                    _backward=back_im)
    return out_re + bridge


def decompose(s, eps=PHASE_EPS):
    """Spectrum -> amplitude/phase planes (differentiable)."""
    if eps <= 0:
        raise TensorError("decompose requires eps > 0")
    re, im = s.real_part, s.imag_part
    amplitude = (re * re + im * im + eps * eps).sqrt()
    phase = atan2(im, re)
    return PolarSpectrum(amplitude, phase)


def recompose(p):
    """Amplitude/phase -> rectangular spectrum: re = A cos(phi), im = A sin(phi)."""
    return Spectrum(p.amplitude * p.phase.cos(), p.amplitude * p.phase.sin())


# ----------------------------------------------------------------------
# motivation experiments on H x W x 3 images
# ----------------------------------------------------------------------
def _channels_first(img):
    return np.ascontiguousarray(np.moveaxis(np.asarray(img, dtype=np.float64),
                                            -1, 0))


def _channels_last(chw):
    return np.moveaxis(chw, 0, -1)


def swap_experiment(a, b, clip=True):
    """Reconstruct (amplitude of a, phase of b) and (amplitude of b, phase of a).

    Inputs and outputs are H x W x 3 images; outputs are clipped to [0, 1]
    unless `clip=False`.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise TensorError(f"swap_experiment shape mismatch: {a.shape} vs {b.shape}")
    sa = dft2(_channels_first(a))
    sb = dft2(_channels_first(b))
    amp_a, pha_a = np.abs(sa), np.angle(sa)
    amp_b, pha_b = np.abs(sb), np.angle(sb)
    rec_ab = idft2(amp_a * np.exp(1j * pha_b)).real
    rec_ba = idft2(amp_b * np.exp(1j * pha_a)).real
    if clip:
        rec_ab = np.clip(rec_ab, 0.0, 1.0)
        rec_ba = np.clip(rec_ba, 0.0, 1.0)
    return _channels_last(rec_ab), _channels_last(rec_ba)


def component_only(img, keep):
    """Reconstruct from a single polar component of an image's spectrum.

    keep="phase": constant amplitude (the spectrum's mean amplitude);
    keep="amplitude": constant zero phase. Output min-max normalized to [0,1].
    """
    if keep not in ("amplitude", "phase"):
        raise TensorError(f"keep must be 'amplitude' or 'phase', got {keep!r}")
    s = dft2(_channels_first(img))
    if keep == "phase":
        const_amp = np.abs(s).mean(axis=(-2, -1), keepdims=True)
        rec = idft2(const_amp * np.exp(1j * np.angle(s))).real
    else:
        rec = idft2(np.abs(s).astype(np.complex128)).real
    lo = rec.min()
    hi = rec.max()
    if hi - lo < 1e-9:
        rec = np.clip(rec, 0.0, 1.0)  # constant image: nothing to normalize
    else:
        rec = (rec - lo) / (hi - lo)
    return _channels_last(rec)
