"""Frequency-domain feature extraction for windowed IMU signals.

A window is an M x T real array (channels x samples). Each channel is
transformed with a hand-rolled mixed-radix FFT, the redundant conjugate
half and the DC bin are dropped, and the remaining bins are reduced to
amplitude and/or phase features. All functions are pure.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

FEATURE_MODES = ("amplitude", "phase", "amplitude_phase", "time")

# Prime sizes above this are transformed with the direct O(n^2) sum instead
# of recursing further. Any prime <= the threshold is handled as a direct
# base case too, so the FFT supports arbitrary lengths; only large prime
# factors pay the quadratic fallback cost.
DIRECT_DFT_MAX_PRIME = 61


class WindowTooShortError(ValueError):
    """The window has too few samples to yield any retained bins."""


def n_retained_bins(t):
    """Retained bin count: bins 1..floor(T/2) inclusive (DC dropped)."""
    return t // 2


def dft_real(signal):
    """Direct O(T^2) discrete Fourier transform of a real signal.

    X(k) = sum_t x(t) exp(-2*pi*j*k*t/T) for k = 0..T-1. This is the
    reference implementation the FFT is checked against.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("dft_real expects a 1-D signal of length >= 2")
    t = x.size
    k = np.arange(t)
    basis = np.exp((-2j * np.pi / t) * np.outer(k, k))
    return basis @ x.astype(np.complex128)


def _smallest_prime_factor(n):
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


def _dft_direct(x):
    """Direct transform along the last axis (complex input)."""
    n = x.shape[-1]
    k = np.arange(n)
    basis = np.exp((-2j * np.pi / n) * np.outer(k, k))
    return x @ basis


def _fft_rec(x):
    """Mixed-radix Cooley-Tukey along the last axis of a complex array."""
    n = x.shape[-1]
    p = _smallest_prime_factor(n)
    if p == n or p > DIRECT_DFT_MAX_PRIME:
        return _dft_direct(x)
    m = n // p
    # p strided subsequences, transformed together: sub[..., j, i] = x[..., i*p + j]
    sub = np.swapaxes(x.reshape(x.shape[:-1] + (m, p)), -1, -2)
    sub = _fft_rec(sub)
    k = np.arange(n)
    twiddle = np.exp((-2j * np.pi / n) * np.outer(np.arange(p), k))  # (p, n)
    gathered = sub[..., :, k % m]  # (..., p, n)
    return np.einsum("...jk,jk->...k", gathered, twiddle)


def fft_real(signal):
    """FFT of a real signal; equals dft_real to ~1e-9 per bin.

    Arbitrary lengths are supported; smooth lengths run in O(T log T),
    lengths with a prime factor above DIRECT_DFT_MAX_PRIME fall back to the
    direct sum for that factor.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("fft_real expects a 1-D signal of length >= 2")
    return _fft_rec(x.astype(np.complex128))


def spectrum(windows):
    """FFT along the last axis of a real array (e.g. M x T, or N x M x T)."""
    x = np.asarray(windows, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("need at least 2 samples per channel")
    return _fft_rec(x.astype(np.complex128))


def truncate_spectrum(spec):
    """Keep bins 1..floor(T/2): drop DC and the redundant conjugate half."""
    spec = np.asarray(spec)
    t = spec.shape[-1]
    if t < 4:
        raise WindowTooShortError(f"window of {t} samples leaves no usable bins")
    return spec[..., 1 : t // 2 + 1]


def amplitude(spec):
    return np.abs(spec)


def phase(spec):
    return np.angle(spec)


def _standardize_rows(feats):
    mu = feats.mean(axis=-1, keepdims=True)
    sd = feats.std(axis=-1, keepdims=True)
    return (feats - mu) / np.maximum(sd, 1e-12)


def featurize(window, mode, standardize=False):
    """Turn an M x T window (or a batch of them) into model input features.

    amplitude       -> M x T~ amplitudes
    phase           -> M x T~ phases
    amplitude_phase -> M x 2T~ (amplitudes then phases, per channel)
    time            -> M x T raw passthrough
    """
    x = np.asarray(window, dtype=np.float64)
    if mode == "time":
        feats = x
    elif mode in ("amplitude", "phase", "amplitude_phase"):
        trunc = truncate_spectrum(spectrum(x))
        if mode == "amplitude":
            feats = amplitude(trunc)
        elif mode == "phase":
            feats = phase(trunc)
        else:
            feats = np.concatenate([amplitude(trunc), phase(trunc)], axis=-1)
    else:
        raise ConfigError(f"unknown feature mode {mode!r}; expected one of {FEATURE_MODES}")
    if standardize:
        feats = _standardize_rows(feats)
    return feats
