"""Frequency-domain measurements.

Everything downstream of the optimizer that asks "what did the model fit,
spectrally?" lives here: the DFT itself (a hand-rolled iterative radix-2
transform with a direct O(n²) fallback used both for odd lengths and as an
independent cross-check), per-frequency amplitude estimates, convergence
times under a persistence rule, trajectory divergence, PSNR and
spectrum-error maps.

All functions are pure; nothing here mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


# ---------------------------------------------------------------------------
# transforms


def _bit_reverse_indices(n):
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev = (rev << 1) | ((idx >> b) & 1)
    return rev


def _fft_pow2(a):
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Bit-reverse the input order once, then run log2(n) butterfly stages with
    vectorized twiddles.
    """
    n = a.shape[-1]
    out = np.asarray(a[..., _bit_reverse_indices(n)], dtype=np.complex128)
    half = 1
    while half < n:
        tw = np.exp((-2j * np.pi / (2 * half)) * np.arange(half))
        v = out.reshape(out.shape[:-1] + (-1, 2 * half))
        lo = v[..., :half]
        hi = v[..., half:] * tw
        out = np.concatenate([lo + hi, lo - hi], axis=-1).reshape(out.shape)
        half *= 2
    return out


def dft_direct(signal):
    """O(n²) DFT along the last axis via the explicit transform matrix."""
    a = np.asarray(signal)
    n = a.shape[-1]
    jk = np.outer(np.arange(n), np.arange(n))
    m = np.exp((-2j * np.pi / n) * jk)
    return a @ m  # m is symmetric, so this is M @ x per row


def dft(signal):
    """DFT along the last axis: radix-2 fast path when the length is a
    power of two, direct evaluation otherwise."""
    a = np.asarray(signal)
    n = a.shape[-1]
    if n == 0:
        raise ValueError("dft of empty signal")
    if n & (n - 1) == 0:
        return _fft_pow2(a)
    return dft_direct(a)


def inverse_dft(spectrum):
    """Inverse of ``dft`` along the last axis."""
    x = np.asarray(spectrum, dtype=np.complex128)
    return np.conj(dft(np.conj(x))) / x.shape[-1]


def dft2(image):
    """2D DFT of an (H, W) array: transform rows, then columns."""
    a = np.asarray(image)
    if a.ndim != 2:
        raise ValueError(f"dft2 expects a 2D array, got shape {a.shape}")
    return dft(dft(a).T).T


def amplitude_at(signal, k):
    """Estimated amplitude of the k-cycle component: Ã = 2·|X[k]| / n."""
    x = np.asarray(signal)
    n = x.shape[-1]
    if not 0 < k < n / 2:
        raise ValueError(f"frequency k={k} outside (0, n/2) for n={n}")
    return 2.0 * np.abs(dft(x)[..., k]) / n


# ---------------------------------------------------------------------------
# traces and convergence


@dataclass
class ConvergenceCriterion:
    """SE threshold plus how many recorded points it must hold for."""

    delta: float = 0.01
    window: int = 5

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


@dataclass
class SpectralTrace:
    """Amplitude history of one frequency along a trajectory.

    ``amplitudes`` holds Ã at each recorded iteration; ``iterations`` (when
    given) holds the matching iteration numbers.
    """

    k: int
    true_amplitude: float
    amplitudes: np.ndarray
    iterations: list | None = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float)
        if self.iterations is not None and len(self.iterations) != len(self.amplitudes):
            raise ValueError("iterations and amplitudes lengths differ")

    @property
    def se(self):
        d = self.amplitudes - self.true_amplitude
        return d * d


def trace_from_outputs(outputs, k, true_amplitude, iterations=None):
    """Build a SpectralTrace by measuring Ã on each recorded output."""
    amps = np.array([amplitude_at(np.asarray(o).reshape(-1), k) for o in outputs])
    return SpectralTrace(k, true_amplitude, amps, iterations)


def convergence_time(trace, crit=None):
    """First recorded point where SE ≤ δ and stays there for the next
    window−1 recorded points (or through the end of the trace).

    Returns the iteration number when the trace carries one, else the
    recorded index; None if the trace never converges.
    """
    crit = crit or ConvergenceCriterion()
    ok = trace.se <= crit.delta
    for i in range(len(ok)):
        if ok[i] and ok[i : i + crit.window].all():
            return trace.iterations[i] if trace.iterations is not None else i
    return None


# ---------------------------------------------------------------------------
# trajectory comparisons


@dataclass
class DivergenceSeries:
    """Per-recorded-iteration SSE between two trajectories."""

    values: np.ndarray
    iterations: list | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def peak(self):
        return float(self.values.max())


def trajectory_divergence(t1, t2):
    """ε at each recorded iteration: sum of squared elementwise differences
    between the two trajectories' outputs."""
    o1 = getattr(t1, "outputs", t1)
    o2 = getattr(t2, "outputs", t2)
    i1 = getattr(t1, "iterations", None)
    i2 = getattr(t2, "iterations", None)
    if i1 is not None and i2 is not None and list(i1) != list(i2):
        raise ValueError("trajectories record different iteration lists")
    if len(o1) != len(o2):
        raise ValueError(f"trajectory lengths differ: {len(o1)} vs {len(o2)}")
    vals = np.empty(len(o1))
    for i, (a, b) in enumerate(zip(o1, o2)):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != b.shape:
            raise ValueError(
                f"recorded output {i} shape mismatch: {a.shape} vs {b.shape}"
            )
        d = a - b
        vals[i] = float((d * d).sum())
    return DivergenceSeries(vals, list(i1) if i1 is not None else None)


def psnr(x, ref, peak=1.0):
    """10·log10(peak²/MSE); +inf when the images are identical."""
    a = np.asarray(x, dtype=float)
    b = np.asarray(ref, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# spectra of signals and trajectories


def radial_spectrum(image):
    """Radially binned magnitude spectrum of a 2D image.

    Bin r collects all frequency-plane cells whose integer-rounded centered
    radius is r; the bin value is sqrt of the summed squared magnitudes.
    Returns bins 0..floor(min(H,W)/2).
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"radial_spectrum expects 2D, got shape {img.shape}")
    h, w = img.shape
    mag2 = np.abs(dft2(img)) ** 2
    fy = np.minimum(np.arange(h), h - np.arange(h))  # centered |frequency|
    fx = np.minimum(np.arange(w), w - np.arange(w))
    r = np.rint(np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)).astype(int)
    n_bins = min(h, w) // 2 + 1
    sums = np.bincount(r.reshape(-1), weights=mag2.reshape(-1))
    return np.sqrt(sums[:n_bins])


def _mag_profile(signal):
    a = np.asarray(signal, dtype=float)
    if a.ndim == 1:
        return np.abs(dft(a))[: a.shape[0] // 2 + 1]
    if a.ndim == 2:
        return radial_spectrum(a)
    raise ValueError(f"expected 1D or 2D signal, got shape {a.shape}")


def spectrum_error_map(traj, target):
    """|magnitude spectrum of each recorded output − that of the target|.

    Rows are recorded iterations, columns frequency bins (radial bins for
    2D signals).
    """
    outputs = getattr(traj, "outputs", traj)
    ref = _mag_profile(target)
    return np.vstack([np.abs(_mag_profile(o) - ref) for o in outputs])


def band_energy(signal, k_lo, k_hi):
    """Summed squared spectrum magnitude over bins in [k_lo, k_hi).

    1D signals index raw DFT bins; 2D signals bin by integer-rounded
    centered radius (corner bins beyond floor(n/2) included when the band
    reaches them).
    """
    if not 0 <= k_lo <= k_hi:
        raise ValueError(f"bad band [{k_lo}, {k_hi})")
    a = np.asarray(signal, dtype=float)
    if a.ndim == 1:
        mag2 = np.abs(dft(a)) ** 2
        return float(mag2[k_lo:k_hi].sum())
    if a.ndim == 2:
        h, w = a.shape
        mag2 = np.abs(dft2(a)) ** 2
        fy = np.minimum(np.arange(h), h - np.arange(h))
        fx = np.minimum(np.arange(w), w - np.arange(w))
        r = np.rint(np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2))
        return float(mag2[(r >= k_lo) & (r < k_hi)].sum())
    raise ValueError(f"expected 1D or 2D signal, got shape {a.shape}")
