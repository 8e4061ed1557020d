"""Frequency responses of the fixed upsampling kernels.

The analytic responses are the continuous-time idealizations: a width-L box
gives sin(πLk)/(πLk) and the width-2L triangle its square, with k in cycles
per output sample. The measured response drives the actual discrete
`upsample` op with a sinusoid probe and reads the output amplitude at the
same cycle count, so it reflects zero-insertion, the discrete taps, and the
edge-replicated boundary exactly as the models see them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, upsample, upsample_taps
from .spectral import amplitude_at


@dataclass
class UpsampleKernel:
    mode: str
    stride: int
    taps: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.taps is None:
            self.taps = upsample_taps(self.mode, self.stride)
        self.taps = np.asarray(self.taps, dtype=float)
        if abs(self.taps.sum() - self.stride) > 1e-12:
            raise ValueError(
                f"taps sum {self.taps.sum()} != stride {self.stride} (DC gain)"
            )
        if not np.allclose(self.taps, self.taps[::-1], atol=1e-12):
            raise ValueError("taps must be symmetric")


def analytic_response(mode, k, stride):
    """Idealized response at k cycles per output sample, unit DC gain.

    nearest: sin(πLk)/(πLk); bilinear: its square. k = 0 returns the
    limiting value 1.
    """
    if not 0 <= k <= 0.5:
        raise ValueError(f"k must lie in [0, 0.5] cycles/sample, got {k}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown mode {mode!r}")
    if k == 0:
        return 1.0
    x = math.pi * stride * k
    s = math.sin(x) / x
    return s if mode == "nearest" else s * s


def analytic_response_unnormalized(mode, k, stride):
    """The bilinear response without unit-DC normalization (the raw kernel
    sum carries DC gain L instead of 1); nearest is unchanged."""
    base = analytic_response(mode, k, stride)
    return base * stride if mode == "bilinear" else base


def measured_response(mode, stride, k, n=256):
    """Amplitude ratio through the discrete upsampler.

    A unit-amplitude sinusoid with k integer cycles over n/stride input
    samples is upsampled to length n; the response is the output amplitude
    at the same cycle count (the mean ratio for the k = 0 constant probe).
    """
    if n % stride:
        raise ValueError(f"probe length {n} not a multiple of stride {stride}")
    n_in = n // stride
    if not isinstance(k, (int, np.integer)):
        raise ValueError(f"k must be an integer cycle count, got {k!r}")
    if not 0 <= k < n_in / 2:
        raise ValueError(f"k={k} outside [0, {n_in / 2}) for {n_in} input samples")
    if k == 0:
        probe = np.ones(n_in)
        out = upsample(Tensor(probe), mode, stride).data
        return float(out.mean())
    t = np.arange(n_in)
    probe = np.sin(2 * np.pi * k * t / n_in)
    out = upsample(Tensor(probe), mode, stride).data
    return float(amplitude_at(out, int(k)))


def response_decay_report(modes, strides, k_grid, n=256):
    """Analytic vs measured responses, one row per (mode, stride, k).

    k_grid entries are cycles per output sample; each is snapped to the
    nearest integer probe cycle count c = round(k·n) and reported at the
    snapped frequency c/n. Columns: mode, L, k, analytic,
    analytic_unnormalized, measured, abs_diff.
    """
    rows = []
    for mode in modes:
        for stride in strides:
            for k in k_grid:
                c = int(round(k * n))
                k_eff = c / n
                ana = analytic_response(mode, k_eff, stride)
                unnorm = analytic_response_unnormalized(mode, k_eff, stride)
                meas = measured_response(mode, stride, c, n)
                rows.append(
                    {
                        "mode": mode,
                        "L": stride,
                        "k": k_eff,
                        "analytic": ana,
                        "analytic_unnormalized": unnorm,
                        "measured": meas,
                        "abs_diff": abs(meas - ana),
                    }
                )
    return rows
