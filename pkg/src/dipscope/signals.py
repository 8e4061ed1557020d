"""Synthetic signals, noise models, resampling and PGM image I/O.

Images are grayscale float64 arrays in [0,1]. Noise generators are
deterministic per seed. File I/O speaks binary P5 PGM with maxval 255 and
nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import dft2


class PGMError(ValueError):
    """Raised for files that are not valid maxval-255 binary PGM."""


# ---------------------------------------------------------------------------
# synthetic signals


def two_sine(n, k1, k2, a1=1.0, a2=1.0):
    """a1*sin(2π k1 t) + a2*sin(2π k2 t) sampled at t = j/n, j = 0..n−1."""
    t = np.arange(n) / n
    return a1 * np.sin(2 * np.pi * k1 * t) + a2 * np.sin(2 * np.pi * k2 * t)


def _wave_texture(n, seed, k_lo, k_hi, n_waves, amp):
    """Deterministic aperiodic texture: random-phase plane waves in a band.

    Integer frequency pairs are drawn (seeded) with radius in [k_lo, k_hi]
    cycles per image, so the field is band-limited, zero-mean and has RMS
    close to amp. Unlike a periodic pattern it is spatially heterogeneous,
    which is what makes fits of it initialization-sensitive.
    """
    rng = np.random.default_rng(seed)
    y = np.arange(n)[:, None] / n
    x = np.arange(n)[None, :] / n
    tex = np.zeros((n, n))
    count = 0
    while count < n_waves:
        kx = int(rng.integers(-k_hi, k_hi + 1))
        ky = int(rng.integers(-k_hi, k_hi + 1))
        if not k_lo <= np.hypot(kx, ky) <= k_hi:
            continue
        phase = rng.uniform(0, 2 * np.pi)
        tex += np.sin(2 * np.pi * (kx * x + ky * y) + phase)
        count += 1
    return amp * tex / np.sqrt(n_waves / 2.0)


def synth_pattern_image(size, coverage):
    """Smooth shaded base with a centered patch of high-frequency texture.

    The base is a sum of one- and two-cycle sinusoid shadings, so it is
    band-limited by construction and contributes nothing outside the lowest
    few radial bins. The patch carries a fixed aperiodic wave texture (20
    random-phase plane waves, 6 to 14 cycles per image) over mid gray, in a
    centered square covering approximately ``coverage`` of all pixels.

    Two details matter for trajectory-divergence studies. The texture is a
    window into ONE fixed field, so growing the coverage strictly adds
    content without replacing any; and the patch boundary is feathered over
    a few pixels, because a hard edge would itself inject high-frequency
    content that scales with the patch perimeter rather than its area.
    """
    if not 0.0 <= coverage <= 1.0:
        raise ValueError(f"coverage must be in [0,1], got {coverage}")
    n = int(size)
    y = np.arange(n) / n
    x = np.arange(n) / n
    base = (
        0.5
        + 0.15 * np.sin(2 * np.pi * y)[:, None]
        + 0.10 * np.sin(2 * np.pi * 2 * x)[None, :]
        + 0.05 * np.sin(2 * np.pi * y)[:, None] * np.sin(2 * np.pi * x)[None, :]
    )
    if coverage <= 0.0:
        return np.clip(base, 0.0, 1.0)
    side = n * np.sqrt(coverage)
    c = (n - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    dist = np.maximum(np.abs(yy - c), np.abs(xx - c))
    mask = np.clip((side / 2.0 - dist) / 3.0, 0.0, 1.0)
    tex = _wave_texture(n, 71, 6, 14, 20, 0.30)
    img = base + mask * (0.5 + tex - base)
    return np.clip(img, 0.0, 1.0)


def plaid_image(size, k, contrast=0.15):
    """Mid-gray image carrying a single integer frequency k along each axis."""
    n = int(size)
    t = np.arange(n) / n
    wave = np.sin(2 * np.pi * k * t)
    return 0.5 + contrast * (wave[:, None] + wave[None, :])


def synthetic_corpus(size=64):
    """Three deterministic grayscale test images in [0,1].

    blobs: smooth Gaussian bumps (low-frequency heavy). shapes: disk, square
    and bar on a shaded background, the two large regions carrying mid-band
    wave texture (edges plus interior detail, like cloth or print in a
    photograph). ridges: concentric rings with angular modulation, reaching
    mid-band frequencies in every direction.
    """
    n = int(size)
    yy, xx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    y = (yy + 0.5) / n
    x = (xx + 0.5) / n

    def bump(cy, cx, s, a):
        return a * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * s * s))

    blobs = 0.15 + bump(0.3, 0.35, 0.13, 0.55) + bump(0.7, 0.7, 0.09, 0.45) \
        + bump(0.75, 0.25, 0.06, 0.35) + bump(0.2, 0.8, 0.05, 0.3)

    shapes = 0.25 + 0.2 * np.sin(np.pi * y)
    disk = (y - 0.35) ** 2 + (x - 0.3) ** 2 < 0.18 ** 2
    rect = (np.abs(y - 0.7) < 0.12) & (np.abs(x - 0.65) < 0.18)
    shapes[disk] = 0.85
    shapes[rect] = 0.1
    shapes[(np.abs(y - 0.25) < 0.03) & (x > 0.55)] = 0.65
    shapes = shapes + disk * _wave_texture(n, 5, 4, 9, 10, 0.10) \
        + rect * _wave_texture(n, 7, 6, 11, 10, 0.09) \
        + 0.04 * np.sin(2 * np.pi * (3 * x + 5 * y))

    r = np.sqrt((y - 0.5) ** 2 + (x - 0.5) ** 2)
    th = np.arctan2(y - 0.5, x - 0.5)
    ridges = 0.5 + 0.35 * np.cos(2 * np.pi * (n / 10.0) * r) \
        * (1 + 0.30 * np.sin(9 * th + 0.7)) * np.exp(-2.5 * r)

    return {
        "blobs": np.clip(blobs, 0, 1),
        "shapes": np.clip(shapes, 0, 1),
        "ridges": np.clip(ridges, 0, 1),
    }


# ---------------------------------------------------------------------------
# noise


@dataclass
class NoisyImage:
    """Clean image, noise field and their clipped sum."""

    clean: np.ndarray
    noise: np.ndarray
    observed: np.ndarray
    noise_kind: str
    noise_params: dict = field(default_factory=dict)
    seed: int = 0


def _make_noisy(clean, noise, kind, params, seed):
    clean = np.asarray(clean, dtype=float)
    observed = np.clip(clean + noise, 0.0, 1.0)
    return NoisyImage(clean, noise, observed, kind, params, seed)


def add_gaussian_noise(image, sigma=25 / 255, seed=0):
    """i.i.d. N(0, sigma²) noise; the observed image is clipped to [0,1]."""
    image = np.asarray(image, dtype=float)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=image.shape) if sigma > 0 else np.zeros(image.shape)
    return _make_noisy(image, noise, "gaussian", {"sigma": sigma}, seed)


def add_low_freq_noise(image, k_max=5, amplitude=25 / 255, seed=0):
    """Band-limited random-phase noise with RMS equal to ``amplitude``.

    The noise spectrum is nonzero only on 2D frequency bins whose centered
    radius is ≤ k_max (DC excluded), with i.i.d. uniform phases; the field
    is rescaled so its RMS matches ``amplitude`` exactly before clipping.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError(f"low-frequency noise needs a 2D image, got {image.shape}")
    h, w = image.shape
    fy = np.minimum(np.arange(h), h - np.arange(h)).astype(float)
    fx = np.minimum(np.arange(w), w - np.arange(w)).astype(float)
    radius = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    mask = radius <= k_max
    mask[0, 0] = False
    rng = np.random.default_rng(seed)
    spec = np.zeros((h, w), dtype=np.complex128)
    spec[mask] = np.exp(2j * np.pi * rng.uniform(size=int(mask.sum())))
    field_ = np.real(np.conj(dft2(np.conj(spec))) / (h * w))
    rms = float(np.sqrt(np.mean(field_ * field_)))
    if amplitude > 0 and rms > 0:
        noise = field_ * (amplitude / rms)
    else:
        noise = np.zeros((h, w))
    params = {"k_max": k_max, "amplitude": amplitude}
    return _make_noisy(image, noise, "low_frequency", params, seed)


# ---------------------------------------------------------------------------
# resampling


def downsample(image, factor):
    """Non-overlapping factor×factor block averaging."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"downsample expects a 2D image, got shape {img.shape}")
    f = int(factor)
    if f < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if f == 1:
        return img.copy()
    h, w = img.shape
    if h % f or w % f:
        raise ValueError(f"image shape {img.shape} not divisible by factor {f}")
    return img.reshape(h // f, f, w // f, f).mean(axis=(1, 3))


# ---------------------------------------------------------------------------
# PGM I/O


def _read_header_tokens(raw):
    """Yield (token, position-after) for header fields, skipping comments."""
    pos = 0
    n = len(raw)
    while True:
        while pos < n and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos : pos + 1] == b"#":
            while pos < n and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError("malformed PGM header: ran out of fields")
        yield raw[start:pos], pos


def load_pgm(path):
    """Read a binary (P5) PGM with maxval 255 into a float image in [0,1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = _read_header_tokens(raw)
    magic, _ = next(tokens)
    if magic == b"P2":
        raise PGMError("unsupported PGM variant: ASCII (P2) files are not handled")
    if magic != b"P5":
        raise PGMError(f"malformed PGM header: bad magic {magic!r}")
    try:
        (wtok, _), (htok, _), (mtok, end) = next(tokens), next(tokens), next(tokens)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except (ValueError, StopIteration):
        raise PGMError("malformed PGM header: width/height/maxval unreadable") from None
    if width <= 0 or height <= 0:
        raise PGMError(f"malformed PGM header: bad dimensions {width}x{height}")
    if maxval != 255:
        raise PGMError(f"unsupported maxval {maxval}, only 255 is handled")
    payload = raw[end + 1 :]  # single whitespace byte separates header and pixels
    if len(payload) < width * height:
        raise PGMError(
            f"truncated PGM payload: expected {width * height} bytes, got {len(payload)}"
        )
    pixels = np.frombuffer(payload[: width * height], dtype=np.uint8)
    return pixels.reshape(height, width).astype(np.float64) / 255.0


def save_pgm(image, path):
    """Write a float image in [0,1] as binary PGM (round-half-up to 8 bits)."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"save_pgm expects a 2D image, got shape {img.shape}")
    q = np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def quantize(image):
    """The value grid save_pgm would store: round-half-up to /255 steps."""
    img = np.asarray(image, dtype=float)
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255) / 255.0
