"""Deterministic natural-looking test imagery.

Scenes are built from 1/f-spectrum noise (the power law natural photographs
follow) overlaid with a few hard-edged shapes, then tinted per domain. Used by
the benchmark, the demo fixtures and the test-suite.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imgcore import ImageBuffer, write_image

# per-domain (gain, offset, gamma) applied channel-wise after scene synthesis
DOMAINS = {
    "neutral": (np.array([1.0, 1.0, 1.0]), np.array([0.0, 0.0, 0.0]), 1.0),
    "synthetic": (np.array([1.05, 0.85, 0.55]), np.array([0.05, 0.02, 0.0]), 0.8),
    "realistic": (np.array([0.6, 0.75, 0.95]), np.array([0.0, 0.05, 0.12]), 1.3),
}


def power_law_field(rng: np.random.Generator, h: int, w: int, exponent: float = 1.0) -> np.ndarray:
    """Zero-mean unit-variance field with amplitude spectrum ~ 1/f**exponent."""
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.hypot(fy, fx)
    f[0, 0] = 1.0
    amp = f ** -exponent
    amp[0, 0] = 0.0
    phase = rng.uniform(0, 2 * np.pi, size=amp.shape)
    field = np.fft.irfft2(amp * np.exp(1j * phase), s=(h, w))
    return (field - field.mean()) / (field.std() + 1e-12)


def _shapes(rng: np.random.Generator, h: int, w: int, base: np.ndarray) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    out = base.copy()
    for _ in range(rng.integers(2, 6)):
        value = rng.uniform(-1.5, 1.5)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        if rng.random() < 0.5:
            ry, rx = rng.uniform(0.08, 0.35) * h, rng.uniform(0.08, 0.35) * w
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            hh, ww = rng.uniform(0.1, 0.5) * h, rng.uniform(0.1, 0.5) * w
            mask = (np.abs(yy - cy) <= hh / 2) & (np.abs(xx - cx) <= ww / 2)
        out = np.where(mask, 0.4 * out + value, out)
    return out


def natural_image(seed: int, size: tuple[int, int] = (64, 64), domain: str = "neutral") -> ImageBuffer:
    """One RGB scene. ``size`` is (height, width)."""
    h, w = size
    rng = np.random.default_rng(seed)
    luma = _shapes(rng, h, w, power_law_field(rng, h, w, 1.0))
    chroma = [0.25 * power_law_field(rng, h, w, 2.0) for _ in range(2)]
    rgb = np.stack([luma + chroma[0], luma - 0.5 * chroma[0] + chroma[1], luma - chroma[1]], axis=2)
    rgb = 0.5 + 0.18 * rgb
    gain, offset, gamma = DOMAINS[domain]
    rgb = np.clip(rgb, 0.0, 1.0) ** gamma * gain + offset
    return ImageBuffer.rgb(np.clip(rgb, 0.0, 1.0))


def natural_corpus(n: int, seed: int = 0, size=(64, 64), domain: str = "neutral") -> list[ImageBuffer]:
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [natural_image(int(s), size, domain) for s in seeds]


def write_corpus(directory, n: int, seed: int = 0, size=(64, 64), domain: str = "neutral", prefix: str = "img") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(natural_corpus(n, seed, size, domain)):
        path = directory / f"{prefix}{i:04d}.png"
        write_image(img, path)
        paths.append(path)
    return paths
