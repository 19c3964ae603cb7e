"""Photometric restyling backends.

All three backends take an RGB content image and an RGB style image and return
an RGB image carrying the content's structure with the style's color statistics:

* ``STATS`` - per-channel mean/stddev transfer in the log-opponent space.
* ``HIST``  - per-channel 256-bin histogram specification in RGB.
* ``FREQ``  - ``STATS`` followed by re-imposing the content's high-frequency
  luminance detail.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, WrongColorspace
from .imgcore import (
    ColorSpace,
    ImageBuffer,
    decorrelated_to_rgb,
    read_image,
    rgb_to_decorrelated,
    to_rgb,
)

DEGENERATE_STD = 1e-12


class Backend(str, enum.Enum):
    STATS = "STATS"
    HIST = "HIST"
    FREQ = "FREQ"

    @classmethod
    def parse(cls, text) -> "Backend":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).upper())
        except ValueError:
            choices = ", ".join(b.value.lower() for b in cls)
            raise ConfigError(f"unknown restyle backend {text!r} (expected one of {choices})") from None


@dataclass(frozen=True)
class RestyleConfig:
    backend: Backend = Backend.STATS
    detail_preserve: bool = False
    lowpass_radius: int = 8
    ratio_min: float = 0.1
    ratio_max: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "backend", Backend.parse(self.backend))
        if int(self.lowpass_radius) != self.lowpass_radius or self.lowpass_radius < 1:
            raise ConfigError(f"lowpass_radius must be an integer >= 1, got {self.lowpass_radius}")
        if not 0 < self.ratio_min <= 1 <= self.ratio_max:
            raise ConfigError("stddev ratio bounds must satisfy 0 < ratio_min <= 1 <= ratio_max")

    @classmethod
    def from_mapping(cls, data: dict) -> "RestyleConfig":
        known = {"backend", "detail_preserve", "lowpass_radius", "ratio_min", "ratio_max"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown restyle option(s): {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        for key, typ in (("lowpass_radius", int), ("ratio_min", float), ("ratio_max", float)):
            if key in kwargs:
                try:
                    kwargs[key] = typ(kwargs[key])
                except (TypeError, ValueError):
                    raise ConfigError(f"{key} must be a number, got {kwargs[key]!r}") from None
        if "detail_preserve" in kwargs and not isinstance(kwargs["detail_preserve"], bool):
            raise ConfigError("detail_preserve must be true or false")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backend"] = self.backend.value
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _require_rgb(*imgs: ImageBuffer):
    for img in imgs:
        if img.colorspace is not ColorSpace.RGB:
            raise WrongColorspace(f"restyling needs RGB inputs, got {img.colorspace.value}")


def _match_moments(plane: np.ndarray, mean: float, std: float, ratio_bounds=None) -> np.ndarray:
    mu, sigma = plane.mean(), plane.std()
    if sigma <= DEGENERATE_STD:
        # no contrast to rescale: take the style mean
        return np.full_like(plane, mean)
    ratio = std / sigma
    if ratio_bounds is not None:
        ratio = float(np.clip(ratio, *ratio_bounds))
    return (plane - mu) * ratio + mean


def transfer_decorrelated(
    content: ImageBuffer, style: ImageBuffer, ratio_bounds=(0.1, 10.0)
) -> ImageBuffer:
    """Mean/stddev transfer in the log-opponent space, before any clamping."""
    _require_rgb(content, style)
    c = rgb_to_decorrelated(content).data
    s = rgb_to_decorrelated(style).data.reshape(-1, 3)
    s_mean, s_std = s.mean(axis=0), s.std(axis=0)
    out = np.stack(
        [_match_moments(c[:, :, ch], s_mean[ch], s_std[ch], ratio_bounds) for ch in range(3)],
        axis=2,
    )
    return ImageBuffer(out, ColorSpace.DECORRELATED)


def color_stats_transfer(content: ImageBuffer, style: ImageBuffer, ratio_bounds=(0.1, 10.0)) -> ImageBuffer:
    return decorrelated_to_rgb(transfer_decorrelated(content, style, ratio_bounds))


def histogram_match(content: ImageBuffer, style: ImageBuffer) -> ImageBuffer:
    """Map each content channel through its CDF onto the style channel's CDF.

    Both images are quantized to 256 levels; content level ``j`` maps to the
    first style level whose cumulative share reaches content's share at ``j``.
    Shares are compared as cross-multiplied integer counts, so self-mapping
    is exact.
    """
    _require_rgb(content, style)
    cq = np.round(content.data * 255.0).astype(np.int64).clip(0, 255)
    sq = np.round(style.data * 255.0).astype(np.int64).clip(0, 255)
    n_c = cq.shape[0] * cq.shape[1]
    n_s = sq.shape[0] * sq.shape[1]
    out = np.empty(content.shape)
    for ch in range(3):
        c_cum = np.cumsum(np.bincount(cq[:, :, ch].ravel(), minlength=256))
        s_cum = np.cumsum(np.bincount(sq[:, :, ch].ravel(), minlength=256))
        lut = np.searchsorted(s_cum * n_c, c_cum * n_s, side="left").clip(0, 255)
        out[:, :, ch] = lut[cq[:, :, ch]] / 255.0
    return ImageBuffer.rgb(out)


def box_blur(plane: np.ndarray, radius: int) -> np.ndarray:
    """Separable mean filter of width ``2*radius + 1`` with edge replication."""
    width = 2 * radius + 1
    out = plane
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius + 1, radius)
        padded = np.pad(out, pad, mode="edge")
        csum = np.cumsum(padded, axis=axis)
        hi = np.take(csum, np.arange(width, csum.shape[axis]), axis=axis)
        lo = np.take(csum, np.arange(0, csum.shape[axis] - width), axis=axis)
        out = (hi - lo) / width
    return out


def _contrast_gain(content_l: np.ndarray, restyled_l: np.ndarray) -> float:
    sigma = content_l.std()
    return 1.0 if sigma <= DEGENERATE_STD else restyled_l.std() / sigma


def reimpose_detail(content_dec: np.ndarray, restyled_dec: np.ndarray, radius: int, base_l=None) -> np.ndarray:
    """Put the content's high-frequency luminance detail back into a restyled image.

    ``luma = lowpass(base) + gain * (content - lowpass(content))`` where ``base``
    defaults to the restyled luminance and ``gain`` is the restyled/content
    luminance stddev ratio, so both frequency bands carry the same contrast
    scaling. The result is rescaled to the restyled luminance mean/stddev.
    Chroma channels are taken from ``restyled_dec`` unchanged.
    """
    out = restyled_dec.copy()
    c, r = content_dec[:, :, 0], restyled_dec[:, :, 0]
    base = r if base_l is None else base_l
    luma = box_blur(base, radius) + _contrast_gain(c, r) * (c - box_blur(c, radius))
    out[:, :, 0] = _match_moments(luma, r.mean(), r.std())
    return out


def frequency_blend_decorrelated(content: ImageBuffer, style: ImageBuffer, cfg: RestyleConfig) -> ImageBuffer:
    """FREQ backend before the final RGB clamp.

    The lowpass comes from the stats transfer as it looks after gamut clamping
    (what the STATS backend would output), so structure flattened by clipping is
    restored from the content's highpass.
    """
    bounds = (cfg.ratio_min, cfg.ratio_max)
    transferred = transfer_decorrelated(content, style, bounds)
    visible = rgb_to_decorrelated(decorrelated_to_rgb(transferred)).data
    content_dec = rgb_to_decorrelated(content).data
    out = reimpose_detail(content_dec, transferred.data, cfg.lowpass_radius, base_l=visible[:, :, 0])
    return ImageBuffer(out, ColorSpace.DECORRELATED)


def frequency_blend(content: ImageBuffer, style: ImageBuffer, cfg: RestyleConfig | None = None) -> ImageBuffer:
    cfg = cfg or RestyleConfig(backend=Backend.FREQ)
    return decorrelated_to_rgb(frequency_blend_decorrelated(content, style, cfg))


def _run_stats(content, style, cfg):
    return color_stats_transfer(content, style, (cfg.ratio_min, cfg.ratio_max))


def _run_hist(content, style, cfg):
    return histogram_match(content, style)


BACKENDS: dict[Backend, Callable[[ImageBuffer, ImageBuffer, RestyleConfig], ImageBuffer]] = {
    Backend.STATS: _run_stats,
    Backend.HIST: _run_hist,
    Backend.FREQ: frequency_blend,
}


def restyle(content: ImageBuffer, style: ImageBuffer, cfg: RestyleConfig) -> ImageBuffer:
    """Dispatch to the configured backend. GRAY inputs are promoted to RGB."""
    content, style = to_rgb(content), to_rgb(style)
    out = BACKENDS[cfg.backend](content, style, cfg)
    if cfg.detail_preserve and cfg.backend is not Backend.FREQ:
        dec = reimpose_detail(
            rgb_to_decorrelated(content).data,
            rgb_to_decorrelated(out).data,
            cfg.lowpass_radius,
        )
        out = decorrelated_to_rgb(ImageBuffer(dec, ColorSpace.DECORRELATED))
    return out


@dataclass(frozen=True)
class Provenance:
    content_id: str
    style_id: str
    backend: str
    config_digest: str


def restyle_one(content_path, style_path, cfg: RestyleConfig, content_id=None, style_id=None):
    """Restyle one pair of files. Returns ``(image, provenance)``."""
    content = read_image(content_path)
    style = read_image(style_path)
    out = restyle(content, style, cfg)
    prov = Provenance(
        content_id=content_id if content_id is not None else os.fspath(content_path),
        style_id=style_id if style_id is not None else os.fspath(style_path),
        backend=cfg.backend.value,
        config_digest=cfg.digest(),
    )
    return out, prov
