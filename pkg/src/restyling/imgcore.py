"""Image buffers, codecs, resampling and color-space conversion.

Every other module works on :class:`ImageBuffer`, a float64 raster of shape
``(height, width, channels)`` with intensities normalized to ``[0, 1]``.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptData, UnsupportedFormat, WrongColorspace, ZeroDimension

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"
JPEG_MAGIC = b"\xff\xd8\xff"

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Reinhard et al. RGB->LMS cone matrix, rows rescaled to sum to exactly 1 so
# that achromatic pixels land on the zero-chroma axis.
_RGB2LMS_RAW = np.array(
    [
        [0.3811, 0.5783, 0.0402],
        [0.1967, 0.7244, 0.0782],
        [0.0241, 0.1288, 0.8444],
    ]
)
RGB_TO_LMS = _RGB2LMS_RAW / _RGB2LMS_RAW.sum(axis=1, keepdims=True)
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)

# Orthonormal opponent transform applied to log-LMS.
LOGLMS_TO_OPPONENT = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]) @ np.array(
    [[1.0, 1.0, 1.0], [1.0, 1.0, -2.0], [1.0, -1.0, 0.0]]
)
OPPONENT_TO_LOGLMS = LOGLMS_TO_OPPONENT.T  # orthonormal, inverse is transpose

# Offset inside the log so black pixels stay finite (one 8-bit quantization step).
LOG_EPS = 1.0 / 255.0


class ColorSpace(str, enum.Enum):
    RGB = "RGB"
    GRAY = "GRAY"
    DECORRELATED = "DECORRELATED"


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Decoded raster. ``data`` has shape (height, width, channels)."""

    data: np.ndarray
    colorspace: ColorSpace

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) array, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ZeroDimension(f"empty image of shape {data.shape}")
        expected = 1 if self.colorspace is ColorSpace.GRAY else 3
        if data.shape[2] != expected:
            raise ValueError(f"{self.colorspace.value} buffer needs {expected} channel(s)")
        if not np.all(np.isfinite(data)):
            raise ValueError("image contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @classmethod
    def rgb(cls, data) -> "ImageBuffer":
        return cls(np.asarray(data, dtype=np.float64), ColorSpace.RGB)

    @classmethod
    def gray(cls, data) -> "ImageBuffer":
        return cls(np.asarray(data, dtype=np.float64), ColorSpace.GRAY)

    def plane(self, channel: int = 0) -> np.ndarray:
        return self.data[:, :, channel]


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    stddev: np.ndarray


def channel_stats(img: ImageBuffer) -> ChannelStats:
    flat = img.data.reshape(-1, img.channels)
    return ChannelStats(mean=flat.mean(axis=0), stddev=flat.std(axis=0))


def decode(data: bytes) -> ImageBuffer:
    """Decode PNG or 8-bit JPEG bytes into an RGB or GRAY buffer."""
    if data.startswith(PNG_MAGIC):
        fmt = "PNG"
    elif data.startswith(JPEG_MAGIC):
        fmt = "JPEG"
    else:
        raise UnsupportedFormat("not a PNG or JPEG stream")
    try:
        with Image.open(io.BytesIO(data), formats=[fmt]) as im:
            im.load()
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
                raise UnsupportedFormat(f"unsupported pixel mode {mode!r}")
            if mode in ("1", "L", "LA"):
                arr = np.asarray(im.convert("L"), dtype=np.float64)
                return ImageBuffer.gray(arr / 255.0)
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
            return ImageBuffer.rgb(arr / 255.0)
    except UnsupportedFormat:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError, EOFError) as exc:
        raise CorruptData(f"cannot decode {fmt} stream: {exc}") from exc


def read_image(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        return decode(fh.read())


def to_uint8(img: ImageBuffer) -> np.ndarray:
    if img.colorspace is ColorSpace.DECORRELATED:
        raise WrongColorspace("convert to RGB before quantizing")
    return np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode(img: ImageBuffer, fmt: str = "PNG", quality: int = 95) -> bytes:
    """Quantize to 8 bits and encode as PNG (lossless) or JPEG."""
    arr = to_uint8(img)
    pil = Image.fromarray(arr[:, :, 0] if img.channels == 1 else arr)
    buf = io.BytesIO()
    fmt = fmt.upper()
    if fmt == "PNG":
        pil.save(buf, format="PNG", optimize=False)
    elif fmt in ("JPEG", "JPG"):
        pil.save(buf, format="JPEG", quality=quality, subsampling=0)
    else:
        raise UnsupportedFormat(f"cannot encode {fmt}")
    return buf.getvalue()


def write_image(img: ImageBuffer, path, fmt: str = "PNG", quality: int = 95) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(img, fmt, quality))


def to_grayscale(img: ImageBuffer) -> ImageBuffer:
    if img.colorspace is ColorSpace.GRAY:
        return img
    if img.colorspace is not ColorSpace.RGB:
        raise WrongColorspace("grayscale conversion needs an RGB buffer")
    return ImageBuffer.gray(img.data @ LUMA_WEIGHTS)


def to_rgb(img: ImageBuffer) -> ImageBuffer:
    if img.colorspace is ColorSpace.RGB:
        return img
    if img.colorspace is not ColorSpace.GRAY:
        raise WrongColorspace("only GRAY buffers can be promoted to RGB")
    return ImageBuffer.rgb(np.repeat(img.data, 3, axis=2))


@lru_cache(maxsize=256)
def _triangle_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix for linear (triangle) resampling.

    The kernel widens by the reduction factor when shrinking, so downscaling
    averages instead of point-sampling. Taps falling outside the source are
    dropped and the remaining weights renormalized.
    """
    scale = n_in / n_out
    support = max(scale, 1.0)
    centers = (np.arange(n_out) + 0.5) * scale
    src = np.arange(n_in) + 0.5
    dist = np.abs(src[None, :] - centers[:, None]) / support
    w = np.clip(1.0 - dist, 0.0, None)
    w /= w.sum(axis=1, keepdims=True)
    w.setflags(write=False)
    return w


def resize(img: ImageBuffer, w: int, h: int) -> ImageBuffer:
    """Bilinear resample to ``w`` x ``h`` pixels."""
    if w < 1 or h < 1:
        raise ZeroDimension(f"target size {w}x{h}")
    if (w, h) == (img.width, img.height):
        return img
    wy = _triangle_weights(img.height, h)
    wx = _triangle_weights(img.width, w)
    out = np.einsum("ij,jkc,lk->ilc", wy, img.data, wx, optimize=True)
    return ImageBuffer(out, img.colorspace)


def rgb_to_decorrelated(img: ImageBuffer) -> ImageBuffer:
    """Map RGB to the log-opponent (l, alpha, beta) space."""
    if img.colorspace is not ColorSpace.RGB:
        raise WrongColorspace(f"expected RGB, got {img.colorspace.value}")
    lms = img.data @ RGB_TO_LMS.T
    log_lms = np.log10(lms + LOG_EPS)
    return ImageBuffer(log_lms @ LOGLMS_TO_OPPONENT.T, ColorSpace.DECORRELATED)


def decorrelated_to_rgb_unclamped(img: ImageBuffer) -> np.ndarray:
    if img.colorspace is not ColorSpace.DECORRELATED:
        raise WrongColorspace(f"expected DECORRELATED, got {img.colorspace.value}")
    # bound the exponent so far out-of-gamut values saturate instead of overflowing
    log_lms = np.clip(img.data @ OPPONENT_TO_LOGLMS.T, -12.0, 6.0)
    lms = np.power(10.0, log_lms) - LOG_EPS
    return lms @ LMS_TO_RGB.T


def decorrelated_to_rgb(img: ImageBuffer) -> ImageBuffer:
    return ImageBuffer.rgb(np.clip(decorrelated_to_rgb_unclamped(img), 0.0, 1.0))
