"""64-bit DCT perceptual hash and Hamming distance.

Hash layout: bit ``i`` covers DCT coefficient ``(u, v)`` of the 8x8 low-frequency
block with ``i = 8*u + v``. Bit 0 (the DC term) is the most significant bit of
the 64-bit word, so the hex form reads the block row by row.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

from .errors import NotGray, NotSquare
from .imgcore import ColorSpace, ImageBuffer, resize, to_grayscale

HASH_SIZE = 32  # pre-hash resolution
BLOCK = 8
NBITS = BLOCK * BLOCK
_MASK64 = (1 << 64) - 1
# Coefficients below this magnitude are rounding residue (e.g. from resampling a
# constant image) and are treated as exactly zero.
ZERO_TOL = 1e-9


@lru_cache(maxsize=16)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``A`` with ``A[u, x] = a(u) cos(pi (2x+1) u / 2n)``."""
    x = np.arange(n)
    u = x[:, None]
    a = np.cos(np.pi * (2 * x[None, :] + 1) * u / (2 * n))
    a *= np.sqrt(2.0 / n)
    a[0, :] = np.sqrt(1.0 / n)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DctSpectrum:
    coeffs: np.ndarray  # (n, n), index (u, v), (0, 0) = DC

    @property
    def size(self) -> int:
        return self.coeffs.shape[0]

    def low_block(self, k: int = BLOCK) -> np.ndarray:
        return self.coeffs[:k, :k]


def dct2(img: ImageBuffer) -> DctSpectrum:
    """Orthonormal 2-D DCT-II computed as ``A @ g @ A.T``."""
    if img.colorspace is not ColorSpace.GRAY:
        raise NotGray(f"dct2 needs a GRAY buffer, got {img.colorspace.value}")
    if img.height != img.width:
        raise NotSquare(f"dct2 needs a square buffer, got {img.width}x{img.height}")
    if img.height < BLOCK:
        raise ValueError(f"dct2 needs at least {BLOCK}x{BLOCK} pixels")
    a = dct_matrix(img.height)
    return DctSpectrum(a @ img.plane() @ a.T)


def idct2(spectrum: DctSpectrum) -> ImageBuffer:
    a = dct_matrix(spectrum.size)
    return ImageBuffer.gray(a.T @ spectrum.coeffs @ a)


@dataclass(frozen=True, order=True)
class PerceptualHash:
    value: int

    def __post_init__(self):
        if not 0 <= self.value <= _MASK64:
            raise ValueError(f"hash value out of 64-bit range: {self.value}")

    @classmethod
    def from_bits(cls, bits: Iterable[bool]) -> "PerceptualHash":
        bits = list(bits)
        if len(bits) != NBITS:
            raise ValueError(f"need {NBITS} bits, got {len(bits)}")
        value = 0
        for b in bits:
            value = (value << 1) | int(bool(b))
        return cls(value)

    @classmethod
    def from_hex(cls, text: str) -> "PerceptualHash":
        text = text.strip()
        if len(text) != 16:
            raise ValueError(f"expected 16 hex characters, got {text!r}")
        return cls(int(text, 16))

    def hex(self) -> str:
        return f"{self.value:016x}"

    def bit(self, i: int) -> bool:
        """Bit for block coefficient ``i = 8u + v``."""
        return bool((self.value >> (NBITS - 1 - i)) & 1)

    def bits(self) -> list[bool]:
        return [self.bit(i) for i in range(NBITS)]

    def __str__(self) -> str:
        return self.hex()


def hash_from_block(block: np.ndarray) -> PerceptualHash:
    """Threshold an 8x8 coefficient block at the median of its 63 AC terms."""
    flat = np.asarray(block, dtype=np.float64).reshape(-1)
    flat = np.where(np.abs(flat) < ZERO_TOL, 0.0, flat)
    median = np.median(flat[1:])
    return PerceptualHash.from_bits(flat > median)


def compute_hash(img: ImageBuffer) -> PerceptualHash:
    """grayscale -> 32x32 -> DCT -> 8x8 block -> median-threshold bits."""
    small = resize(to_grayscale(img), HASH_SIZE, HASH_SIZE)
    return hash_from_block(dct2(small).low_block())


def hamming(a: PerceptualHash, b: PerceptualHash) -> int:
    return (a.value ^ b.value).bit_count()


def as_words(hashes: Iterable[PerceptualHash]) -> np.ndarray:
    return np.fromiter((h.value for h in hashes), dtype=np.uint64)


def hamming_many(words: np.ndarray, query: int | PerceptualHash) -> np.ndarray:
    """Distances from ``query`` to every hash in a uint64 array."""
    q = query.value if isinstance(query, PerceptualHash) else query
    return np.bitwise_count(words ^ np.uint64(q)).astype(np.uint8)


def format_hash_file(pairs: Iterable[tuple[str, PerceptualHash]]) -> str:
    lines = []
    for sample_id, h in pairs:
        if "\t" in sample_id or "\n" in sample_id:
            raise ValueError(f"sample id cannot contain tabs or newlines: {sample_id!r}")
        lines.append(f"{sample_id}\t{h.hex()}\n")
    return "".join(lines)


def parse_hash_file(text: str) -> list[tuple[str, PerceptualHash]]:
    pairs = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        try:
            sample_id, hex_hash = line.split("\t")
            pairs.append((sample_id, PerceptualHash.from_hex(hex_hash)))
        except ValueError as exc:
            raise ValueError(f"malformed hash line {lineno}: {line!r}") from exc
    return pairs


def write_hash_file(path, pairs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_hash_file(pairs))


def read_hash_file(path) -> list[tuple[str, PerceptualHash]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_hash_file(fh.read())
