"""Perceptual-hash style matching and photometric restyling for dataset enrichment."""

from .imgcore import ColorSpace, ImageBuffer, decode, encode, read_image, write_image
from .matcher import HashIndex, MatchMode, MatchSet, build_index, knn, match_corpus, random_select
from .phash import PerceptualHash, compute_hash, dct2, hamming
from .restyle import Backend, RestyleConfig, restyle, restyle_one

__all__ = [
    "Backend",
    "ColorSpace",
    "HashIndex",
    "ImageBuffer",
    "MatchMode",
    "MatchSet",
    "PerceptualHash",
    "RestyleConfig",
    "build_index",
    "compute_hash",
    "dct2",
    "decode",
    "encode",
    "hamming",
    "knn",
    "match_corpus",
    "random_select",
    "read_image",
    "restyle",
    "restyle_one",
    "write_image",
]

__version__ = "0.1.0"
