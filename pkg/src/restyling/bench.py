"""Throughput benchmark for hashing and Hamming scans."""

from __future__ import annotations

import time

import numpy as np

from .imgcore import decode, encode
from .matcher import build_index, match_corpus
from .phash import PerceptualHash, compute_hash
from .synth import natural_corpus

# targets for a commodity 8-core machine; informational, not pass/fail
HASH_TARGET = 200.0  # images per second, 512x512 inputs
SCAN_TARGET = 50e6  # hash comparisons per second


def bench_hashing(n_images: int = 64, size: int = 512, seed: int = 0) -> dict:
    imgs = natural_corpus(min(n_images, 16), seed=seed, size=(size, size))
    imgs = [imgs[i % len(imgs)] for i in range(n_images)]
    blobs = [encode(img) for img in imgs[: min(n_images, 16)]]
    t0 = time.perf_counter()
    for img in imgs:
        compute_hash(img)
    t_buf = time.perf_counter() - t0
    t0 = time.perf_counter()
    for i in range(n_images):
        compute_hash(decode(blobs[i % len(blobs)]))
    t_png = time.perf_counter() - t0
    return {
        "hash_images": n_images,
        "hash_size": size,
        "hash_rate_decoded": n_images / t_buf,
        "hash_rate_png": n_images / t_png,
    }


def bench_scan(index_size: int = 200_000, queries: int = 256, k: int = 5, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    words = rng.integers(0, 2**63, size=index_size + queries, dtype=np.uint64, endpoint=True)
    index = build_index((f"s{i}", PerceptualHash(int(w))) for i, w in enumerate(words[:index_size]))
    q = [(f"q{i}", PerceptualHash(int(w))) for i, w in enumerate(words[index_size:])]
    t0 = time.perf_counter()
    match_corpus(q, index, "PH", k)
    elapsed = time.perf_counter() - t0
    return {
        "scan_index_size": index_size,
        "scan_queries": queries,
        "scan_rate": index_size * queries / elapsed,
    }


def run_benchmark(n_images: int = 64, index_size: int = 200_000, queries: int = 256) -> dict:
    result = {**bench_hashing(n_images), **bench_scan(index_size, queries)}
    result["hash_target"] = HASH_TARGET
    result["scan_target"] = SCAN_TARGET
    result["hash_target_met"] = result["hash_rate_decoded"] >= HASH_TARGET
    result["scan_target_met"] = result["scan_rate"] >= SCAN_TARGET
    return result
