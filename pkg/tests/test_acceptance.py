"""End-to-end acceptance checks.

Each check records one ``PASS``/``FAIL`` line (with its runtime and bound);
the lines are printed in the pytest terminal summary.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy.stats import wasserstein_distance

from restyling.bench import HASH_TARGET, SCAN_TARGET, run_benchmark
from restyling.imgcore import ImageBuffer, decode, decorrelated_to_rgb_unclamped, encode, resize, rgb_to_decorrelated
from restyling.manifest import Role, read_manifest
from restyling.matcher import build_index, knn, match_corpus, score_post_hoc
from restyling.phash import PerceptualHash, compute_hash, dct2, hamming
from restyling.pipeline import load_config, run, verify
from restyling.restyle import Backend, RestyleConfig, frequency_blend_decorrelated, histogram_match, restyle, transfer_decorrelated
from restyling.synth import natural_corpus

pytestmark = pytest.mark.acceptance

RESULTS: list[str] = []


@contextmanager
def criterion(number, title, limit_s):
    """Time the block; record PASS only if it raised nothing and met its time bound."""
    t0 = time.perf_counter()
    status, detail = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - t0
        status = "PASS" if elapsed < limit_s else "FAIL"
        detail = "" if status == "PASS" else " (over time bound)"
    except BaseException as exc:
        elapsed = time.perf_counter() - t0
        detail = f" ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        raise
    finally:
        line = f"[{status}] criterion {number:>2}: {title} ({elapsed:.2f}s < {limit_s:g}s){detail}"
        RESULTS.append(line)
        print(line)
    assert elapsed < limit_s, f"criterion {number} took {elapsed:.1f}s, bound {limit_s}s"


def popcount_table(x: np.ndarray) -> np.ndarray:
    """Bit counts of uint64 values via a byte lookup table."""
    table = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)
    return table[x.view(np.uint8).reshape(*x.shape, 8)].sum(axis=-1)


def definitional_dct(f: np.ndarray) -> np.ndarray:
    """C[u,v] = a(u) a(v) sum_x sum_y f[x,y] cos(pi(2x+1)u/2N) cos(pi(2y+1)v/2N)."""
    n = f.shape[0]
    x = np.arange(n)
    basis = np.cos(np.pi * (2 * x[None, :] + 1) * x[:, None] / (2 * n))  # [u, x]
    a = np.full(n, math.sqrt(2 / n))
    a[0] = math.sqrt(1 / n)
    # full four-index sum, no separable factorization
    kernel = basis[:, None, :, None] * basis[None, :, None, :]  # [u, v, x, y]
    return a[:, None] * a[None, :] * (kernel * f[None, None]).sum(axis=(2, 3))


@pytest.fixture(scope="module")
def corpus128():
    return natural_corpus(100, seed=2024, size=(128, 128))


def test_dct_oracle_equivalence():
    rng = np.random.default_rng(1)
    with criterion(1, "dct2 equals the four-index DCT-II sum within 1e-9 (N = 8, 16, 32)", 10):
        for n in (8, 16, 32):
            for _ in range(100):
                f = rng.random((n, n))
                assert np.abs(dct2(ImageBuffer.gray(f)).coeffs - definitional_dct(f)).max() <= 1e-9


def test_hash_conformance():
    rng = np.random.default_rng(2)
    with criterion(2, "constant image sets only the DC bit; hashing deterministic; hex round-trips", 1):
        for level in (1 / 255, 0.25, 0.5, 1.0):
            h = compute_hash(ImageBuffer.rgb(np.full((40, 30, 3), level)))
            assert sum(h.bits()) == 1 and h.bit(0)
        # black: DC = 0 ties with the zero median, and ties give 0
        assert compute_hash(ImageBuffer.rgb(np.zeros((8, 8, 3)))).value == 0
        for _ in range(20):
            img = ImageBuffer.rgb(rng.random((37, 53, 3)))
            h = compute_hash(img)
            assert compute_hash(img) == h
            assert PerceptualHash.from_hex(h.hex()) == h and len(h.hex()) == 16


def test_hash_robustness_and_discrimination(corpus128):
    with criterion(3, "JPEG and 2x downscale mean distance < 10; unrelated pairs in [28, 36]", 60):
        hashes = [compute_hash(img) for img in corpus128]
        jpeg = [hamming(h, compute_hash(decode(encode(img, "JPEG", quality=75)))) for h, img in zip(hashes, corpus128)]
        down = [hamming(h, compute_hash(resize(img, 64, 64))) for h, img in zip(hashes, corpus128)]
        unrelated = [hamming(a, b) for i, a in enumerate(hashes) for b in hashes[i + 1 :]]
        print(f"jpeg={np.mean(jpeg):.2f} downscale={np.mean(down):.2f} unrelated={np.mean(unrelated):.2f}")
        assert np.mean(jpeg) < 10
        assert np.mean(down) < 10
        assert 28 <= np.mean(unrelated) <= 36


def test_knn_exactness():
    rng = np.random.default_rng(4)
    with criterion(4, "knn equals the full-sort oracle on 1000 instances, ties included", 60):
        for trial in range(1000):
            n = int(np.exp(rng.uniform(0, np.log(10_000))))
            if trial % 2:
                # draw from a tiny pool so equal distances are everywhere
                pool = rng.integers(0, 2**64, size=int(rng.integers(1, 6)), dtype=np.uint64)
                words = rng.choice(pool, size=n)
                query = int(pool[0] ^ np.uint64(1 << int(rng.integers(64))))
            else:
                words = rng.integers(0, 2**64, size=n, dtype=np.uint64)
                query = int(rng.integers(0, 2**64, dtype=np.uint64))
            k = int(rng.integers(1, 11))
            index = build_index((f"e{i}", PerceptualHash(int(w))) for i, w in enumerate(words))
            got = knn(index, PerceptualHash(query), k)
            dists = popcount_table(words ^ np.uint64(query))
            order = np.argsort(dists, kind="stable")[:k]
            assert got.style_ids == [f"e{i}" for i in order]
            assert got.distances == [int(dists[i]) for i in order]


def _mean_distances(sources, index, seed):
    q = dict(sources)
    ph = match_corpus(sources, index, "ph", 5)
    rs = match_corpus(sources, index, "rs", 5, seed=seed)
    ph_d = [d for ms in ph for d in ms.distances]
    rs_d = [d for ms in rs for d in score_post_hoc(ms, q[ms.source_id], index)]
    return np.mean(ph_d), np.mean(rs_d)


def test_ph_dominates_rs():
    with criterion(5, "mean PH distance <= mean RS distance; strict on the 50/200 fixture", 30):
        rng = np.random.default_rng(5)
        for trial in range(30):
            n_src, n_sty = int(rng.integers(1, 40)), int(rng.integers(1, 120))
            pool = rng.integers(0, 2**64, size=int(rng.integers(1, 200)), dtype=np.uint64)
            sources = [(f"s{i}", PerceptualHash(int(v))) for i, v in enumerate(rng.choice(pool, n_src))]
            styles = [(f"t{i}", PerceptualHash(int(v))) for i, v in enumerate(rng.choice(pool, n_sty))]
            ph, rs = _mean_distances(sources, build_index(styles), seed=trial)
            assert ph <= rs
        imgs = natural_corpus(250, seed=55, size=(64, 64))
        src = [(f"src{i:03d}", compute_hash(img)) for i, img in enumerate(imgs[:50])]
        sty = [(f"sty{i:03d}", compute_hash(img)) for i, img in enumerate(imgs[50:])]
        ph, rs = _mean_distances(src, build_index(sty), seed=0)
        print(f"PH={ph:.2f} RS={rs:.2f}")
        assert ph < rs


def _moments(plane):
    vals = plane.ravel().tolist()
    mean = math.fsum(vals) / len(vals)
    return mean, math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / len(vals))


def test_restyle_identity_and_adoption(corpus128):
    with criterion(6, "identity for every backend; STATS/FREQ moments within 1e-3; HIST W1 <= 2/255", 30):
        pairs = list(zip(corpus128[:10], corpus128[10:20]))
        for content, style in pairs:
            stats_id = decorrelated_to_rgb_unclamped(transfer_decorrelated(content, content))
            assert np.abs(stats_id - content.data).max() <= 1e-4
            assert np.abs(histogram_match(content, content).data - content.data).max() <= 1 / 255
            freq_id = restyle(content, content, RestyleConfig(backend=Backend.FREQ)).data
            assert np.abs(freq_id - content.data).max() <= 1e-3

            ref = rgb_to_decorrelated(style).data
            outs = (transfer_decorrelated(content, style).data,
                    frequency_blend_decorrelated(content, style, RestyleConfig(backend=Backend.FREQ)).data)
            for out in outs:
                for ch in range(3):
                    (m_o, s_o), (m_r, s_r) = _moments(out[:, :, ch]), _moments(ref[:, :, ch])
                    assert abs(m_o - m_r) <= 1e-3 and abs(s_o - s_r) <= 1e-3
            hist = histogram_match(content, style).data
            for ch in range(3):
                assert wasserstein_distance(hist[:, :, ch].ravel(), style.data[:, :, ch].ravel()) <= 2 / 255


def test_alignment_reduces_domain_gap(make_dataset):
    with criterion(7, "restyling shrinks the gap to the style pool; FREQ structure mean >= 0.8", 120):
        cfg = load_config(make_dataset(n_sources=20, n_styles=40, k=3, backend="freq", size=(64, 64)))
        report = run(cfg).report
        print(
            f"gap source->style={report['domain_gap_source_style']:.4f} "
            f"restyled->style={report['domain_gap_restyled_style']:.4f} "
            f"structure={report['structure_preservation_mean']:.4f}"
        )
        assert report["domain_gap_restyled_style"] < report["domain_gap_source_style"]
        assert report["structure_preservation_mean"] >= 0.8


def test_enrichment_bookkeeping(make_dataset):
    with criterion(8, "10 sources x 50 styles x K=5 gives |Z| = 60; verify passes; rerun is a no-op", 120):
        cfg = load_config(make_dataset(n_sources=10, n_styles=50, k=5, size=(48, 64)))
        first = run(cfg)
        z = first.manifest
        assert first.exit_code == 0 and len(z) == 60
        assert len(z.with_role(Role.RESTYLED)) == 50
        style_ids = set(read_manifest(cfg.out_dir / "styles.jsonl").by_id())
        by_id = z.by_id()
        for r in z.with_role(Role.RESTYLED):
            prov = r.provenance
            assert by_id[prov["content_id"]].role is Role.SOURCE
            assert prov["style_id"] in style_ids and prov["backend"] and prov["rank"] in range(1, 6)
            assert r.label_path is not None and r.label_path == by_id[prov["content_id"]].label_path
        assert verify(cfg.out_dir / "manifest.jsonl").ok
        manifests = {n: (cfg.out_dir / n).read_bytes() for n in ("manifest.jsonl", "sources.jsonl", "styles.jsonl")}
        second = run(cfg)
        assert second.regenerated == 0 and second.reused == 50
        assert {n: (cfg.out_dir / n).read_bytes() for n in manifests} == manifests


def test_parallel_determinism(make_dataset, tmp_path):
    with criterion(9, "outputs byte-identical for workers 1, 4, 16", 180):
        path = make_dataset(n_sources=12, n_styles=30, k=4, size=(48, 48))
        snapshots = []
        for workers in (1, 4, 16):
            out = tmp_path / f"out_w{workers}"
            run(load_config(path, {"workers": workers, "out_dir": str(out)}))
            snapshots.append({
                p.relative_to(out).as_posix(): p.read_bytes()
                for p in sorted(out.rglob("*"))
                if p.is_file() and p.name != "report.txt"
            })
        assert "matches.tsv" in snapshots[0] and "source_hashes.tsv" in snapshots[0]
        assert snapshots[0] == snapshots[1] == snapshots[2]


def test_throughput_is_reported():
    with criterion(10, "benchmark reports hashing and scan throughput (targets informational)", 120):
        result = run_benchmark(n_images=64, index_size=200_000, queries=256)
        for key in ("hash_rate_decoded", "hash_rate_png", "scan_rate"):
            assert math.isfinite(result[key]) and result[key] > 0
        print(
            f"hashing {result['hash_rate_decoded']:.0f} img/s (target {HASH_TARGET:g}, "
            f"met={result['hash_target_met']}); scan {result['scan_rate']:.3g} cmp/s "
            f"(target {SCAN_TARGET:g}, met={result['scan_target_met']})"
        )
