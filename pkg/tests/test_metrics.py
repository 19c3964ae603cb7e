import random

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from restyling.errors import DimensionMismatch, EmptyCorpus, NonPSD, UnknownId
from restyling.imgcore import ImageBuffer, rgb_to_decorrelated
from restyling.matcher import build_index, match_corpus
from restyling.metrics import (
    DomainStats,
    corpus_stats,
    domain_gap,
    format_key_values,
    format_metric_csv,
    match_quality_report,
    merge_sums,
    moment_sums,
    stats_from_sums,
    structure_preservation,
)
from restyling.phash import PerceptualHash
from restyling.restyle import color_stats_transfer
from restyling.synth import natural_corpus

from conftest import random_rgb


def gap_oracle(a, b):
    """Frechet distance with the non-symmetric product square root taken by scipy."""
    cross = scipy.linalg.sqrtm(a.cov @ b.cov)
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.cov + b.cov - 2 * np.real(cross)))


def random_psd(rng, scale=1.0):
    m = rng.normal(size=(3, 3)) * scale
    return m @ m.T


def test_constant_image_stats():
    img = ImageBuffer.rgb(np.full((5, 7, 3), [0.2, 0.4, 0.6]))
    st_ = corpus_stats([img])
    np.testing.assert_allclose(st_.cov, 0, atol=1e-12)
    expected = rgb_to_decorrelated(ImageBuffer.rgb([[[0.2, 0.4, 0.6]]])).data.ravel()
    np.testing.assert_allclose(st_.mean, expected, atol=1e-12)


def test_duplication_and_order_invariance(corpus64):
    imgs = corpus64[:6]
    base = corpus_stats(imgs)
    dup = corpus_stats(imgs + imgs)
    shuffled = corpus_stats(imgs[::-1])
    for other in (dup, shuffled):
        np.testing.assert_array_equal(other.mean, base.mean)
        np.testing.assert_array_equal(other.cov, base.cov)


def test_concatenation_oracle(rng):
    a, b = random_rgb(rng, 20, 30), random_rgb(rng, 11, 7)
    pixels = np.concatenate([rgb_to_decorrelated(a).data.reshape(-1, 3), rgb_to_decorrelated(b).data.reshape(-1, 3)])
    st_ = corpus_stats([a, b])
    np.testing.assert_allclose(st_.mean, pixels.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(st_.cov, np.cov(pixels, rowvar=False, bias=True), atol=1e-9)


def test_merge_order_is_irrelevant(corpus64):
    parts = [moment_sums(img) for img in corpus64]
    ref = stats_from_sums(merge_sums(parts))
    order = list(range(len(parts)))
    for seed in range(5):
        random.Random(seed).shuffle(order)
        # tree-shaped merge, as a parallel reduction would do it
        left = merge_sums([parts[i] for i in order[: len(order) // 3]])
        right = merge_sums([parts[i] for i in order[len(order) // 3 :]])
        merged = stats_from_sums(merge_sums([left, right]))
        np.testing.assert_allclose(merged.mean, ref.mean, atol=1e-9, rtol=0)
        np.testing.assert_allclose(merged.cov, ref.cov, atol=1e-9, rtol=0)


def test_per_image_variant(rng):
    a, b = random_rgb(rng, 4, 4), random_rgb(rng, 40, 40)
    st_ = corpus_stats([a, b], per_image=True)
    expected = (corpus_stats([a]).mean + corpus_stats([b]).mean) / 2
    np.testing.assert_allclose(st_.mean, expected, atol=1e-12)


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        corpus_stats([])


def test_gap_identity_and_closed_form():
    a = DomainStats(np.zeros(3), np.eye(3))
    assert domain_gap(a, a) == pytest.approx(0, abs=1e-9)
    b = DomainStats(np.zeros(3), 4 * np.eye(3))
    assert domain_gap(a, b) == pytest.approx(3.0, abs=1e-12)


def test_gap_matches_sqrtm_oracle(rng):
    for _ in range(20):
        a = DomainStats(rng.normal(size=3), random_psd(rng))
        b = DomainStats(rng.normal(size=3), random_psd(rng, 0.3))
        assert domain_gap(a, b) == pytest.approx(gap_oracle(a, b), abs=1e-6)
        assert domain_gap(a, b) == pytest.approx(domain_gap(b, a), abs=1e-9)
        assert domain_gap(a, b) >= 0


def test_gap_handles_singular_covariance(rng):
    v = rng.normal(size=3)
    a = DomainStats(np.zeros(3), np.outer(v, v))
    b = DomainStats(np.ones(3), np.zeros((3, 3)))
    assert domain_gap(a, b) == pytest.approx(3.0 + v @ v, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_gap_zero_only_for_equal_stats(seed):
    rng = np.random.default_rng(seed)
    a = DomainStats(rng.normal(size=3), random_psd(rng))
    assert domain_gap(a, a) == pytest.approx(0, abs=1e-8)
    b = DomainStats(a.mean + 1e-2, a.cov)
    assert domain_gap(a, b) > 0


def test_non_psd_rejected():
    with pytest.raises(NonPSD):
        DomainStats(np.zeros(3), np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(NonPSD):
        DomainStats(np.zeros(3), np.array([[1, 0.5, 0], [0, 1, 0], [0, 0, 1.0]]))


def test_structure_preservation_examples(rng):
    img = random_rgb(rng, 32, 32)
    assert structure_preservation(img, img) == 1.0
    inverted = ImageBuffer.rgb(1.0 - img.data)
    assert structure_preservation(img, inverted) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        structure_preservation(img, random_rgb(rng, 31, 32))
    flat = ImageBuffer.rgb(np.full((32, 32, 3), 0.4))
    assert structure_preservation(flat, flat) == 1.0
    assert structure_preservation(flat, img) == 0.0


def test_structure_vs_noise_is_uncorrelated(rng):
    scores = []
    for img in natural_corpus(100, seed=9, size=(64, 64)):
        scores.append(structure_preservation(img, random_rgb(rng, 64, 64)))
    assert abs(np.mean(scores)) < 0.2
    assert np.mean(np.abs(scores)) < 0.2


def test_match_report(rng):
    targets = [(f"t{i}", PerceptualHash(int(v))) for i, v in enumerate(rng.integers(0, 2**64, 80, dtype=np.uint64))]
    sources = [(f"s{i}", PerceptualHash(int(v))) for i, v in enumerate(rng.integers(0, 2**64, 30, dtype=np.uint64))]
    idx = build_index(targets)
    ph = match_corpus(sources, idx, "ph", 5)
    rs = match_corpus(sources, idx, "rs", 5, seed=4)
    report = match_quality_report(ph + rs, sources, idx)
    stored = [d for ms in ph for d in ms.distances]
    assert report.summary("ph").mean == pytest.approx(np.mean(stored))
    assert report.summary("ph").mean < report.summary("rs").mean
    assert sum(report.summary("ph").histogram) == len(stored)
    assert sum(report.reuse["PH"].values()) == len(stored)
    rows = report.as_rows()
    csv_text = format_metric_csv(rows)
    assert csv_text.splitlines()[0] == "metric,subset_a,subset_b,value"
    assert len(csv_text.splitlines()) == len(rows) + 1
    assert "match_distance_mean" in format_key_values({"match_distance_mean": 1.5})


def test_match_report_degenerate_pool():
    same = PerceptualHash(0xABC)
    idx = build_index([(f"t{i}", same) for i in range(8)])
    sources = [("a", same), ("b", same)]
    report = match_quality_report(match_corpus(sources, idx, "ph", 3) + match_corpus(sources, idx, "rs", 3), sources, idx)
    for mode in ("PH", "RS"):
        assert set(report.distances[mode]) == {0}


def test_match_report_unknown_id():
    idx = build_index([("t", PerceptualHash(0))])
    ms = match_corpus([("a", PerceptualHash(0))], idx, "ph", 1)
    with pytest.raises(UnknownId):
        match_quality_report(ms, [("other", PerceptualHash(0))], idx)


def test_restyling_reduces_domain_gap():
    sources = natural_corpus(12, seed=1, size=(48, 48), domain="synthetic")
    styles = natural_corpus(12, seed=2, size=(48, 48), domain="realistic")
    restyled = [color_stats_transfer(c, s) for c, s in zip(sources, styles)]
    s_style = corpus_stats(styles)
    before = domain_gap(corpus_stats(sources), s_style)
    after = domain_gap(corpus_stats(restyled), s_style)
    assert before > 1e-6
    assert after < before
