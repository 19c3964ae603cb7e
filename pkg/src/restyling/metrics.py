"""Domain-alignment and structure-preservation diagnostics."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCorpus, NonPSD, UnknownId
from .imgcore import ColorSpace, ImageBuffer, rgb_to_decorrelated, to_grayscale, to_rgb
from .matcher import HashIndex, MatchMode, MatchSet, score_post_hoc, style_reuse
from .phash import NBITS, PerceptualHash

PSD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DomainStats:
    mean: np.ndarray  # (3,)
    cov: np.ndarray  # (3, 3)
    count: int = 0

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        if cov.shape != (3, 3) or np.asarray(self.mean).shape != (3,):
            raise ValueError("DomainStats needs a 3-vector mean and a 3x3 covariance")
        if not np.allclose(cov, cov.T, rtol=0, atol=PSD_TOL):
            raise NonPSD("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -PSD_TOL:
            raise NonPSD("covariance has a negative eigenvalue")


@dataclass(frozen=True)
class MomentSums:
    """Raw pixel sums of one image; merging is exact and order-free."""

    n: int
    s1: tuple  # 3 floats
    s2: tuple  # 9 floats, row-major outer-product sums


def _pixels(img: ImageBuffer) -> np.ndarray:
    if img.colorspace is not ColorSpace.DECORRELATED:
        img = rgb_to_decorrelated(to_rgb(img))
    return img.data.reshape(-1, 3)


def moment_sums(img: ImageBuffer) -> MomentSums:
    x = _pixels(img)
    return MomentSums(len(x), tuple(x.sum(axis=0)), tuple((x.T @ x).ravel()))


def merge_sums(parts: Sequence[MomentSums]) -> MomentSums:
    """Combine partial sums with correctly rounded (fsum) addition."""
    parts = list(parts)
    if not parts:
        raise EmptyCorpus("no images to accumulate")
    n = sum(p.n for p in parts)
    s1 = tuple(math.fsum(p.s1[i] for p in parts) for i in range(3))
    s2 = tuple(math.fsum(p.s2[i] for p in parts) for i in range(9))
    return MomentSums(n, s1, s2)


def stats_from_sums(sums: MomentSums) -> DomainStats:
    mean = np.array(sums.s1) / sums.n
    cov = np.array(sums.s2).reshape(3, 3) / sums.n - np.outer(mean, mean)
    cov = (cov + cov.T) / 2
    # absorb rounding below zero on constant channels
    w, v = np.linalg.eigh(cov)
    if w.min() < 0:
        cov = (v * np.clip(w, 0, None)) @ v.T
    return DomainStats(mean, cov, sums.n)


def corpus_stats(images: Iterable[ImageBuffer], per_image: bool = False) -> DomainStats:
    """Pooled decorrelated-space mean and covariance over every pixel of every image.

    With ``per_image=True`` the per-image means and covariances are averaged
    instead, giving each image equal weight regardless of size.
    """
    parts = [moment_sums(img) for img in images]
    if not parts:
        raise EmptyCorpus("corpus_stats needs at least one image")
    if not per_image:
        return stats_from_sums(merge_sums(parts))
    singles = [stats_from_sums(p) for p in parts]
    mean = np.array([math.fsum(s.mean[i] for s in singles) for i in range(3)]) / len(singles)
    cov = np.array([math.fsum(s.cov.flat[i] for s in singles) for i in range(9)]).reshape(3, 3)
    return DomainStats(mean, cov / len(singles), sum(p.n for p in parts))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(m)
    if w.min() < -PSD_TOL * max(1.0, abs(w).max()):
        raise NonPSD(f"matrix has eigenvalue {w.min():.3g}")
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def domain_gap(a: DomainStats, b: DomainStats) -> float:
    """Frechet distance between Gaussians fitted to two corpora's channel statistics.

    ``trace((Ca Cb)^(1/2))`` is evaluated as ``trace((sa Cb sa)^(1/2))`` with
    ``sa = Ca^(1/2)``, which keeps every square root symmetric.
    """
    sa = _psd_sqrt(a.cov)
    inner = sa @ b.cov @ sa
    w = np.linalg.eigvalsh((inner + inner.T) / 2)
    cross = np.sqrt(np.clip(w, 0, None)).sum()
    diff = a.mean - b.mean
    gap = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * cross)
    return max(gap, 0.0)


def gradient_magnitude(plane: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(plane)
    return np.hypot(gx, gy)


def structure_preservation(content: ImageBuffer, restyled: ImageBuffer) -> float:
    """Pearson correlation of the two images' luminance gradient magnitudes."""
    if content.shape[:2] != restyled.shape[:2]:
        raise DimensionMismatch(f"{content.shape[:2]} vs {restyled.shape[:2]}")
    ga = gradient_magnitude(to_grayscale(content).plane()).ravel()
    gb = gradient_magnitude(to_grayscale(restyled).plane()).ravel()
    da, db = ga - ga.mean(), gb - gb.mean()
    na, nb = math.sqrt(da @ da), math.sqrt(db @ db)
    flat_a, flat_b = na <= 1e-12, nb <= 1e-12
    if flat_a and flat_b:
        return 1.0
    if flat_a or flat_b:
        return 0.0
    return float(np.clip((da @ db) / (na * nb), -1.0, 1.0))


@dataclass
class DistanceSummary:
    count: int
    mean: float
    median: float
    p10: float
    p90: float
    histogram: list = field(default_factory=list)  # 65 bins, distance 0..64

    @classmethod
    def of(cls, distances: Sequence[int]) -> "DistanceSummary":
        d = np.asarray(distances, dtype=np.float64)
        hist = np.bincount(d.astype(np.int64), minlength=NBITS + 1).tolist() if len(d) else [0] * (NBITS + 1)
        if not len(d):
            return cls(0, math.nan, math.nan, math.nan, math.nan, hist)
        p10, med, p90 = np.percentile(d, [10, 50, 90])
        return cls(len(d), float(d.mean()), float(med), float(p10), float(p90), hist)


@dataclass
class MatchQualityReport:
    modes: dict  # MatchMode value -> DistanceSummary
    reuse: dict  # MatchMode value -> {style_id: count}
    distances: dict  # MatchMode value -> list of distances (flat, source order)

    def summary(self, mode) -> DistanceSummary:
        return self.modes[MatchMode.parse(mode).value]

    def as_rows(self) -> list[tuple[str, str, str, float]]:
        rows = []
        for mode, s in self.modes.items():
            rows.append(("match_distance_mean", mode, "", s.mean))
            rows.append(("match_distance_median", mode, "", s.median))
            rows.append(("match_distance_p10", mode, "", s.p10))
            rows.append(("match_distance_p90", mode, "", s.p90))
            counts = self.reuse[mode].values()
            rows.append(("style_reuse_max", mode, "", float(max(counts, default=0))))
            rows.append(("styles_used", mode, "", float(len(self.reuse[mode]))))
        return rows


def match_quality_report(
    matchsets: Iterable[MatchSet],
    source_hashes: Mapping[str, PerceptualHash] | Sequence[tuple[str, PerceptualHash]],
    index: HashIndex,
) -> MatchQualityReport:
    """Distance statistics per selection mode; RS picks are scored after the fact."""
    if not isinstance(source_hashes, Mapping):
        source_hashes = dict(source_hashes)
    grouped: dict[str, list[MatchSet]] = {}
    for ms in matchsets:
        grouped.setdefault(ms.mode.value, []).append(ms)
    modes, reuse, dists = {}, {}, {}
    for mode, group in grouped.items():
        flat = []
        for ms in group:
            if ms.source_id not in source_hashes:
                raise UnknownId(f"no hash for source {ms.source_id!r}")
            flat.extend(score_post_hoc(ms, source_hashes[ms.source_id], index))
        modes[mode] = DistanceSummary.of(flat)
        reuse[mode] = dict(sorted(style_reuse(group).items()))
        dists[mode] = flat
    return MatchQualityReport(modes, reuse, dists)


def format_key_values(values: Mapping[str, object]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key} = {value}\n")
    return "".join(lines)


def format_metric_csv(rows: Iterable[tuple[str, str, str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "subset_a", "subset_b", "value"])
    for metric, a, b, value in rows:
        writer.writerow([metric, a, b, f"{value:.10g}"])
    return buf.getvalue()
