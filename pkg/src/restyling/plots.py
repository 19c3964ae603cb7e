"""Matplotlib renderings of run diagnostics, written next to the CSV/text reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

MODE_COLORS = {"PH": "#1f77b4", "RS": "#d62728"}
SUBSET_COLORS = {"source": "#7f7f7f", "restyled": "#2ca02c", "style": "#9467bd"}
_PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_match_distances(histograms: dict[str, list[int]], path) -> Path:
    """Overlayed Hamming-distance histograms, one per selection mode."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6), constrained_layout=True)
    bins = np.arange(65)
    modes = sorted(histograms)
    width = 0.9 / max(len(modes), 1)
    for j, mode in enumerate(modes):
        hist = histograms[mode]
        hist = np.asarray(hist, dtype=float)
        total = hist.sum()
        if total == 0:
            continue
        mean = (bins * hist).sum() / total
        offset = (j - (len(modes) - 1) / 2) * width
        ax.bar(bins + offset, hist / total, width, color=MODE_COLORS.get(mode), label=f"{mode} (mean {mean:.1f})")
        ax.axvline(mean, color=MODE_COLORS.get(mode), ls=":", lw=1)
    ax.set_xlim(0, 64)
    ax.set_xlabel("Hamming distance to matched style")
    ax.set_ylabel("fraction of matches")
    ax.legend(frameon=False)
    return _save(fig, Path(path))


def plot_domain_stats(rows, path) -> Path:
    """Per-subset channel means and spreads, with the domain gaps in the title."""
    stats: dict[str, dict[str, float]] = {}
    gaps = {}
    for metric, a, b, value in rows:
        if metric.startswith(("mean_", "std_")):
            stats.setdefault(a, {})[metric] = value
        elif metric == "domain_gap":
            gaps[a] = value
    channels = ("l", "alpha", "beta")
    subsets = [s for s in ("source", "restyled", "style") if s in stats]
    fig, axes = plt.subplots(1, 3, figsize=(8.0, 3.4), constrained_layout=True)
    width = 0.8 / max(len(subsets), 1)
    for ax, ch in zip(axes, channels):
        for i, name in enumerate(subsets):
            ax.bar(
                i * width,
                stats[name].get(f"mean_{ch}", np.nan),
                width,
                yerr=stats[name].get(f"std_{ch}", np.nan),
                color=SUBSET_COLORS.get(name),
                label=name,
                capsize=3,
            )
        ax.set_title(ch)
        ax.set_xticks([])
    handles, labels = axes[0].get_legend_handles_labels()
    fig.legend(handles, labels, loc="outside lower center", ncols=len(subsets), frameon=False)
    if gaps:
        fig.suptitle("  ".join(f"gap({k}, style) = {v:.4g}" for k, v in sorted(gaps.items())), fontsize="medium")
    return _save(fig, Path(path))


def render_run_figures(directory, report: dict, rows) -> list[Path]:
    directory = Path(directory)
    written = []
    hists = {
        key.rsplit("_", 1)[1]: [int(x) for x in str(value).split()]
        for key, value in report.items()
        if key.startswith("match_distance_hist_")
    }
    if hists:
        written.append(plot_match_distances(hists, directory / "match_distances.png"))
    if any(r[0] == "domain_gap" or r[0].startswith("mean_") for r in rows):
        written.append(plot_domain_stats(rows, directory / "domain_stats.png"))
    return written
