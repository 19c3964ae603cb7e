import os

import numpy as np
import pytest

from restyling.imgcore import ImageBuffer
from restyling.synth import natural_corpus, write_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus64():
    return natural_corpus(40, seed=7, size=(64, 64))


def random_rgb(rng, h=24, w=32):
    return ImageBuffer.rgb(rng.random((h, w, 3)))


@pytest.fixture
def make_dataset(tmp_path):
    """Write small source/style/label trees and a matching TOML config."""

    def make(n_sources=2, n_styles=3, k=2, backend="stats", mode="ph", labels=True, workers=1,
             size=(40, 48), extra="", figures=False):
        src = tmp_path / "src"
        sty = tmp_path / "sty"
        write_corpus(src, n_sources, seed=11, size=size, domain="synthetic")
        write_corpus(sty, n_styles, seed=22, size=size, domain="realistic", prefix="style")
        lines = [
            f'source_dir = "src"',
            f'style_dir = "sty"',
            f'out_dir = "out"',
            f"k = {k}",
            f'mode = "{mode}"',
            f"workers = {workers}",
            f"figures = {str(figures).lower()}",
        ]
        if labels:
            lab = tmp_path / "labels"
            lab.mkdir()
            for name in sorted(os.listdir(src)):
                (lab / name.replace(".png", ".lbl")).write_text(f"label for {name}\n")
            lines.append('label_dir = "labels"')
        lines.append(extra)
        lines.append(f'[restyle]\nbackend = "{backend}"')
        cfg = tmp_path / "config.toml"
        cfg.write_text("\n".join(lines) + "\n")
        return cfg

    return make


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)
