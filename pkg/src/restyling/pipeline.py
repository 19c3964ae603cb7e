"""ingest -> hash -> match -> restyle -> merge into the enriched dataset.

Outputs written to ``out_dir``::

    sources.jsonl, styles.jsonl     ingested corpora
    source_hashes.tsv, style_hashes.tsv
    matches.tsv
    restyled/                       one image per (source, matched style)
    manifest.jsonl                  the enriched dataset: sources + restyles
    report.txt, metrics.csv         diagnostics
    figures/                        matplotlib renderings of the diagnostics

The enriched dataset holds ``(K + 1) * |sources|`` samples minus recorded
failures. Every output is a deterministic function of the inputs and config,
so reruns skip restyles whose digest and file hash already match.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath
from typing import Optional

import numpy as np

from . import metrics
from .errors import ConfigError, MissingDir, RestylingError
from .imgcore import JPEG_MAGIC, PNG_MAGIC, decode, encode, read_image
from .manifest import DatasetManifest, Role, Sample, Skip, read_manifest, write_manifest
from .matcher import DEFAULT_K, MatchMode, build_index, match_corpus, write_match_file
from .phash import PerceptualHash, compute_hash, write_hash_file
from .restyle import Backend, Provenance, RestyleConfig, restyle

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURES = 2

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
RESTYLED_DIR = "restyled"


@dataclass(frozen=True)
class PipelineConfig:
    source_dir: Path
    style_dir: Path
    out_dir: Path
    label_dir: Optional[Path] = None
    mode: MatchMode = MatchMode.PH
    k: int = DEFAULT_K
    seed: int = 0
    restyle: RestyleConfig = field(default_factory=RestyleConfig)
    workers: int = 1
    output_format: str = "PNG"
    jpeg_quality: int = 95
    metrics: bool = True
    figures: bool = True

    def __post_init__(self):
        for name in ("source_dir", "style_dir", "out_dir", "label_dir"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, Path(value).resolve())
        try:
            object.__setattr__(self, "mode", MatchMode.parse(self.mode))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        fmt = str(self.output_format).upper()
        fmt = "JPEG" if fmt == "JPG" else fmt
        if fmt not in ("PNG", "JPEG"):
            raise ConfigError(f"output_format must be png or jpeg, got {self.output_format!r}")
        object.__setattr__(self, "output_format", fmt)
        for name in ("k", "workers", "seed", "jpeg_quality"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not 1 <= self.jpeg_quality <= 100:
            raise ConfigError("jpeg_quality must be in 1..100")

    @property
    def suffix(self) -> str:
        return ".png" if self.output_format == "PNG" else ".jpg"

    def digest(self) -> str:
        """Digest of every setting that changes restyled pixels."""
        blob = json.dumps(
            {
                "restyle": self.restyle.to_dict(),
                "output_format": self.output_format,
                "jpeg_quality": self.jpeg_quality if self.output_format == "JPEG" else None,
            },
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_CONFIG_KEYS = {
    "source_dir", "style_dir", "out_dir", "label_dir", "mode", "k", "seed",
    "workers", "output_format", "jpeg_quality", "metrics", "figures", "restyle",
}


def config_from_mapping(data: dict, base_dir=".") -> PipelineConfig:
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    missing = [k for k in ("source_dir", "style_dir", "out_dir") if not data.get(k)]
    if missing:
        raise ConfigError(f"missing required config key(s): {', '.join(missing)}")
    kwargs = dict(data)
    base_dir = Path(base_dir)
    for key in ("source_dir", "style_dir", "out_dir", "label_dir"):
        if kwargs.get(key) is not None:
            kwargs[key] = base_dir / Path(kwargs[key]).expanduser()
    restyle_cfg = kwargs.get("restyle", {})
    if isinstance(restyle_cfg, str):
        restyle_cfg = {"backend": restyle_cfg}
    if not isinstance(restyle_cfg, dict):
        raise ConfigError("restyle must be a table")
    kwargs["restyle"] = RestyleConfig.from_mapping(restyle_cfg)
    for key in ("metrics", "figures"):
        if key in kwargs and not isinstance(kwargs[key], bool):
            raise ConfigError(f"{key} must be true or false")
    return PipelineConfig(**kwargs)


def load_config(path, overrides: Optional[dict] = None) -> PipelineConfig:
    """Read a TOML config; ``overrides`` (already-parsed values) win over the file.

    Relative paths in the file resolve against the file's directory; relative
    override paths resolve against the working directory.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    base = path.parent.resolve()
    for key in ("source_dir", "style_dir", "out_dir", "label_dir"):
        if data.get(key) is not None:
            data[key] = str(base / Path(data[key]).expanduser())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key.startswith("restyle."):
            data.setdefault("restyle", {})[key.split(".", 1)[1]] = value
        elif key in ("source_dir", "style_dir", "out_dir", "label_dir"):
            data[key] = str(Path(value).resolve())
        else:
            data[key] = value
    return config_from_mapping(data, base)


def _is_within(path: Path, root: Path) -> bool:
    try:
        path.relative_to(root)
        return True
    except ValueError:
        return False


def validate_config(cfg: PipelineConfig) -> None:
    for name in ("source_dir", "style_dir"):
        d = getattr(cfg, name)
        if not d.is_dir():
            raise ConfigError(f"{name} does not exist: {d}")
    if cfg.label_dir is not None and not cfg.label_dir.is_dir():
        raise ConfigError(f"label_dir does not exist: {cfg.label_dir}")
    inputs = [cfg.source_dir, cfg.style_dir] + ([cfg.label_dir] if cfg.label_dir else [])
    for d in inputs:
        if _is_within(cfg.out_dir, d) or _is_within(d, cfg.out_dir):
            raise ConfigError(f"out_dir {cfg.out_dir} overlaps input directory {d}")


# -- ingest -----------------------------------------------------------------


def _sniff(path: Path) -> Optional[str]:
    """None if ``path`` looks like a readable PNG/JPEG, else the skip reason."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        return f"unreadable: {exc.strerror or exc}"
    if head.startswith(PNG_MAGIC) or head.startswith(JPEG_MAGIC):
        return None
    if path.suffix.lower() in IMAGE_SUFFIXES:
        return "corrupt: bad image signature"
    return "unsupported format"


def ingest(directory, role) -> DatasetManifest:
    """Discover image files under ``directory`` (recursive, lexicographic order)."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingDir(f"no such directory: {directory}")
    role = Role(role)
    rels = sorted(
        PurePosixPath(p.relative_to(directory).as_posix())
        for p in directory.rglob("*")
        if p.is_file() and not any(part.startswith(".") for part in p.relative_to(directory).parts)
    )
    samples, skipped = [], []
    for rel in rels:
        reason = _sniff(directory / rel)
        if reason is None:
            samples.append(Sample(id=str(rel), path=str(rel), role=role))
        else:
            skipped.append(Skip(id=str(rel), path=str(rel), reason=reason))
    return DatasetManifest(samples, skipped, {"role": role.value}, directory.resolve())


def attach_labels(manifest: DatasetManifest, label_dir) -> DatasetManifest:
    """Give each sample the label file sharing its relative path stem, if any."""
    label_dir = Path(label_dir)
    by_stem: dict[str, Path] = {}
    for p in sorted(label_dir.rglob("*")):
        if p.is_file():
            stem = PurePosixPath(p.relative_to(label_dir).as_posix()).with_suffix("")
            by_stem.setdefault(str(stem), p)
    samples = []
    for s in manifest.samples:
        label = by_stem.get(str(PurePosixPath(s.id).with_suffix("")))
        rel = None if label is None else os.path.relpath(label, manifest.base_dir)
        samples.append(replace(s, label_path=None if rel is None else PurePosixPath(Path(rel).as_posix()).as_posix()))
    return DatasetManifest(samples, list(manifest.skipped), dict(manifest.meta), manifest.base_dir)


# -- workers ----------------------------------------------------------------


def _hash_task(path: str):
    try:
        return compute_hash(read_image(path)).hex(), None
    except (RestylingError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _restyle_task(args):
    content_path, style_path, cfg, out_path, fmt, quality = args
    try:
        img = restyle(read_image(content_path), read_image(style_path), cfg)
        data = encode(img, fmt, quality)
        tmp = out_path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, out_path)
        return hashlib.sha256(data).hexdigest(), None
    except (RestylingError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _moment_task(path: str):
    try:
        return metrics.moment_sums(read_image(path)), None
    except (RestylingError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _structure_task(args):
    content_path, restyled_path = args
    try:
        return metrics.structure_preservation(read_image(content_path), read_image(restyled_path)), None
    except (RestylingError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def parallel_map(fn, items, workers: int):
    """Ordered map; a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def file_sha256(path) -> Optional[str]:
    try:
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()
    except OSError:
        return None


# -- run --------------------------------------------------------------------


@dataclass
class Failure:
    phase: str
    id: str
    reason: str


@dataclass
class RunResult:
    manifest: DatasetManifest
    failures: list[Failure]
    report: dict
    regenerated: int
    reused: int
    out_dir: Path

    @property
    def exit_code(self) -> int:
        return EXIT_FAILURES if self.failures else EXIT_OK


def _hash_corpus(manifest: DatasetManifest, workers: int, phase: str, failures: list):
    paths = [str(manifest.resolve(s.path)) for s in manifest.samples]
    pairs = []
    for s, (hex_hash, err) in zip(manifest.samples, parallel_map(_hash_task, paths, workers)):
        if err is None:
            pairs.append((s.id, PerceptualHash.from_hex(hex_hash)))
        else:
            failures.append(Failure(phase, s.id, err))
    return pairs


def _task_digest(cfg_digest: str, content_id: str, style_id: str, rank: int) -> str:
    blob = "\x00".join([cfg_digest, content_id, style_id, str(rank)])
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:32]


def restyled_id(source_id: str, rank: int, suffix: str) -> str:
    stem = PurePosixPath(source_id).with_suffix("")
    return f"{RESTYLED_DIR}/{stem}__r{rank}{suffix}"


def run(cfg: PipelineConfig) -> RunResult:
    """Build the enriched dataset described by ``cfg``. Config errors raise before any work."""
    validate_config(cfg)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    failures: list[Failure] = []

    sources = ingest(cfg.source_dir, Role.SOURCE)
    styles = ingest(cfg.style_dir, Role.STYLE)
    if cfg.label_dir is not None:
        sources = attach_labels(sources, cfg.label_dir)
    for m, phase in ((sources, "ingest-source"), (styles, "ingest-style")):
        for skip in m.skipped:
            if skip.reason.startswith(("corrupt", "unreadable")):
                failures.append(Failure(phase, skip.id, skip.reason))
    sources = write_manifest(sources, out / "sources.jsonl")
    styles = write_manifest(styles, out / "styles.jsonl")
    log.info("ingested %d sources, %d styles", len(sources), len(styles))

    need_hashes = cfg.mode is MatchMode.PH or cfg.metrics
    source_hashes: list = []
    style_hashes: list = []
    if need_hashes:
        source_hashes = _hash_corpus(sources, cfg.workers, "hash-source", failures)
        style_hashes = _hash_corpus(styles, cfg.workers, "hash-style", failures)
        write_hash_file(out / "source_hashes.tsv", source_hashes)
        write_hash_file(out / "style_hashes.tsv", style_hashes)
        log.info("hashed %d sources, %d styles", len(source_hashes), len(style_hashes))
        index = build_index(style_hashes)
        queries = source_hashes
    else:
        # RS without diagnostics never looks at hash values
        index = build_index((s.id, PerceptualHash(0)) for s in styles.samples)
        queries = [(s.id, PerceptualHash(0)) for s in sources.samples]

    matchsets = []
    if len(index) == 0:
        log.warning("style pool is empty; nothing to restyle")
    else:
        if len(index) < cfg.k:
            log.warning("style pool has %d samples, fewer than k=%d; using all of them", len(index), cfg.k)
        matchsets = match_corpus(queries, index, cfg.mode, cfg.k, cfg.seed, cfg.workers)
    write_match_file(out / "matches.tsv", matchsets)

    # restyle phase
    (out / RESTYLED_DIR).mkdir(exist_ok=True)
    prev = {}
    if (out / "manifest.jsonl").exists():
        try:
            prev = read_manifest(out / "manifest.jsonl").by_id()
        except (ValueError, KeyError, TypeError, RestylingError):
            log.warning("ignoring unreadable previous manifest")
    cfg_digest = cfg.digest()
    src_by_id = sources.by_id()
    sty_by_id = styles.by_id()
    planned = []  # (source_id, rank, style_id, out_id, digest)
    todo = []
    for ms in matchsets:
        for rank, style_id in enumerate(ms.style_ids, 1):
            out_id = restyled_id(ms.source_id, rank, cfg.suffix)
            digest = _task_digest(cfg_digest, ms.source_id, style_id, rank)
            planned.append((ms.source_id, rank, style_id, out_id, digest))
            old = prev.get(out_id)
            target = out / out_id
            if old is not None and old.digest == digest and old.sha256 and file_sha256(target) == old.sha256:
                continue
            target.parent.mkdir(parents=True, exist_ok=True)
            todo.append(
                (
                    out_id,
                    (
                        str(sources.resolve(src_by_id[ms.source_id].path)),
                        str(styles.resolve(sty_by_id[style_id].path)),
                        cfg.restyle,
                        str(target),
                        cfg.output_format,
                        cfg.jpeg_quality,
                    ),
                )
            )
    results = parallel_map(_restyle_task, [args for _, args in todo], cfg.workers)
    fresh = {}
    for (out_id, _), (sha, err) in zip(todo, results):
        if err is None:
            fresh[out_id] = sha
        else:
            failures.append(Failure("restyle", out_id, err))
    log.info("restyled %d images, reused %d", len(fresh), len(planned) - len(todo))

    # merge: Z = sources + restyles, grouped per source in rank order
    hashed_ok = {sid for sid, _ in source_hashes} if need_hashes else set(src_by_id)
    failed_ids = {f.id for f in failures}
    restyles_by_source: dict[str, list[Sample]] = {}
    for source_id, rank, style_id, out_id, digest in planned:
        if out_id in failed_ids:
            continue
        sha = fresh.get(out_id) or prev[out_id].sha256
        restyles_by_source.setdefault(source_id, []).append(
            Sample(
                id=out_id,
                path=str((out / out_id)),
                role=Role.RESTYLED,
                label_path=src_by_id[source_id].label_path,
                provenance={
                    "content_id": source_id,
                    "style_id": style_id,
                    "backend": cfg.restyle.backend.value,
                    "rank": rank,
                    "config_digest": cfg_digest,
                },
                digest=digest,
                sha256=sha,
            )
        )
    z_samples = []
    for s in sources.samples:
        if s.id not in hashed_ok:
            continue
        label = None if s.label_path is None else str(sources.resolve(s.label_path))
        z_samples.append(replace(s, path=str(sources.resolve(s.path)), label_path=label))
        for r in restyles_by_source.get(s.id, []):
            label = None if r.label_path is None else str(sources.resolve(r.label_path))
            z_samples.append(replace(r, label_path=label))
    meta = {
        "k": cfg.k,
        "mode": cfg.mode.value,
        "backend": cfg.restyle.backend.value,
        "config_digest": cfg_digest,
        "seed": cfg.seed,
        "style_manifest": "styles.jsonl",
        "source_manifest": "sources.jsonl",
    }
    z = write_manifest(DatasetManifest(z_samples, [], meta, Path("/")), out / "manifest.jsonl")

    report = {
        "sources": len(sources),
        "styles": len(styles),
        "k": cfg.k,
        "mode": cfg.mode.value,
        "backend": cfg.restyle.backend.value,
        "restyled": len(z.with_role(Role.RESTYLED)),
        "enriched_size": len(z),
        "expected_size": (cfg.k + 1) * len(sources) if len(index) >= cfg.k else (len(index) + 1) * len(sources),
        "count_formula": "|Z| = |Xs| + min(k, |styles|) * |Xs| - failures",
        "failures": len(failures),
        "regenerated": len(fresh),
        "reused": len(planned) - len(todo),
    }
    rows = []
    if cfg.metrics:
        rows = _diagnostics(cfg, sources, styles, z, source_hashes, index, matchsets, report, failures)
    _write_reports(out, report, rows, failures)
    if cfg.metrics and cfg.figures and rows:
        from .plots import render_run_figures

        render_run_figures(out / "figures", report, rows)
    return RunResult(z, failures, report, len(fresh), len(planned) - len(todo), out)


def _corpus_stats(paths, workers, failures, phase):
    parts = []
    for path, (part, err) in zip(paths, parallel_map(_moment_task, paths, workers)):
        if err is None:
            parts.append(part)
        else:
            failures.append(Failure(phase, path, err))
    return metrics.stats_from_sums(metrics.merge_sums(parts)) if parts else None


def _diagnostics(cfg, sources, styles, z, source_hashes, index, matchsets, report, failures):
    rows = []
    if matchsets and source_hashes:
        other = MatchMode.RS if cfg.mode is MatchMode.PH else MatchMode.PH
        counterfactual = match_corpus(source_hashes, index, other, cfg.k, cfg.seed, cfg.workers)
        mq = metrics.match_quality_report(list(matchsets) + counterfactual, source_hashes, index)
        rows += mq.as_rows()
        for mode, summary in mq.modes.items():
            report[f"match_distance_mean_{mode}"] = summary.mean
            report[f"match_distance_hist_{mode}"] = " ".join(map(str, summary.histogram))
    subsets = {
        "source": [str(z.resolve(s.path)) for s in z.with_role(Role.SOURCE)],
        "restyled": [str(z.resolve(s.path)) for s in z.with_role(Role.RESTYLED)],
        "style": [str(styles.resolve(s.path)) for s in styles.samples],
    }
    stats = {name: _corpus_stats(paths, cfg.workers, failures, f"stats-{name}") for name, paths in subsets.items() if paths}
    stats = {k: v for k, v in stats.items() if v is not None}
    for name, st in stats.items():
        for i, ch in enumerate(("l", "alpha", "beta")):
            rows.append((f"mean_{ch}", name, "", float(st.mean[i])))
            rows.append((f"std_{ch}", name, "", float(np.sqrt(st.cov[i, i]))))
    for a in ("source", "restyled"):
        if a in stats and "style" in stats:
            gap = metrics.domain_gap(stats[a], stats["style"])
            rows.append(("domain_gap", a, "style", gap))
            report[f"domain_gap_{a}_style"] = gap
    pairs = [
        (str(z.resolve(z.by_id()[s.provenance["content_id"]].path)), str(z.resolve(s.path)))
        for s in z.with_role(Role.RESTYLED)
    ]
    if pairs:
        scores = [v for v, err in parallel_map(_structure_task, pairs, cfg.workers) if err is None]
        if scores:
            mean_score = float(np.mean(scores))
            rows.append(("structure_preservation_mean", "source", "restyled", mean_score))
            report["structure_preservation_mean"] = mean_score
    return rows


def _write_reports(out: Path, report: dict, rows, failures) -> None:
    text = metrics.format_key_values(report)
    for f in failures:
        text += f"failure = {f.phase}\t{f.id}\t{f.reason}\n"
    with open(out / "report.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics.format_metric_csv(rows))


# -- verify -----------------------------------------------------------------


@dataclass
class VerifyReport:
    checked: int = 0
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def format(self) -> str:
        lines = [f"checked = {self.checked}", f"status = {'pass' if self.ok else 'fail'}"]
        lines += [f"problem = {p}" for p in self.problems]
        return "\n".join(lines) + "\n"


_PROVENANCE_KEYS = ("content_id", "style_id", "backend", "rank")


def verify(manifest_path) -> VerifyReport:
    """Check referential integrity, files, decodability and provenance of a manifest."""
    report = VerifyReport()
    try:
        z = read_manifest(manifest_path)
    except (OSError, ValueError, KeyError, TypeError, RestylingError) as exc:
        report.problems.append(f"cannot read manifest {manifest_path}: {exc}")
        return report
    by_id = z.by_id()
    style_ids = None
    style_manifest = z.meta.get("style_manifest")
    if style_manifest:
        try:
            style_ids = set(read_manifest(z.resolve(style_manifest)).by_id())
        except (OSError, ValueError, KeyError, TypeError, RestylingError) as exc:
            report.problems.append(f"cannot read style manifest {style_manifest}: {exc}")
    for s in z.samples:
        report.checked += 1
        path = z.resolve(s.path)
        if not path.is_file():
            report.problems.append(f"{s.id}: missing file {path}")
        else:
            try:
                with open(path, "rb") as fh:
                    data = fh.read()
                decode(data)
                if s.sha256 and hashlib.sha256(data).hexdigest() != s.sha256:
                    report.problems.append(f"{s.id}: file content does not match recorded sha256 ({path})")
            except (RestylingError, OSError) as exc:
                report.problems.append(f"{s.id}: undecodable {path}: {exc}")
        if s.label_path is not None and not z.resolve(s.label_path).is_file():
            report.problems.append(f"{s.id}: missing label {z.resolve(s.label_path)}")
        if s.role is Role.RESTYLED:
            prov = s.provenance or {}
            missing = [k for k in _PROVENANCE_KEYS if prov.get(k) is None]
            if missing:
                report.problems.append(f"{s.id}: incomplete provenance (missing {', '.join(missing)})")
                continue
            content = by_id.get(prov["content_id"])
            if content is None or content.role is not Role.SOURCE:
                report.problems.append(f"{s.id}: provenance content_id {prov['content_id']!r} is not a SOURCE sample")
            elif content.label_path != s.label_path:
                report.problems.append(f"{s.id}: label_path differs from its source's")
            if style_ids is not None and prov["style_id"] not in style_ids:
                report.problems.append(f"{s.id}: provenance style_id {prov['style_id']!r} is not a known STYLE sample")
    return report
