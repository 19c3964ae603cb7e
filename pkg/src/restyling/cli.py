"""Command-line interface: ``restyling <verb> [options]``.

Data goes to files or stdout; progress and warnings go to stderr.
Exit codes: 0 success, 1 bad arguments or config, 2 completed with failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, metrics, pipeline
from .errors import ConfigError, RestylingError
from .imgcore import read_image, write_image
from .manifest import Role, read_manifest
from .matcher import DEFAULT_K, build_index, match_corpus, write_match_file
from .phash import read_hash_file, write_hash_file
from .restyle import Backend, RestyleConfig, restyle_one

log = logging.getLogger("restyling")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(pipeline.EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def cmd_hash(args) -> int:
    try:
        manifest = pipeline.ingest(args.input, Role.SOURCE)
    except RestylingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CONFIG
    failures = []
    pairs = pipeline._hash_corpus(manifest, args.workers, "hash", failures)
    for skip in manifest.skipped:
        log.warning("skipped %s: %s", skip.id, skip.reason)
    for f in failures:
        log.warning("failed %s: %s", f.id, f.reason)
    write_hash_file(args.out, pairs)
    log.info("wrote %d hashes to %s", len(pairs), args.out)
    return pipeline.EXIT_FAILURES if failures else pipeline.EXIT_OK


def cmd_match(args) -> int:
    try:
        sources = read_hash_file(args.source_hashes)
        styles = read_hash_file(args.style_hashes)
        index = build_index(styles)
        matchsets = match_corpus(sources, index, args.mode, args.k, args.seed, args.workers)
    except (OSError, ValueError, RestylingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CONFIG
    write_match_file(args.out, matchsets)
    if args.report:
        mq = metrics.match_quality_report(matchsets, sources, index)
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(metrics.format_metric_csv(mq.as_rows()))
    log.info("wrote %d match sets to %s", len(matchsets), args.out)
    return pipeline.EXIT_OK


def _restyle_config(args) -> RestyleConfig:
    options = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                data = pipeline.tomllib.load(fh)
        except (OSError, pipeline.tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from None
        options = data.get("restyle", data)
    if args.backend:
        options["backend"] = args.backend
    if args.lowpass_radius is not None:
        options["lowpass_radius"] = args.lowpass_radius
    if args.detail_preserve:
        options["detail_preserve"] = True
    return RestyleConfig.from_mapping(options)


def cmd_restyle(args) -> int:
    try:
        cfg = _restyle_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CONFIG
    try:
        img, prov = restyle_one(args.content, args.style, cfg)
    except (OSError, RestylingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_FAILURES
    fmt = "JPEG" if Path(args.out).suffix.lower() in (".jpg", ".jpeg") else "PNG"
    write_image(img, args.out, fmt)
    print(f"content_id = {prov.content_id}\nstyle_id = {prov.style_id}\n"
          f"backend = {prov.backend}\nconfig_digest = {prov.config_digest}")
    return pipeline.EXIT_OK


def cmd_run(args) -> int:
    overrides = {
        "source_dir": args.source_dir,
        "style_dir": args.style_dir,
        "out_dir": args.out_dir,
        "label_dir": args.label_dir,
        "mode": args.mode,
        "k": args.k,
        "seed": args.seed,
        "workers": args.workers,
        "output_format": args.output_format,
        "restyle.backend": args.backend,
        "metrics": False if args.no_metrics else None,
        "figures": False if args.no_figures else None,
    }
    try:
        cfg = pipeline.load_config(args.config, overrides)
        result = pipeline.run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CONFIG
    sys.stdout.write(metrics.format_key_values(result.report))
    for f in result.failures:
        print(f"failure: {f.phase} {f.id}: {f.reason}", file=sys.stderr)
    return result.exit_code


def _subset_paths(manifest, name):
    name = name.lower()
    if name == "style" and manifest.meta.get("style_manifest"):
        styles = read_manifest(manifest.resolve(manifest.meta["style_manifest"]))
        return [styles.resolve(s.path) for s in styles.samples]
    try:
        role = Role(name.upper())
    except ValueError:
        raise ConfigError(f"unknown subset {name!r} (expected source, style or restyled)") from None
    return [manifest.resolve(s.path) for s in manifest.with_role(role)]


def cmd_stats(args) -> int:
    try:
        manifest = read_manifest(args.manifest)
        stats = {}
        for name in args.subset:
            paths = _subset_paths(manifest, name)
            stats[name] = metrics.corpus_stats((read_image(p) for p in paths), per_image=args.per_image)
    except (OSError, ValueError, RestylingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return pipeline.EXIT_CONFIG
    values, rows = {}, []
    for name, st in stats.items():
        for i, ch in enumerate(("l", "alpha", "beta")):
            values[f"{name}.mean_{ch}"] = float(st.mean[i])
            values[f"{name}.std_{ch}"] = float(st.cov[i, i] ** 0.5)
            rows.append((f"mean_{ch}", name, "", float(st.mean[i])))
            rows.append((f"std_{ch}", name, "", float(st.cov[i, i] ** 0.5)))
    names = list(stats)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            gap = metrics.domain_gap(stats[a], stats[b])
            values[f"domain_gap({a},{b})"] = gap
            rows.append(("domain_gap", a, b, gap))
    sys.stdout.write(metrics.format_key_values(values))
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(metrics.format_metric_csv(rows))
    if args.plot:
        from .plots import plot_domain_stats

        plot_domain_stats(rows, args.plot)
    return pipeline.EXIT_OK


def cmd_verify(args) -> int:
    report = pipeline.verify(args.manifest)
    sys.stdout.write(report.format())
    return pipeline.EXIT_OK if report.ok else pipeline.EXIT_FAILURES


def cmd_bench(args) -> int:
    result = bench.run_benchmark(args.images, args.index_size, args.queries)
    sys.stdout.write(metrics.format_key_values(result))
    return pipeline.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="restyling", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_, allow_abbrev=False)
        p.set_defaults(fn=fn)
        return p

    p = add("hash", cmd_hash, "hash every image in a directory")
    p.add_argument("--input", required=True, help="image directory (searched recursively)")
    p.add_argument("--out", required=True, help="hash file to write")
    p.add_argument("--workers", type=_positive, default=1)

    p = add("match", cmd_match, "match source hashes to style hashes")
    p.add_argument("--source-hashes", required=True)
    p.add_argument("--style-hashes", required=True)
    p.add_argument("--mode", choices=["ph", "rs"], default="ph")
    p.add_argument("--k", type=_positive, default=DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=_positive, default=1)
    p.add_argument("--out", required=True, help="match file to write")
    p.add_argument("--report", help="optional CSV of match-distance statistics")

    p = add("restyle", cmd_restyle, "restyle one content image with one style image")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--backend", choices=[b.value.lower() for b in Backend])
    p.add_argument("--lowpass-radius", type=_positive)
    p.add_argument("--detail-preserve", action="store_true")
    p.add_argument("--config", help="TOML file with restyle options (a [restyle] table or top-level keys)")
    p.add_argument("--out", required=True)

    p = add("run", cmd_run, "run the full pipeline from a config file")
    p.add_argument("--config", required=True, help="TOML pipeline config")
    p.add_argument("--source-dir")
    p.add_argument("--style-dir")
    p.add_argument("--out-dir")
    p.add_argument("--label-dir")
    p.add_argument("--mode", choices=["ph", "rs"])
    p.add_argument("--k", type=_positive)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=_positive)
    p.add_argument("--backend", choices=[b.value.lower() for b in Backend])
    p.add_argument("--output-format", choices=["png", "jpeg"])
    p.add_argument("--no-metrics", action="store_true")
    p.add_argument("--no-figures", action="store_true")

    p = add("stats", cmd_stats, "channel statistics and domain gaps between manifest subsets")
    p.add_argument("--manifest", required=True)
    p.add_argument("--subset", action="append", required=True, help="source, style or restyled; repeatable")
    p.add_argument("--per-image", action="store_true", help="average per-image statistics instead of pooling")
    p.add_argument("--csv", help="also write metric,subset_a,subset_b,value rows here")
    p.add_argument("--plot", help="render a figure of the statistics to this PNG")

    p = add("verify", cmd_verify, "check a manifest's files, provenance and references")
    p.add_argument("--manifest", required=True)

    p = add("bench", cmd_bench, "measure hashing and Hamming-scan throughput")
    p.add_argument("--images", type=_positive, default=64)
    p.add_argument("--index-size", type=_positive, default=200_000)
    p.add_argument("--queries", type=_positive, default=256)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
