"""``htmstream`` command line: detect, multi, bench, synth.

Exit codes: 0 success, 1 input/output failure, 2 bad configuration or usage.
Log level comes from ``HTMSTREAM_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import bench, synth
from ._backend import BACKEND
from .ingest import (
    PipelineConfig,
    StreamError,
    StreamStats,
    count_data_rows,
    load_csv,
    read_csv,
    run_multi,
    run_stream,
    write_combined,
    write_outputs,
)

log = logging.getLogger("htmstream")

DEFAULT_SEED = 42


class ConfigError(Exception):
    pass


def _load_config(args) -> PipelineConfig:
    try:
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        if args.seed is not None:
            cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
        if getattr(args, "epsilon", None) is not None:
            if not 0.0 < args.epsilon < 1.0:
                raise ValueError("epsilon must lie in (0, 1)")
            cfg = cfg.with_epsilon(args.epsilon)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {exc.filename}") from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad config: {exc}") from None
    return cfg


@contextmanager
def _open_out(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    stats = StreamStats()
    if args.input in (None, "-"):
        source = read_csv(sys.stdin, strict=cfg.strict, stats=stats)
        length = None
        fh_in = None
    else:
        length = count_data_rows(args.input)
        fh_in = open(args.input, encoding="utf-8", newline="")
        source = read_csv(fh_in, strict=cfg.strict, stats=stats)
    t0 = time.perf_counter()
    try:
        with _open_out(args.output) as out:
            write_outputs(run_stream(source, cfg, stream_length=length, stats=stats), out)
    finally:
        if fh_in is not None:
            fh_in.close()
    elapsed = time.perf_counter() - t0
    ms = 1000.0 * elapsed / stats.records if stats.records else 0.0
    print(f"records={stats.records} flags={stats.flags} epsilon={cfg.likelihood.epsilon:g} "
          f"ms/record={ms:.3f} skipped={stats.skipped_malformed + stats.skipped_out_of_order} "
          f"backend={BACKEND}", file=sys.stderr)
    return 0


def cmd_multi(args) -> int:
    cfg = _load_config(args)
    sources = [load_csv(p, strict=cfg.strict) for p in args.input]
    t0 = time.perf_counter()
    with _open_out(args.output) as out:
        n = write_combined(run_multi(sources, cfg), out, len(sources))
    elapsed = time.perf_counter() - t0
    print(f"models={len(sources)} steps={n} epsilon={cfg.multi.epsilon:g} "
          f"seconds={elapsed:.2f}", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    corpus = Path(args.input)
    labels_path = Path(args.labels) if args.labels else corpus / "labels.json"
    if not labels_path.is_file():
        raise ConfigError(f"labels file not found: {labels_path}")
    try:
        labels = bench.load_labels(labels_path)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"bad labels file: {exc}") from None
    profiles = list(bench.PROFILES) if args.profile == "all" else [args.profile]
    detectors = [d.strip() for d in args.detectors.split(",") if d.strip()]
    unknown = [d for d in detectors if d not in bench.DETECTORS]
    if unknown:
        raise ConfigError(f"unknown detectors {unknown}; choose from {list(bench.DETECTORS)}")
    seed = DEFAULT_SEED if args.seed is None else args.seed
    reports = bench.run_corpus(corpus, labels, detectors, profiles, cfg, seed, args.jobs)
    print(bench.format_table(reports))
    if args.output:
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            bench.write_report_csv(reports, fh)
    return 0


def cmd_synth(args) -> int:
    seed = DEFAULT_SEED if args.seed is None else args.seed
    if args.generator == "corpus":
        members = synth.corpus_members(seed)
    elif args.generator in synth.GENERATORS:
        members = [(args.generator, args.generator, seed)]
    else:
        raise ConfigError(f"unknown generator {args.generator!r}; choose from "
                          f"{sorted(synth.GENERATORS) + ['corpus']}")
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels_path = out_dir / "labels.json"
    labels = {}
    if labels_path.exists():
        with open(labels_path, encoding="utf-8") as fh:
            labels = json.load(fh)
    for stream, gen, gen_seed in members:
        records, windows = synth.generate(gen, gen_seed, args.length)
        with open(out_dir / f"{stream}.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("timestamp,value\n")
            for r in records:
                fh.write(f"{r.timestamp.isoformat(sep=' ')},{r.value!r}\n")
        labels[stream] = [[a.isoformat(sep=" "), b.isoformat(sep=" ")] for a, b in windows]
        log.info("wrote %s (%d records, %d windows)", stream, len(records), len(windows))
    bench.dump_labels(labels, labels_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="htmstream", description="Streaming anomaly detection.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, epsilon=True):
        sp.add_argument("--config", help="pipeline config JSON")
        sp.add_argument("--seed", type=int, default=None,
                        help=f"seed (default: config value, {DEFAULT_SEED} if unset)")
        if epsilon:
            sp.add_argument("--epsilon", type=float, default=None,
                            help="flag when likelihood >= 1 - epsilon (default 1e-5)")

    d = sub.add_parser("detect", help="score one timestamp,value stream")
    d.add_argument("--input", default="-", help="input CSV (default: stdin)")
    d.add_argument("--output", default="-", help="output CSV (default: stdout)")
    common(d)
    d.set_defaults(func=cmd_detect)

    m = sub.add_parser("multi", help="combine several streams into one likelihood")
    m.add_argument("--input", action="append", required=True,
                   help="input CSV; repeat once per model")
    m.add_argument("--output", default="-")
    common(m)
    m.set_defaults(func=cmd_multi)

    b = sub.add_parser("bench", help="score detectors on a labeled corpus")
    b.add_argument("--input", required=True, help="corpus directory of CSV streams")
    b.add_argument("--labels", help="labels JSON (default: INPUT/labels.json)")
    b.add_argument("--profile", default="all", choices=["all", *bench.PROFILES])
    b.add_argument("--detectors", default="htm,sliding_threshold,random")
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--output", help="also write the report as CSV")
    common(b)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("synth", help="write a synthetic stream and its labels")
    s.add_argument("--generator", required=True,
                   help=f"one of {sorted(synth.GENERATORS)}, or 'corpus'")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--length", type=int, default=None)
    s.add_argument("--output", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    level = os.environ.get("HTMSTREAM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, StreamError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
