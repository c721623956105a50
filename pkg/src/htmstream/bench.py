"""Window-based scoring harness and baseline detectors.

A detection inside a labeled window earns ``tp_weight`` scaled by a
sigmoid of where in the window it falls (earlier is better); only the
first detection per window counts.  Detections outside every window cost
``fp_weight`` each and windows left undetected cost ``fn_weight`` each.
Corpus totals are normalized so that a detector hitting every window at
its start scores 100 and a detector that never fires scores 0.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .encoders import parse_timestamp
from .ingest import PipelineConfig, Record, load_csv, run_stream

# sigmoid(offset - steepness * relpos): ~0.993 at the window start, ~0.12 at its end
SIGMOID_STEEPNESS = 7.0
SIGMOID_OFFSET = 5.0


@dataclass(frozen=True)
class ApplicationProfile:
    name: str
    tp_weight: float
    fp_weight: float
    fn_weight: float

    def __post_init__(self):
        if not (self.tp_weight > 0 and self.fp_weight <= 0 and self.fn_weight <= 0):
            raise ValueError("need tp_weight > 0, fp_weight <= 0, fn_weight <= 0")


PROFILES = {
    "standard": ApplicationProfile("standard", 1.0, -0.11, -1.0),
    "reward_low_fp": ApplicationProfile("reward_low_fp", 1.0, -0.22, -1.0),
    "reward_low_fn": ApplicationProfile("reward_low_fn", 1.0, -0.11, -2.0),
}


@dataclass(frozen=True)
class AnomalyWindow:
    stream: str
    start: datetime
    end: datetime

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"window start {self.start} must precede end {self.end}")


@dataclass
class StreamScore:
    raw: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0


@dataclass
class ScoreReport:
    detector: str
    profile: str
    streams: dict = field(default_factory=dict)
    raw: float = 0.0
    normalized: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0


def scaled_sigmoid(relpos: float, steepness: float = SIGMOID_STEEPNESS,
                   offset: float = SIGMOID_OFFSET) -> float:
    """Credit for a detection at relative position ``relpos`` in [0, 1] of its window."""
    return 1.0 / (1.0 + math.exp(steepness * relpos - offset))


def _check_windows(windows: Sequence[AnomalyWindow]) -> None:
    for a, b in zip(windows, windows[1:]):
        if b.start <= a.end:
            raise ValueError(f"overlapping windows in stream {a.stream!r}")


def score_stream(detections: Sequence[datetime], windows: Sequence[AnomalyWindow],
                 profile: ApplicationProfile) -> StreamScore:
    if any(b < a for a, b in zip(detections, detections[1:])):
        raise ValueError("detections must be sorted by time")
    windows = sorted(windows, key=lambda w: w.start)
    _check_windows(windows)
    starts = [w.start for w in windows]
    hit = [False] * len(windows)
    score = StreamScore()
    for ts in detections:
        i = bisect.bisect_right(starts, ts) - 1
        if i >= 0 and ts <= windows[i].end:
            if not hit[i]:
                w = windows[i]
                rel = (ts - w.start) / (w.end - w.start)
                score.raw += profile.tp_weight * scaled_sigmoid(rel)
                score.tp += 1
                hit[i] = True
        else:
            score.raw += profile.fp_weight
            score.fp += 1
    score.fn = hit.count(False)
    score.raw += profile.fn_weight * score.fn
    return score


def normalize_corpus(raw: float, perfect_raw: float, null_raw: float) -> float:
    if not perfect_raw > null_raw:
        raise ValueError("degenerate anchors: perfect score must exceed null score")
    return 100.0 * (raw - null_raw) / (perfect_raw - null_raw)


# -- baselines -----------------------------------------------------------------

def baseline_sliding_threshold(values: Sequence[float], window: int = 100, c: float = 3.0,
                               min_std: float = 1e-6) -> list[int]:
    """Indices whose value exceeds mean + c * std of the preceding ``window`` values."""
    x = np.asarray(values, dtype=np.float64)
    out = []
    for t in range(1, x.size):
        past = x[max(0, t - window):t]
        std = past.std(ddof=1) if past.size > 1 else 0.0
        if x[t] > past.mean() + c * max(std, min_std):
            out.append(t)
    return out


def baseline_random(n: int, rate: float = 0.01, seed=0) -> list[int]:
    """Each index flagged independently with probability ``rate``.

    ``seed`` is anything ``numpy.random.default_rng`` accepts.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    return np.flatnonzero(rng.random(n) < rate).tolist()


# -- labels and corpus ---------------------------------------------------------

def load_labels(path) -> dict[str, list[AnomalyWindow]]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    out = {}
    for stream, pairs in raw.items():
        out[stream] = sorted((AnomalyWindow(stream, parse_timestamp(a), parse_timestamp(b))
                              for a, b in pairs), key=lambda w: w.start)
        _check_windows(out[stream])
    return out


def dump_labels(labels: dict[str, list], path) -> None:
    data = {name: [[str(a), str(b)] for a, b in pairs] for name, pairs in sorted(labels.items())}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def _htm_detections(records, cfg: PipelineConfig) -> list[int]:
    return [i for i, out in enumerate(run_stream(records, cfg)) if out.flag]


def _perfect_detections(records, windows) -> list[int]:
    idx = []
    stamps = [r.timestamp for r in records]
    for w in windows:
        i = bisect.bisect_left(stamps, w.start)
        if i < len(stamps):
            idx.append(i)
    return idx


DETECTORS = ("htm", "sliding_threshold", "random", "perfect", "null")


def stream_seed(seed: int, stream: str) -> list[int]:
    # independent random draws per stream, stable across runs and platforms
    return [seed, zlib.crc32(stream.encode("utf-8"))]


def detect_indices(name: str, records: list[Record], windows, cfg: PipelineConfig,
                   seed: int, stream: str = "") -> list[int]:
    if name == "htm":
        return _htm_detections(records, cfg)
    if name == "sliding_threshold":
        return baseline_sliding_threshold([r.value for r in records])
    if name == "random":
        return baseline_random(len(records), seed=stream_seed(seed, stream))
    if name == "perfect":
        return _perfect_detections(records, windows)
    if name == "null":
        return []
    raise KeyError(f"unknown detector {name!r}")


def _stream_job(args):
    name, path, windows, detectors, cfg, seed = args
    records = load_csv(path)
    probation = cfg.probation_length(len(records))
    found = {}
    for det in detectors:
        idx = detect_indices(det, records, windows, cfg, seed, name)
        # probationary detections never reach the scorer
        found[det] = [records[i].timestamp for i in idx if i >= probation]
    return name, found


def run_corpus(corpus_dir, labels: dict[str, list[AnomalyWindow]],
               detectors: Iterable[str] = ("htm", "sliding_threshold", "random"),
               profiles: Iterable[str] = tuple(PROFILES),
               cfg: PipelineConfig = PipelineConfig(), seed: int = 0,
               jobs: int = 1) -> list[ScoreReport]:
    corpus_dir = Path(corpus_dir)
    detectors = list(detectors)
    for d in detectors:
        if d not in DETECTORS:
            raise KeyError(f"unknown detector {d!r}")
    paths = sorted(corpus_dir.glob("*.csv"))
    if not paths:
        raise FileNotFoundError(f"no CSV streams in {corpus_dir}")
    args = [(p.stem, p, labels.get(p.stem, []), detectors, cfg, seed) for p in paths]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_stream_job, args))
    else:
        results = dict(map(_stream_job, args))
    return score_corpus(results, labels, detectors, profiles)


def score_corpus(detections: dict[str, dict[str, list[datetime]]],
                 labels: dict[str, list[AnomalyWindow]], detectors: Sequence[str],
                 profiles: Iterable[str]) -> list[ScoreReport]:
    """``detections`` maps stream -> detector -> sorted detection timestamps."""
    reports = []
    for pname in profiles:
        prof = PROFILES[pname]
        n_windows = sum(len(labels.get(s, [])) for s in detections)
        perfect = n_windows * prof.tp_weight * scaled_sigmoid(0.0)
        null = n_windows * prof.fn_weight
        for det in detectors:
            rep = ScoreReport(det, pname)
            for stream, per_det in sorted(detections.items()):
                sc = score_stream(per_det[det], labels.get(stream, []), prof)
                rep.streams[stream] = sc
                rep.raw += sc.raw
                rep.tp += sc.tp
                rep.fp += sc.fp
                rep.fn += sc.fn
            rep.normalized = normalize_corpus(rep.raw, perfect, null)
            reports.append(rep)
    return reports


REPORT_HEADER = ("detector", "profile", "score", "raw", "tp", "fp", "fn")


def report_rows(reports: Sequence[ScoreReport]) -> list[list[str]]:
    return [[r.detector, r.profile, f"{r.normalized:.1f}", f"{r.raw:.4f}",
             str(r.tp), str(r.fp), str(r.fn)] for r in reports]


def write_report_csv(reports: Sequence[ScoreReport], fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_HEADER)
    w.writerows(report_rows(reports))


def format_table(reports: Sequence[ScoreReport]) -> str:
    rows = [list(REPORT_HEADER)] + report_rows(reports)
    widths = [max(len(r[i]) for r in rows) for i in range(len(REPORT_HEADER))]
    lines = []
    for r in rows:
        cells = [r[0].ljust(widths[0]), r[1].ljust(widths[1])]
        cells += [c.rjust(w) for c, w in zip(r[2:], widths[2:])]
        lines.append("  ".join(cells))
    return "\n".join(lines)
