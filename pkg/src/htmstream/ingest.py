"""Stream records through encoder -> temporal memory -> likelihood, in order.

Input CSV is ``timestamp,value`` with a header.  Output CSV is
``timestamp,value,raw_score,likelihood,flag``.  Each record is fully
processed, and its row produced, before the next one is read.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Iterator, NamedTuple, Sequence, TextIO

from .anomaly import AnomalyLikelihood, AnomalyOutput, LikelihoodConfig, raw_score
from .encoders import (
    ScalarEncoderConfig,
    TimeEncoderConfig,
    encode_record,
    encoded_width,
    parse_timestamp,
)
from .multi import Combiner, MultiConfig, NEUTRAL_Q, multi_flag
from .sdr import Sdr
from .tm import ColumnProjector, TemporalMemory, TmConfig

log = logging.getLogger(__name__)

OUTPUT_HEADER = ("timestamp", "value", "raw_score", "likelihood", "flag")
RESOLUTION_BUCKETS = 130


class StreamError(ValueError):
    """Malformed input that the strict policy refuses to skip."""


class Record(NamedTuple):
    timestamp: datetime
    value: float


@dataclass(frozen=True)
class EncoderSettings:
    resolution: float | None = None  # None: derive from the probationary records
    min_resolution: float = 0.001
    active_bits: int = 40
    width: int = 2048


@dataclass(frozen=True)
class PipelineConfig:
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    time: TimeEncoderConfig = field(default_factory=TimeEncoderConfig)
    tm: TmConfig = field(default_factory=TmConfig)
    likelihood: LikelihoodConfig = field(default_factory=LikelihoodConfig)
    multi: MultiConfig = field(default_factory=MultiConfig)
    probation_fraction: float = 0.15
    probation_cap: int = 750
    exclude_probation_scores: bool = True
    strict: bool = False
    seed: int = 42

    def __post_init__(self):
        if not 0.0 <= self.probation_fraction < 1.0:
            raise ValueError("probation_fraction must lie in [0, 1)")
        if self.probation_cap < 0:
            raise ValueError("probation_cap must be non-negative")

    def probation_length(self, stream_length: int | None) -> int:
        if stream_length is None:
            return self.probation_cap
        return min(math.ceil(self.probation_fraction * stream_length), self.probation_cap)

    def with_epsilon(self, epsilon: float) -> "PipelineConfig":
        return dataclasses.replace(
            self,
            likelihood=dataclasses.replace(self.likelihood, epsilon=epsilon),
            multi=dataclasses.replace(self.multi, epsilon=epsilon),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        sections = {
            "encoder": EncoderSettings,
            "time": TimeEncoderConfig,
            "tm": TmConfig,
            "likelihood": LikelihoodConfig,
            "multi": MultiConfig,
        }
        kwargs = {}
        for key, typ in sections.items():
            if key in d:
                sub = d.pop(key) or {}
                names = {f.name for f in dataclasses.fields(typ)}
                unknown = set(sub) - names
                if unknown:
                    raise ValueError(f"unknown keys in '{key}': {sorted(unknown)}")
                kwargs[key] = typ(**sub)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs.update(d)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class StreamStats:
    records: int = 0
    flags: int = 0
    skipped_malformed: int = 0
    skipped_out_of_order: int = 0


class Detector:
    """One model: encoder, column projection, temporal memory and likelihood.

    ``probation`` is the number of leading records whose flags are
    suppressed; their raw scores are kept out of the likelihood window when
    ``cfg.exclude_probation_scores`` is set.
    """

    def __init__(self, cfg: PipelineConfig = PipelineConfig(), probation: int = 0):
        self.cfg = cfg
        self.probation = probation
        self.tm_cfg = dataclasses.replace(cfg.tm, seed=cfg.seed)
        self.tm = TemporalMemory(self.tm_cfg)
        enc = cfg.encoder
        self._fixed_resolution = enc.resolution
        self._lo = math.inf
        self._hi = -math.inf
        self.resolution = enc.resolution if enc.resolution is not None else enc.min_resolution
        self._scalar_cfg = self._make_scalar_cfg(self.resolution)
        self.projector = ColumnProjector(encoded_width(self._scalar_cfg, cfg.time), self.tm_cfg)
        self.likelihood = AnomalyLikelihood(cfg.likelihood)
        self._predicted = Sdr._trusted(self.tm_cfg.column_count, self.tm.predicted_columns.active)
        self.t = 0
        self.last_q = NEUTRAL_Q

    def _make_scalar_cfg(self, resolution: float) -> ScalarEncoderConfig:
        enc = self.cfg.encoder
        return ScalarEncoderConfig(resolution=resolution, active_bits=enc.active_bits,
                                   width=enc.width, seed=self.cfg.seed)

    @property
    def in_probation(self) -> bool:
        return self.t <= self.probation

    def _calibrate(self, value: float) -> None:
        # auto-resolution tracks the observed range until probation ends
        if self._fixed_resolution is not None or self.t > max(self.probation, 1):
            return
        self._lo = min(self._lo, value)
        self._hi = max(self._hi, value)
        res = max(self.cfg.encoder.min_resolution, (self._hi - self._lo) / RESOLUTION_BUCKETS)
        if res != self.resolution:
            self.resolution = res
            self._scalar_cfg = self._make_scalar_cfg(res)

    def process(self, record: Record) -> AnomalyOutput:
        self.t += 1
        self._calibrate(record.value)
        enc = encode_record(record, self._scalar_cfg, self.cfg.time)
        cols = self.projector.project(enc)
        s = raw_score(self._predicted, cols)
        _, self._predicted = self.tm.step(cols, learn=True)
        probation = self.in_probation
        if probation and self.cfg.exclude_probation_scores:
            lik = 0.5
            self.last_q = NEUTRAL_Q
        else:
            lik, _ = self.likelihood.update(s)
            self.last_q = self.likelihood.tail_probability
        flagged = (not probation) and lik >= 1.0 - self.cfg.likelihood.epsilon
        return AnomalyOutput(record.timestamp, record.value, s, lik, flagged)


# -- input -------------------------------------------------------------------

def _handle_bad(msg: str, strict: bool) -> None:
    if strict:
        raise StreamError(msg)
    log.warning("%s; skipping", msg)


def parse_rows(rows: Iterable[Sequence[str]], strict: bool = False,
               stats: StreamStats | None = None) -> Iterator[Record]:
    """Turn ``(timestamp, value)`` text rows into records, skipping bad ones."""
    stats = stats if stats is not None else StreamStats()
    for lineno, row in enumerate(rows, start=2):
        try:
            if len(row) < 2:
                raise ValueError("expected timestamp,value")
            ts = parse_timestamp(row[0])
            value = float(row[1])
            if not math.isfinite(value):
                raise ValueError(f"non-finite value {row[1]!r}")
        except ValueError as exc:
            stats.skipped_malformed += 1
            _handle_bad(f"malformed row {lineno}: {exc}", strict)
            continue
        yield Record(ts, value)


def read_csv(fh: TextIO, strict: bool = False, stats: StreamStats | None = None) -> Iterator[Record]:
    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None:
        return
    if [h.strip().lower() for h in header[:2]] != ["timestamp", "value"]:
        raise StreamError(f"expected header 'timestamp,value', got {header!r}")
    yield from parse_rows(reader, strict=strict, stats=stats)


def count_data_rows(path) -> int:
    with open(path, encoding="utf-8", newline="") as fh:
        return max(sum(1 for line in fh if line.strip()) - 1, 0)


def load_csv(path, strict: bool = False) -> list[Record]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(read_csv(fh, strict=strict))


# -- single stream -------------------------------------------------------------

def run_stream(source: Iterable[Record], cfg: PipelineConfig = PipelineConfig(),
               stream_length: int | None = None,
               stats: StreamStats | None = None) -> Iterator[AnomalyOutput]:
    """Yield one output per record, strictly in arrival order.

    ``stream_length`` (when known) sets the probationary period to
    ``min(ceil(fraction * length), cap)``; otherwise the cap alone applies.
    If omitted and ``source`` has a length, that length is used.
    """
    if stream_length is None and hasattr(source, "__len__"):
        stream_length = len(source)
    stats = stats if stats is not None else StreamStats()
    det = Detector(cfg, cfg.probation_length(stream_length))
    last_ts = None
    for rec in source:
        if last_ts is not None and rec.timestamp < last_ts:
            stats.skipped_out_of_order += 1
            _handle_bad(f"non-monotonic timestamp {rec.timestamp} after {last_ts}", cfg.strict)
            continue
        last_ts = rec.timestamp
        out = det.process(rec)
        stats.records += 1
        stats.flags += out.flag
        yield out


def format_ts(ts) -> str:
    return ts.isoformat(sep=" ") if isinstance(ts, datetime) else str(ts)


def output_row(out: AnomalyOutput) -> list[str]:
    return [format_ts(out.timestamp), repr(float(out.value)), repr(float(out.raw_score)),
            repr(float(out.likelihood)), "1" if out.flag else "0"]


def write_outputs(outputs: Iterable[AnomalyOutput], fh: TextIO) -> int:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(OUTPUT_HEADER)
    n = 0
    for out in outputs:
        writer.writerow(output_row(out))
        n += 1
    return n


def outputs_to_csv(outputs: Iterable[AnomalyOutput]) -> str:
    buf = io.StringIO()
    write_outputs(outputs, buf)
    return buf.getvalue()


# -- multiple streams ----------------------------------------------------------

class CombinedRow(NamedTuple):
    timestamp: datetime
    q_values: tuple
    smoothed: tuple
    likelihood: float
    flag: bool


def combined_header(n_models: int) -> list[str]:
    return (["timestamp"] + [f"q_{i}" for i in range(n_models)]
            + [f"smoothed_{i}" for i in range(n_models)] + ["likelihood", "flag"])


def combined_row(row: CombinedRow) -> list[str]:
    return ([format_ts(row.timestamp)] + [repr(float(q)) for q in row.q_values]
            + [repr(float(v)) for v in row.smoothed]
            + [repr(float(row.likelihood)), "1" if row.flag else "0"])


def run_multi(sources: Sequence[Sequence[Record]], cfgs: Sequence[PipelineConfig] | PipelineConfig,
              multi_cfg: MultiConfig | None = None) -> Iterator[CombinedRow]:
    """Advance one detector per stream in timestamp lockstep and combine them.

    At each distinct timestamp, streams holding a record there process it and
    publish their tail probability; streams without one publish 0.5.
    """
    if not sources:
        raise ValueError("run_multi needs at least one stream")
    if isinstance(cfgs, PipelineConfig):
        cfgs = [cfgs] * len(sources)
    if len(cfgs) != len(sources):
        raise ValueError("one pipeline config per stream")
    multi_cfg = multi_cfg or cfgs[0].multi
    nonempty = [s for s in sources if len(s)]
    if len(nonempty) != len(sources):
        raise StreamError("every stream needs at least one record")
    start = max(s[0].timestamp for s in sources)
    end = min(s[-1].timestamp for s in sources)
    if start > end:
        raise StreamError("streams share no overlapping time range")

    detectors = [Detector(c, c.probation_length(len(s))) for c, s in zip(cfgs, sources)]
    combiner = Combiner(len(sources), multi_cfg)
    heads = [0] * len(sources)
    while True:
        pending = [s[h].timestamp for s, h in zip(sources, heads) if h < len(s)]
        if not pending:
            return
        ts = min(pending)
        qs = []
        for i, (src, det) in enumerate(zip(sources, detectors)):
            h = heads[i]
            if h < len(src) and src[h].timestamp == ts:
                det.process(src[h])
                heads[i] = h + 1
                # a duplicate timestamp within one stream is consumed at the next step
                qs.append(det.last_q)
            else:
                qs.append(NEUTRAL_Q)
        smoothed, lik = combiner.step(qs)
        in_probation = any(d.t == 0 or d.in_probation for d in detectors)
        yield CombinedRow(ts, tuple(qs), tuple(smoothed.tolist()), lik,
                          multi_flag(lik, multi_cfg, in_probation))


def write_combined(rows: Iterable[CombinedRow], fh: TextIO, n_models: int) -> int:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(combined_header(n_models))
    n = 0
    for row in rows:
        writer.writerow(combined_row(row))
        n += 1
    return n
