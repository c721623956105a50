"""Record encoders: random-hash scalar buckets plus optional periodic time fields.

The scalar encoder puts ``value`` into bucket ``floor(value / resolution)``
and activates the bits ``h(seed, bucket + j) mod width`` for ``j < w``, so
neighbouring buckets share ``w - 1`` hash keys and therefore nearly all of
their bits.  The range of values is unbounded.

Hash: the splitmix64 finalizer, chained as
``mix(mix(mix(seed) ^ key) ^ attempt)`` on 64-bit words.  A collision with an
already chosen bit is resolved by retrying with ``attempt + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime
from functools import lru_cache

import numpy as np

from .sdr import Sdr

_MASK = (1 << 64) - 1


class EncodingError(ValueError):
    """Raised for records that cannot be encoded (non-finite value, bad timestamp)."""


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def bit_hash(seed: int, key: int, attempt: int = 0) -> int:
    return mix64(mix64(mix64(seed) ^ (key & _MASK)) ^ attempt)


@dataclass(frozen=True)
class ScalarEncoderConfig:
    resolution: float = 1.0
    active_bits: int = 40
    width: int = 2048
    seed: int = 42

    def __post_init__(self):
        if not (self.resolution > 0 and math.isfinite(self.resolution)):
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if not 0 < self.active_bits < self.width:
            raise ValueError("need 0 < active_bits < width")


@dataclass(frozen=True)
class TimeEncoderConfig:
    time_of_day: bool = False
    time_of_day_active_bits: int = 21
    time_of_day_width: int = 256
    day_of_week: bool = False
    day_of_week_active_bits: int = 21
    day_of_week_width: int = 147

    def __post_init__(self):
        if self.time_of_day and not 0 < self.time_of_day_active_bits <= self.time_of_day_width:
            raise ValueError("time-of-day width must be >= its active bits")
        if self.day_of_week and not 0 < self.day_of_week_active_bits <= self.day_of_week_width:
            raise ValueError("day-of-week width must be >= its active bits")

    @property
    def width(self) -> int:
        return (self.time_of_day_width if self.time_of_day else 0) + (
            self.day_of_week_width if self.day_of_week else 0
        )


def bucket_of(value: float, resolution: float) -> int:
    return math.floor(value / resolution)


@lru_cache(maxsize=8192)
def _bucket_bits(seed: int, width: int, active_bits: int, bucket: int) -> tuple:
    chosen = []
    taken = set()
    for j in range(active_bits):
        attempt = 0
        bit = bit_hash(seed, bucket + j, attempt) % width
        while bit in taken:
            attempt += 1
            bit = bit_hash(seed, bucket + j, attempt) % width
        taken.add(bit)
        chosen.append(bit)
    return tuple(sorted(chosen))


def encode_scalar(cfg: ScalarEncoderConfig, value: float) -> Sdr:
    value = float(value)
    if not math.isfinite(value):
        raise EncodingError(f"bad record: non-finite value {value!r}")
    bits = _bucket_bits(cfg.seed, cfg.width, cfg.active_bits, bucket_of(value, cfg.resolution))
    return Sdr._trusted(cfg.width, np.array(bits, dtype=np.int32))


def _periodic_block(position: float, width: int, active_bits: int) -> np.ndarray:
    # position in [0, 1); contiguous block that wraps around
    start = int(position * width) % width
    return (start + np.arange(active_bits)) % width


def parse_timestamp(ts) -> datetime:
    if isinstance(ts, datetime):
        return ts
    try:
        return datetime.fromisoformat(str(ts).strip())
    except ValueError as exc:
        raise EncodingError(f"unparseable timestamp {ts!r}") from exc


def encode_time(cfg: TimeEncoderConfig, timestamp) -> list[np.ndarray]:
    """Per-subfield active indices (local to each subfield)."""
    parts = []
    if not (cfg.time_of_day or cfg.day_of_week):
        return parts
    dt = parse_timestamp(timestamp)
    seconds = dt.hour * 3600 + dt.minute * 60 + dt.second + dt.microsecond / 1e6
    if cfg.time_of_day:
        parts.append(_periodic_block(seconds / 86400.0, cfg.time_of_day_width, cfg.time_of_day_active_bits))
    if cfg.day_of_week:
        pos = (dt.weekday() + seconds / 86400.0) / 7.0
        parts.append(_periodic_block(pos, cfg.day_of_week_width, cfg.day_of_week_active_bits))
    return parts


def encode_record(record, scalar_cfg: ScalarEncoderConfig, time_cfg: TimeEncoderConfig | None = None) -> Sdr:
    """Concatenate scalar and time subfields; later fields are offset by earlier widths."""
    scalar = encode_scalar(scalar_cfg, record.value)
    if time_cfg is None or time_cfg.width == 0:
        if time_cfg is not None:
            parse_timestamp(record.timestamp)
        return scalar
    pieces = [scalar.active.astype(np.int64)]
    offset = scalar_cfg.width
    subfields = encode_time(time_cfg, record.timestamp)
    widths = []
    if time_cfg.time_of_day:
        widths.append(time_cfg.time_of_day_width)
    if time_cfg.day_of_week:
        widths.append(time_cfg.day_of_week_width)
    for bits, w in zip(subfields, widths):
        pieces.append(np.sort(bits) + offset)
        offset += w
    return Sdr._trusted(offset, np.concatenate(pieces).astype(np.int32))


def encoded_width(scalar_cfg: ScalarEncoderConfig, time_cfg: TimeEncoderConfig | None) -> int:
    return scalar_cfg.width + (time_cfg.width if time_cfg is not None else 0)
