"""Deterministic synthetic streams with labeled anomaly windows.

Every generator returns ``(records, anomaly_indices)``; :func:`windows_for`
turns anomaly indices into labeled windows that span 10% of the stream
divided by the number of anomalies, centred on each anomaly.
"""

from __future__ import annotations

from datetime import datetime, timedelta
from typing import Callable

import numpy as np

from .ingest import Record

START = datetime(2016, 1, 1)
STEP = timedelta(minutes=5)


def _records(values) -> list[Record]:
    return [Record(START + i * STEP, float(round(v, 6))) for i, v in enumerate(values)]


def _pattern(rng, period: int, lo: float, hi: float) -> np.ndarray:
    # a fixed random waveform repeated every period
    base = rng.uniform(lo, hi, size=period)
    return np.convolve(np.concatenate([base[-2:], base]), np.ones(3) / 3, mode="valid")[:period]


def level_shift(seed: int, length: int = 4000):
    """Periodic pattern that jumps to a new level at 60% of the stream."""
    rng = np.random.default_rng(seed)
    period = 24
    shape = _pattern(rng, period, 20.0, 40.0)
    t = np.arange(length)
    values = shape[t % period] + rng.normal(0.0, 0.05, length)
    shift_at = int(0.6 * length)
    values[shift_at:] += 50.0
    return _records(values), [shift_at]


def double_spike(seed: int, length: int = 4000):
    """Regular isolated spikes are normal; one pair of consecutive spikes is not."""
    rng = np.random.default_rng(seed)
    period = 30
    values = 10.0 + rng.normal(0.0, 0.05, length)
    spikes = np.arange(period - 1, length, period)
    values[spikes] = 30.0
    k = int(0.7 * length) // period
    anomaly = int(spikes[k]) + 1
    values[anomaly] = 30.0
    return _records(values), [anomaly]


def temperature(seed: int, length: int = 4000):
    """Smooth cycle with slow drift; the cycle's rhythm changes while staying in range."""
    rng = np.random.default_rng(seed)
    period = 48
    t = np.arange(length)
    phase = 2 * np.pi * t / period
    values = 70.0 + 10.0 * np.sin(phase) + 0.0005 * t + rng.normal(0.0, 0.05, length)
    onset = int(0.65 * length)
    span = 3 * period
    # temporal anomaly: the cycle runs at double speed, values stay within range
    fast = 70.0 + 10.0 * np.sin(2 * phase[onset:onset + span]) + 0.0005 * t[onset:onset + span]
    values[onset:onset + span] = fast + rng.normal(0.0, 0.05, span)
    return _records(values), [onset]


def noisy_spikes(seed: int, length: int = 4000):
    """Noisy latency with occasional spikes; spikes become frequent near the end."""
    rng = np.random.default_rng(seed)
    values = rng.gamma(4.0, 0.05, length)
    spike = rng.random(length) < 0.01
    onset = int(0.75 * length)
    spike[onset:onset + 60] = rng.random(60) < 0.5
    values[spike] += rng.uniform(2.0, 3.0, spike.sum())
    return _records(values), [onset]


def jump_up(seed: int, length: int = 4000):
    """Daily-style cycle on noise; one stretch of cycles runs well above the usual level."""
    rng = np.random.default_rng(seed)
    period = 48
    shape = _pattern(rng, period, 40.0, 60.0)
    values = shape[np.arange(length) % period] + rng.normal(0.0, 0.5, length)
    onset = int(0.7 * length)
    values[onset:onset + 2 * period] += 30.0
    return _records(values), [onset]


def flatline(seed: int, length: int = 4000):
    """Daily-style cycle that goes flat at its mean for a while; the flat value is in range."""
    rng = np.random.default_rng(seed)
    period = 48
    shape = _pattern(rng, period, 40.0, 60.0)
    values = shape[np.arange(length) % period] + rng.normal(0.0, 0.5, length)
    onset = int(0.7 * length)
    values[onset:onset + 2 * period] = shape.mean() + rng.normal(0.0, 0.5, 2 * period)
    return _records(values), [onset]


def spike(seed: int, length: int = 4000):
    """Stationary noise with one isolated large spike."""
    rng = np.random.default_rng(seed)
    values = 20.0 + rng.normal(0.0, 1.0, length)
    at = int(0.75 * length)
    values[at] += 15.0
    return _records(values), [at]


def noise(seed: int, length: int = 50000):
    """Stationary Gaussian noise; no anomalies."""
    rng = np.random.default_rng(seed)
    return _records(rng.normal(0.0, 1.0, length)), []


def cyclic(seed: int, length: int = 1200, period: int = 24):
    """Fixed waveform of ``period`` samples repeated; no anomalies."""
    rng = np.random.default_rng(seed)
    shape = _pattern(rng, period, 0.0, 100.0)
    return _records(shape[np.arange(length) % period]), []


GENERATORS: dict[str, Callable] = {
    "level_shift": level_shift,
    "double_spike": double_spike,
    "temperature": temperature,
    "noisy_spikes": noisy_spikes,
    "jump_up": jump_up,
    "flatline": flatline,
    "spike": spike,
    "noise": noise,
    "cyclic": cyclic,
}

# generators making up the default benchmark corpus, each drawn at CORPUS_SEEDS seeds
CORPUS = ("level_shift", "double_spike", "temperature", "noisy_spikes", "jump_up", "flatline",
          "spike")
CORPUS_SEEDS = 3


def corpus_members(seed: int) -> list[tuple[str, str, int]]:
    """``(stream name, generator, seed)`` for every stream of the default corpus."""
    return [(f"{name}_{k}", name, seed + k) for name in CORPUS for k in range(CORPUS_SEEDS)]


def windows_for(records: list[Record], anomalies: list[int], fraction: float = 0.1):
    if not anomalies:
        return []
    n = len(records)
    half = max(1, int(fraction * n / len(anomalies)) // 2)
    out = []
    for a in sorted(anomalies):
        lo = max(0, a - half)
        hi = min(n - 1, a + half)
        out.append((records[lo].timestamp, records[hi].timestamp))
    return out


def generate(name: str, seed: int, length: int | None = None):
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise KeyError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    records, anomalies = gen(seed) if length is None else gen(seed, length)
    return records, windows_for(records, anomalies)
