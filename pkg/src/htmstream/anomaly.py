"""Raw anomaly score, rolling score distribution, and anomaly likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .sdr import Sdr, SdrError

_SQRT2 = math.sqrt(2.0)


def raw_score(predicted_prev: Sdr, actual: Sdr) -> float:
    """Fraction of the current active bits that were not predicted.

    An empty ``actual`` code carries no evidence of surprise and scores 0.
    """
    if predicted_prev.width != actual.width:
        raise SdrError(f"incompatible codes: width {predicted_prev.width} vs {actual.width}")
    n = actual.active.size
    if n == 0:
        return 0.0
    hit = np.intersect1d(predicted_prev.active, actual.active, assume_unique=True).size
    return 1.0 - hit / n


def q_function(x: float) -> float:
    """Gaussian upper-tail probability, ``Q(x) = erfc(x / sqrt(2)) / 2``."""
    return 0.5 * math.erfc(x / _SQRT2)


@dataclass(frozen=True)
class LikelihoodConfig:
    window: int = 8000
    short_window: int = 10
    epsilon: float = 1e-5
    min_variance_floor: float = 1e-4
    warmup_min: int = 2

    def __post_init__(self):
        if self.window < 2 or self.short_window < 1:
            raise ValueError("windows must be positive (long window >= 2)")
        if self.short_window * 10 > self.window:
            raise ValueError("short_window must be at most window / 10")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if not self.min_variance_floor > 0:
            raise ValueError("min_variance_floor must be positive")
        if self.warmup_min < 2:
            raise ValueError("warmup_min must be >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown likelihood config keys: {sorted(unknown)}")
        return cls(**d)


class DistributionEstimate(NamedTuple):
    mean: float
    variance: float
    count: int


@dataclass(frozen=True)
class AnomalyOutput:
    timestamp: object
    value: float
    raw_score: float
    likelihood: float
    flag: bool


class _RollingSum:
    """Windowed sum with Neumaier compensation."""

    __slots__ = ("total", "comp")

    def __init__(self):
        self.total = 0.0
        self.comp = 0.0

    def add(self, x: float) -> None:
        t = self.total + x
        if abs(self.total) >= abs(x):
            self.comp += (self.total - t) + x
        else:
            self.comp += (x - t) + self.total
        self.total = t

    def value(self) -> float:
        return self.total + self.comp

    def reset(self, exact: float) -> None:
        self.total = exact
        self.comp = 0.0


class AnomalyLikelihood:
    """Rolling-normal model of raw scores with a short-term mean.

    Holds the last ``window`` scores in a ring buffer; mean and unbiased
    variance over the window and the mean over the last ``short_window``
    scores are maintained incrementally and recomputed exactly every
    ``window`` updates.
    """

    def __init__(self, cfg: LikelihoodConfig = LikelihoodConfig()):
        self.cfg = cfg
        self._buf = np.zeros(cfg.window, dtype=np.float64)
        self._pos = 0
        self.count = 0
        self._since_refresh = 0
        self._s1 = _RollingSum()
        self._s2 = _RollingSum()
        self._short = _RollingSum()
        self.last_deviation = 0.0

    def _window_values(self) -> np.ndarray:
        n = min(self.count, self.cfg.window)
        if self.count <= self.cfg.window:
            return self._buf[:n]
        return np.roll(self._buf, -self._pos)

    def _short_values(self) -> np.ndarray:
        w = self.cfg.window
        j = min(self.count, self.cfg.short_window)
        idx = (self._pos - 1 - np.arange(j)) % w
        return self._buf[idx]

    def _refresh(self) -> None:
        vals = self._window_values()
        self._s1.reset(math.fsum(vals))
        self._s2.reset(math.fsum(vals * vals))
        self._short.reset(math.fsum(self._short_values()))
        self._since_refresh = 0

    def push(self, s: float) -> None:
        cfg = self.cfg
        w = cfg.window
        old = self._buf[self._pos] if self.count >= w else None
        # score leaving the short window
        if self.count >= cfg.short_window:
            out_short = self._buf[(self._pos - cfg.short_window) % w]
            self._short.add(-out_short)
        self._buf[self._pos] = s
        self._pos = (self._pos + 1) % w
        self.count += 1
        self._s1.add(s)
        self._s2.add(s * s)
        self._short.add(s)
        if old is not None:
            self._s1.add(-old)
            self._s2.add(-old * old)
        self._since_refresh += 1
        if self._since_refresh >= w:
            self._refresh()

    def estimate(self) -> DistributionEstimate:
        """Window mean and unbiased variance (unfloored)."""
        k = min(self.count, self.cfg.window)
        if k == 0:
            return DistributionEstimate(0.0, 0.0, 0)
        s1 = self._s1.value()
        mean = s1 / k
        if k < 2:
            return DistributionEstimate(mean, 0.0, k)
        var = (self._s2.value() - s1 * mean) / (k - 1)
        return DistributionEstimate(mean, max(var, 0.0), k)

    def short_mean(self) -> float:
        j = min(self.count, self.cfg.short_window)
        return self._short.value() / j if j else 0.0

    def update(self, s: float) -> tuple[float, DistributionEstimate]:
        """Push one raw score; return ``(likelihood, distribution)``."""
        s = float(s)
        if not math.isfinite(s):
            raise ValueError(f"non-finite raw score {s!r}: upstream fault")
        self.push(s)
        est = self.estimate()
        if est.count < self.cfg.warmup_min:
            self.last_deviation = 0.0
            return 0.5, est
        var = max(est.variance, self.cfg.min_variance_floor)
        est = DistributionEstimate(est.mean, var, est.count)
        z = (self.short_mean() - est.mean) / math.sqrt(var)
        self.last_deviation = z
        return 1.0 - q_function(z), est

    @property
    def tail_probability(self) -> float:
        """Q-value of the latest deviation (0.5 before warm-up)."""
        return q_function(self.last_deviation)


def update_likelihood(state: AnomalyLikelihood, s: float) -> tuple[float, DistributionEstimate]:
    return state.update(s)


def flag(likelihood: float, cfg: LikelihoodConfig, in_probation: bool = False) -> bool:
    return (not in_probation) and likelihood >= 1.0 - cfg.epsilon
