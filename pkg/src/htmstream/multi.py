"""Combine per-model tail probabilities into one system-level likelihood.

Each model publishes its Q-value every step.  A causal half-normal kernel
smooths each channel over the last ``K`` steps, and the smoothed values are
multiplied (in log space) under an independence assumption.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

NEUTRAL_Q = 0.5
LOG_FLOOR = 1e-300


@dataclass(frozen=True)
class MultiConfig:
    sigma: float = 6.0
    epsilon: float = 1e-5
    kernel_span: int | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.kernel_span is not None and self.kernel_span < math.ceil(3 * self.sigma):
            raise ValueError("kernel_span must be at least ceil(3 * sigma)")

    @property
    def span(self) -> int:
        return self.kernel_span if self.kernel_span is not None else math.ceil(4 * self.sigma)

    @classmethod
    def from_dict(cls, d: dict) -> "MultiConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown multi config keys: {sorted(unknown)}")
        return cls(**d)


def gaussian(x, sigma: float):
    return np.exp(-np.square(x) / (2.0 * sigma * sigma)) / (math.sqrt(2.0 * math.pi) * sigma)


def half_normal_mass(sigma: float, span: int) -> float:
    """Total weight of ``2 G(j; sigma)`` over lags ``0..span`` before normalizing."""
    return float(np.sum(2.0 * gaussian(np.arange(span + 1), sigma)))


def kernel_weights(sigma: float, span: int) -> np.ndarray:
    """Causal half-normal weights for lags ``0..span``, normalized to sum to 1."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if span < 1:
        raise ValueError("kernel span must be >= 1")
    w = 2.0 * gaussian(np.arange(span + 1), sigma)
    w = w / math.fsum(w)
    # put the rounding residue on the largest weight so the weights sum to 1
    w[0] = 1.0 - math.fsum(w[1:])
    return w


class ModelChannel:
    """Ring buffer of one model's recent tail probabilities (newest first)."""

    def __init__(self, span: int):
        self.span = span
        self._q: deque[float] = deque([NEUTRAL_Q] * (span + 1), maxlen=span + 1)
        self.samples = 0

    def publish(self, q: float) -> None:
        if not 0.0 <= q <= 1.0 or math.isnan(q):
            raise ValueError(f"tail probability out of range: {q!r}")
        q = max(q, LOG_FLOOR)
        self._q.appendleft(float(q))
        self.samples += 1

    def history(self) -> np.ndarray:
        """Values at lags ``0..span``; unseen lags hold the neutral 0.5."""
        return np.fromiter(self._q, dtype=np.float64, count=self.span + 1)


def smoothed_values(channels: Sequence[ModelChannel], weights: np.ndarray) -> np.ndarray:
    return np.array([math.fsum(weights * ch.history()) for ch in channels])


def combined_from_smoothed(smoothed: np.ndarray) -> float:
    """``1 - prod(smoothed)`` with the product taken as a sum of logs."""
    if smoothed.size == 0:
        raise ValueError("need at least one model channel")
    clamped = np.maximum(smoothed, LOG_FLOOR)
    if clamped.size == 1:
        return 1.0 - float(clamped[0])
    return 1.0 - math.exp(math.fsum(np.log(clamped)))


def combined_likelihood(channels: Sequence[ModelChannel], cfg: MultiConfig,
                        weights: np.ndarray | None = None) -> float:
    if not channels:
        raise ValueError("need at least one model channel")
    if weights is None:
        weights = kernel_weights(cfg.sigma, cfg.span)
    return combined_from_smoothed(smoothed_values(channels, weights))


def multi_flag(likelihood: float, cfg: MultiConfig, in_probation: bool = False) -> bool:
    return (not in_probation) and likelihood >= 1.0 - cfg.epsilon


class Combiner:
    """Per-timestep combiner over ``M`` channels.

    Each call to :meth:`step` takes exactly one Q-value per channel for the
    current timestep and returns ``(smoothed, likelihood)``.
    """

    def __init__(self, n_models: int, cfg: MultiConfig = MultiConfig()):
        if n_models < 1:
            raise ValueError("need at least one model channel")
        self.cfg = cfg
        self.weights = kernel_weights(cfg.sigma, cfg.span)
        self.pre_normalization_mass = half_normal_mass(cfg.sigma, cfg.span)
        self.channels = [ModelChannel(cfg.span) for _ in range(n_models)]

    def step(self, qs: Sequence[float]) -> tuple[np.ndarray, float]:
        if len(qs) != len(self.channels):
            raise ValueError(f"expected {len(self.channels)} q values, got {len(qs)}")
        for ch, q in zip(self.channels, qs):
            ch.publish(q)
        sm = smoothed_values(self.channels, self.weights)
        return sm, combined_from_smoothed(sm)
