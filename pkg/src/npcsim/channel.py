"""One-directional network impairment model.

Delay follows a seeded sum of sines with geometrically spaced sub-frequencies
(each component i sits at f0 * 1.2**i with amplitude c / 1.2**i), which gives a
smooth, self-similar wander. The shared amplitude c is normalized numerically
so the worst-case excursion from the base delay equals the configured
deviation: closed forms for the peak of such a sum do not exist once the
phases are random.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .domain import ConfigurationError, SeededRng, derive_stream

TWO_PI = 2.0 * math.pi

# Normalization grid: five base periods sampled densely enough that the fastest
# sub-frequency (1.2**19 * f0 by default) gets hundreds of points per cycle.
GRID_PERIODS = 5
GRID_POINTS = 100_001


@dataclass(frozen=True)
class DelayFnConfig:
    a0: float                 # base one-way delay (s)
    dev: float                # worst-case excursion from a0 (s)
    f0: float = 0.4           # slowest sub-frequency (Hz)
    n: int = 20               # number of sub-frequencies
    seed: int | None = None   # phase seed; None lets the experiment derive one

    def validate(self) -> None:
        if self.dev < 0.0:
            raise ConfigurationError(f"deviation must be >= 0, got {self.dev}")
        if self.a0 < 0.0:
            raise ConfigurationError(f"base delay must be >= 0, got {self.a0}")
        if self.dev > 0.0 and self.a0 <= self.dev:
            # keeps d(t) >= a0 - dev strictly positive whenever there is wander
            raise ConfigurationError(
                f"base delay must exceed deviation, got a0={self.a0} dev={self.dev}"
            )
        if self.n < 1:
            raise ConfigurationError(f"need at least one sub-frequency, got {self.n}")
        if not (self.f0 > 0.0):
            raise ConfigurationError(f"base frequency must be positive, got {self.f0}")


def _draw_phases(seed: int, n: int) -> tuple[float, ...]:
    rng = derive_stream(seed, "delay-phases")
    return tuple(TWO_PI * rng.uniform() for _ in range(n))


def _sum_of_sines(times: np.ndarray, phases: tuple[float, ...], f0: float) -> np.ndarray:
    """Unnormalized wander: sum_i sin(1.2**i * f0 * 2pi * t + phase_i) / 1.2**i."""
    total = np.zeros_like(times)
    for i, phase in enumerate(phases):
        ratio = 1.2 ** i
        total += np.sin(ratio * f0 * TWO_PI * times + phase) / ratio
    return total


def _normalization_factor(phases: tuple[float, ...], f0: float, dev: float) -> float:
    """Amplitude c such that max_t |c * sum_of_sines(t)| == dev over the scan window."""
    if dev == 0.0:
        return 0.0
    times = np.linspace(0.0, GRID_PERIODS / f0, GRID_POINTS)
    peak = float(np.max(np.abs(_sum_of_sines(times, phases, f0))))
    if peak == 0.0:
        return 0.0
    return dev / peak


class DelayFunction:
    """Callable d(t) in seconds; phases and normalization are fixed at construction."""

    def __init__(self, cfg: DelayFnConfig):
        cfg.validate()
        self.cfg = cfg
        self.phases = _draw_phases(cfg.seed if cfg.seed is not None else 0, cfg.n)
        self.c = _normalization_factor(self.phases, cfg.f0, cfg.dev)

    def __call__(self, t: float) -> float:
        if self.c == 0.0:
            return self.cfg.a0
        total = 0.0
        for i, phase in enumerate(self.phases):
            ratio = 1.2 ** i
            total += math.sin(ratio * self.cfg.f0 * TWO_PI * t + phase) / ratio
        return self.cfg.a0 + self.c * total

    def sample(self, times: np.ndarray) -> np.ndarray:
        """Vectorized evaluation, bit-identical to the scalar path up to summation order."""
        return self.cfg.a0 + self.c * _sum_of_sines(times, self.phases, self.cfg.f0)


@lru_cache(maxsize=64)
def _build_delay_fn(cfg: DelayFnConfig) -> DelayFunction:
    return DelayFunction(cfg)


def delay_at(cfg: DelayFnConfig, t: float) -> float:
    """One-way propagation delay at send time t."""
    return _build_delay_fn(cfg)(t)


def normalize_c(cfg: DelayFnConfig) -> float:
    """The shared component amplitude used by delay_at for this configuration."""
    return _build_delay_fn(cfg).c


@dataclass(frozen=True)
class ChannelConfig:
    delay: DelayFnConfig
    loss_prob: float = 0.0
    capacity_bps: float = 0.0  # 0 disables serialization delay
    seed: int | None = None    # loss-stream seed; None lets the experiment derive one

    def validate(self) -> None:
        self.delay.validate()
        if not (0.0 <= self.loss_prob <= 1.0):
            raise ConfigurationError(f"loss probability must be in [0, 1], got {self.loss_prob}")
        if self.capacity_bps < 0.0:
            raise ConfigurationError(f"capacity must be >= 0, got {self.capacity_bps}")


def transmit(cfg: ChannelConfig, payload: bytes, send_time: float, rng: SeededRng) -> float | None:
    """Arrival time for a datagram sent at send_time, or None if the channel drops it.

    Exactly one uniform draw is consumed per call, delivered or not, so loss
    decisions replay identically for a given stream.
    """
    drop = rng.uniform() < cfg.loss_prob
    if drop:
        return None
    arrival = send_time + delay_at(cfg.delay, send_time)
    if cfg.capacity_bps > 0.0:
        arrival += len(payload) * 8.0 / cfg.capacity_bps
    return arrival


def bidirectional_loss_rate(p: float) -> float:
    """Probability that a round trip loses at least one leg when each leg drops with prob p."""
    if not (0.0 <= p <= 1.0):
        raise ConfigurationError(f"loss probability must be in [0, 1], got {p}")
    return 1.0 - (1.0 - p) ** 2
