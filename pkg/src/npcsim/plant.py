"""Ground-truth plant: a drifting discretized double integrator with noisy readout.

The velocity channel follows x2' = theta1*x2 + theta2*u + theta3 and position
integrates velocity trapezoidally; at nominal parameters (1, T, 0) this is the
exact zero-order-hold discretization of a double integrator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .domain import ConfigurationError, PlantParams, PlantState, SeededRng

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PlantConfig:
    T: float = 0.008                 # sample period (s)
    noise_sigma_pos: float = 1e-3    # position readout noise std dev (m)
    noise_sigma_vel: float = 1e-3    # velocity readout noise std dev (m/s)
    drift_amplitude: float = 0.2     # relative size of the slow parameter wander
    drift_freq: float = 0.05         # parameter wander frequency (Hz)

    def validate(self) -> None:
        if not (self.T > 0.0) or not math.isfinite(self.T):
            raise ConfigurationError(f"sample period must be positive, got {self.T}")
        if self.noise_sigma_pos < 0.0 or self.noise_sigma_vel < 0.0:
            raise ConfigurationError("noise sigmas must be >= 0")
        if not (0.0 <= self.drift_amplitude < 1.0):
            raise ConfigurationError(
                f"drift amplitude must be in [0, 1), got {self.drift_amplitude}"
            )
        if self.drift_freq < 0.0:
            raise ConfigurationError("drift frequency must be >= 0")


def plant_step(state: PlantState, u: float, params: PlantParams, T: float) -> PlantState:
    """Advance one tick under the given parameters. Deterministic; noise lives in measure()."""
    v_next = params.theta1 * state.x2 + params.theta2 * u + params.theta3
    x1_next = state.x1 + T * (state.x2 + v_next) * 0.5
    return PlantState(x1_next, v_next)


def true_params(t: float, cfg: PlantConfig) -> PlantParams:
    """Slowly wandering true parameters at time t.

    theta1 dips below 1 by at most drift_amplitude/100 (mild damping), theta2
    swings +-drift_amplitude around T, and theta3 adds a phase-shifted load wave.
    drift_amplitude = 0 freezes the plant at nominal (1, T, 0).
    """
    s = math.sin(TWO_PI * cfg.drift_freq * t)
    theta1 = 1.0 - cfg.drift_amplitude * 0.01 * (1.0 + s) * 0.5
    theta2 = cfg.T * (1.0 + cfg.drift_amplitude * s)
    theta3 = cfg.drift_amplitude * cfg.T * 0.5 * math.sin(
        TWO_PI * cfg.drift_freq * t + math.pi / 3.0
    )
    return PlantParams(theta1, theta2, theta3)


def measure(state: PlantState, rng: SeededRng, cfg: PlantConfig) -> tuple[float, float]:
    """Noisy readout (y1, y2). Always consumes exactly two draws, position first,
    so downstream stream alignment never depends on the sigma values."""
    n1 = rng.normal()
    n2 = rng.normal()
    return (state.x1 + cfg.noise_sigma_pos * n1, state.x2 + cfg.noise_sigma_vel * n2)
