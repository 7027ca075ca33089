"""Controller-side stack.

Gain design (continuous-time LQR), sinusoid reference, exponentially weighted
recursive least squares over the velocity channel, a tick-indexed buffer of the
controls the plant is believed to apply, state prediction across the buffer,
smoothed RTT tracking from piggybacked echoes, and the ControlUnit state
machine that turns one state packet into one redundant control window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .domain import (
    ConfigurationError,
    ControlPacket,
    ControlSequence,
    PlantParams,
    PlantState,
    StatePacket,
    Tick,
    clamp_params,
    nominal_params,
)

SRTT_GAIN = 0.125          # EWMA weight of a fresh RTT sample
FORGETTING_DEFAULT = 0.995
P0_SCALE = 1e3             # initial estimator covariance (weak prior)


@dataclass(frozen=True)
class LqrWeights:
    q1: float = 1.0   # position error weight
    q2: float = 0.5   # velocity error weight
    r: float = 0.1    # actuation weight

    def validate(self) -> None:
        if not (self.r > 0.0):
            raise ConfigurationError(f"actuation weight must be positive, got {self.r}")
        if self.q1 < 0.0 or self.q2 < 0.0:
            raise ConfigurationError("state weights must be >= 0")
        if self.q1 == 0.0:
            # position must be observable through the cost or the gain loses the k1 term
            raise ConfigurationError("position weight must be positive")


class GainVector(NamedTuple):
    k1: float
    k2: float


def lqr_gain(weights: LqrWeights) -> GainVector:
    """Infinite-horizon continuous LQR gain for the double integrator."""
    weights.validate()
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0], [1.0]])
    q = np.diag([weights.q1, weights.q2])
    r = np.array([[weights.r]])
    p = scipy.linalg.solve_continuous_are(a, b, q, r)
    k = (b.T @ p) / weights.r
    return GainVector(float(k[0, 0]), float(k[0, 1]))


def control_law(state: PlantState, ref: PlantState, gains: GainVector) -> float:
    """Stabilizing state feedback on the tracking error."""
    return -(gains.k1 * (state.x1 - ref.x1) + gains.k2 * (state.x2 - ref.x2))


@dataclass(frozen=True)
class Reference:
    """Tracking target; amplitude 0 degenerates to regulation at the origin."""

    amplitude: float = 1.0
    frequency: float = 0.4  # Hz

    def validate(self) -> None:
        if self.amplitude < 0.0:
            raise ConfigurationError("reference amplitude must be >= 0")
        if self.frequency < 0.0:
            raise ConfigurationError("reference frequency must be >= 0")

    def state_at(self, t: float) -> PlantState:
        w = 2.0 * math.pi * self.frequency
        return PlantState(
            self.amplitude * math.sin(w * t),
            self.amplitude * w * math.cos(w * t),
        )


@dataclass
class EstimatorState:
    theta: PlantParams
    P: np.ndarray           # 3x3 covariance
    forgetting: float = FORGETTING_DEFAULT


def initial_estimator(T: float, forgetting: float = FORGETTING_DEFAULT,
                      p0: float = P0_SCALE) -> EstimatorState:
    if not (0.0 < forgetting <= 1.0):
        raise ConfigurationError(f"forgetting factor must be in (0, 1], got {forgetting}")
    if not (p0 > 0.0):
        raise ConfigurationError(f"initial covariance scale must be positive, got {p0}")
    return EstimatorState(nominal_params(T), p0 * np.eye(3), forgetting)


def estimator_update(est: EstimatorState, x2_prev: float, u_prev: float,
                     x2_now: float) -> EstimatorState:
    """One recursive least-squares step on x2_now = theta . [x2_prev, u_prev, 1].

    Non-finite inputs are skipped (the sample is dropped, state unchanged); the
    updated theta is clamped into its admissible box; P is re-symmetrized every
    step so rounding cannot accumulate into an indefinite matrix.
    """
    if not (math.isfinite(x2_prev) and math.isfinite(u_prev) and math.isfinite(x2_now)):
        return est
    phi = np.array([x2_prev, u_prev, 1.0])
    p_phi = est.P @ phi
    gain = p_phi / (est.forgetting + float(phi @ p_phi))
    theta_vec = np.array(est.theta, dtype=float)
    innovation = x2_now - float(phi @ theta_vec)
    theta_new = theta_vec + gain * innovation
    p_new = (est.P - np.outer(gain, p_phi)) / est.forgetting
    p_new = (p_new + p_new.T) * 0.5
    theta = clamp_params(PlantParams(*(float(v) for v in theta_new)))
    return EstimatorState(theta, p_new, est.forgetting)


class BufferGapError(LookupError):
    """A strict buffer read hit a tick with no recorded control value."""

    def __init__(self, tick: int):
        super().__init__(f"no control value recorded for tick {tick}")
        self.tick = tick


class ControlBuffer:
    """Tick-indexed record of the control value believed applied at the plant.

    Writes arrive contiguously (each roll covers a span overlapping the last),
    so hold-last lookups only ever walk past pruned edges, never real gaps.
    """

    def __init__(self) -> None:
        self._values: dict[int, float] = {}
        self._min: int | None = None
        self._max: int | None = None

    def __len__(self) -> int:
        return len(self._values)

    def span(self) -> tuple[int, int] | None:
        if self._min is None or self._max is None:
            return None
        return (self._min, self._max)

    def has(self, k: int) -> bool:
        return k in self._values

    def set(self, k: int, u: float) -> None:
        self._values[k] = u
        if self._min is None:
            self._min = self._max = k
        else:
            self._min = min(self._min, k)
            self._max = max(self._max, k)

    def get(self, k: int) -> float:
        try:
            return self._values[k]
        except KeyError:
            raise BufferGapError(k) from None

    def hold_last(self, k: int) -> float:
        """Value at k, or the nearest earlier value, or 0.0 before any write."""
        if self._min is None or k < self._min:
            return 0.0
        if k >= self._max:
            return self._values[self._max]
        probe = k
        while probe >= self._min:
            value = self._values.get(probe)
            if value is not None:
                return value
            probe -= 1
        return 0.0

    def prune(self, before: int) -> None:
        """Drop everything below `before`; keeps memory bounded on long runs."""
        if self._min is None or before <= self._min:
            return
        for k in range(self._min, min(before, self._max + 1)):
            self._values.pop(k, None)
        if not self._values:
            self._min = self._max = None
        else:
            self._min = max(self._min, before)

    def window(self, start: int, count: int) -> tuple[float, ...]:
        """Contiguous window with hold-last fill, suitable for packaging on the wire."""
        return tuple(self.hold_last(k) for k in range(start, start + count))


def _model_step(state: PlantState, u: float, theta: PlantParams, T: float) -> PlantState:
    v_next = theta.theta1 * state.x2 + theta.theta2 * u + theta.theta3
    return PlantState(state.x1 + T * (state.x2 + v_next) * 0.5, v_next)


def _model_step_matrix(state: PlantState, u: float, theta: PlantParams, T: float) -> PlantState:
    # Same affine map written as x' = A x + B u + c; kept separate so the two
    # propagation styles can cross-validate each other.
    a12 = T * (1.0 + theta.theta1) * 0.5
    x1_next = state.x1 + a12 * state.x2 + (T * theta.theta2 * 0.5) * u + T * theta.theta3 * 0.5
    x2_next = theta.theta1 * state.x2 + theta.theta2 * u + theta.theta3
    return PlantState(x1_next, x2_next)


def predict(initial: PlantState, from_tick: int, to_tick: int, buffer: ControlBuffer,
            theta: PlantParams, T: float, *, fill_gaps: bool = False,
            use_matrix: bool = False) -> PlantState:
    """Roll the model from the state at from_tick up to the state at to_tick.

    Consumes the buffered control for every tick in [from_tick, to_tick). A
    strict read raises BufferGapError naming the first missing tick; with
    fill_gaps the most recent earlier value is held (0.0 before any write).
    """
    if to_tick < from_tick:
        raise ConfigurationError(
            f"prediction target {to_tick} precedes start {from_tick}"
        )
    step = _model_step_matrix if use_matrix else _model_step
    state = initial
    for k in range(from_tick, to_tick):
        u = buffer.hold_last(k) if fill_gaps else buffer.get(k)
        state = step(state, u, theta, T)
    return state


@dataclass(frozen=True)
class RttEstimate:
    srtt: float | None = None    # smoothed estimate (s); None until the first sample
    latest: float | None = None  # most recent raw sample (s)


def rtt_update(rtt: RttEstimate, echo_seq: int, echo_hold_time: float,
               send_log: dict[int, int], now: Tick) -> RttEstimate:
    """Fold one piggybacked echo into the smoothed RTT.

    The sample is the controller-clock round trip minus the time the echoed
    packet sat exhausted at the plant; echoes for unknown seqs (already pruned,
    or the zero placeholder) leave the estimate untouched. No remote clock is
    read: both endpoints of the subtraction are controller-local.
    """
    send_tick = send_log.get(echo_seq)
    if send_tick is None:
        return rtt
    sample = max(0.0, (now.k - send_tick) * now.T - echo_hold_time)
    if rtt.srtt is None:
        return RttEstimate(sample, sample)
    return RttEstimate((1.0 - SRTT_GAIN) * rtt.srtt + SRTT_GAIN * sample, sample)


@dataclass(frozen=True)
class ControlUnitConfig:
    T: float = 0.008
    weights: LqrWeights = LqrWeights()
    reference: Reference = Reference()
    horizon: int = 100         # ticks rolled ahead of controller-now
    delay_margin: int = 16     # window length shipped per packet
    pre_window: int = 4        # window ticks placed before the predicted arrival
    reuse_guard: int = 2       # ticks beyond predicted arrival still treated as committed
    use_old_control: bool = True
    use_estimator: bool = True
    use_predictor: bool = True
    use_integrator: bool = True  # False switches prediction to the matrix-form propagation
    nominal_rtt: float = 0.25    # assumed RTT (s) until echoes produce a real estimate
    forgetting: float = FORGETTING_DEFAULT

    def validate(self) -> None:
        if not (self.T > 0.0):
            raise ConfigurationError(f"sample period must be positive, got {self.T}")
        self.weights.validate()
        self.reference.validate()
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        if self.delay_margin < 1:
            raise ConfigurationError(f"delay margin must be >= 1, got {self.delay_margin}")
        if self.horizon < self.delay_margin:
            raise ConfigurationError(
                f"horizon ({self.horizon}) must cover the delay margin ({self.delay_margin})"
            )
        if self.pre_window < 0 or self.reuse_guard < 0:
            raise ConfigurationError("pre_window and reuse_guard must be >= 0")
        if self.nominal_rtt < 0.0:
            raise ConfigurationError("nominal RTT must be >= 0")


# Buffer/send-log retention behind controller-now, in horizons. Generous: old
# entries only serve late echoes and reuse lookups, both of which live well
# inside one horizon.
_RETAIN_HORIZONS = 4


class ControlUnit:
    """Sequential state machine: one state packet in, at most one control packet out.

    Owns the estimator, the RTT tracker, the applied-control buffer, and the
    outgoing sequence numbering. Not thread-safe; callers feed packets one at
    a time in arrival order.
    """

    def __init__(self, cfg: ControlUnitConfig):
        cfg.validate()
        self.cfg = cfg
        self.gains = lqr_gain(cfg.weights)
        self.buffer = ControlBuffer()
        self.estimator = initial_estimator(cfg.T, cfg.forgetting)
        self.rtt = RttEstimate()
        self.send_log: dict[int, int] = {}
        self.sent_windows: dict[int, ControlSequence] = {}
        self.last_rtt_sample: float | None = None
        self.stale_discarded = 0
        self._last_state_seq = 0
        self._prev_packet: StatePacket | None = None
        self._next_seq = 1

    @property
    def theta(self) -> PlantParams:
        if self.cfg.use_estimator:
            return self.estimator.theta
        return nominal_params(self.cfg.T)

    def on_state_packet(self, pkt: StatePacket, now: Tick) -> Optional[ControlPacket]:
        """Ingest one measurement; returns the control packet to send, or None if stale."""
        self.last_rtt_sample = None
        if pkt.seq <= self._last_state_seq:
            self.stale_discarded += 1
            return None
        self._last_state_seq = pkt.seq

        before = self.rtt
        self.rtt = rtt_update(self.rtt, pkt.echo_seq, pkt.echo_hold_time, self.send_log, now)
        if self.rtt is not before:
            self.last_rtt_sample = self.rtt.latest

        prev = self._prev_packet
        if (self.cfg.use_estimator and prev is not None
                and pkt.sample_tick == prev.sample_tick + 1):
            # one-tick-apart samples regress cleanly; across gaps the applied
            # control is not a single value, so those pairs are skipped
            u_prev = self._applied_at(prev.echo_seq, prev.sample_tick)
            if u_prev is None:
                u_prev = self.buffer.hold_last(prev.sample_tick)
            self.estimator = estimator_update(self.estimator, prev.y2, u_prev, pkt.y2)
        self._prev_packet = pkt

        return self._build(pkt, now)

    def _applied_at(self, echo_seq: int, k: int) -> float | None:
        """Exact control the plant applied at tick k, reconstructed from its echo.

        The echoed sequence number names the window the plant was using when it
        selected the control for that tick, and selection is a pure function of
        (window, tick), so replaying it here recovers the applied value without
        guessing from the local plan. Returns None when the echoed window has
        already been pruned from the send log.
        """
        if echo_seq == 0:
            return 0.0  # nothing delivered yet: the plant applies zero
        window = self.sent_windows.get(echo_seq)
        if window is None:
            return None
        last = window.start_tick + len(window.values) - 1
        if k < window.start_tick:
            return window.values[0]
        if k <= last:
            return window.values[k - window.start_tick]
        return window.values[-1]

    def _build(self, pkt: StatePacket, now: Tick) -> ControlPacket:
        cfg = self.cfg
        theta = self.theta
        measured = PlantState(pkt.y1, pkt.y2)

        # Plant-side "now" is never read from a clock: it is estimated as the
        # sample tick plus half the smoothed RTT (the legs cannot be separated
        # without clock sync, so the split is symmetric). The `now` argument
        # only feeds controller-local RTT bookkeeping.
        if cfg.use_predictor:
            srtt = self.rtt.srtt if self.rtt.srtt is not None else cfg.nominal_rtt
            half_ticks = round(srtt * 0.5 / cfg.T)
        else:
            # compensation off: act as if the measurement were current and the
            # network free, shipping the window from the sample tick itself
            half_ticks = 0
        now_k = pkt.sample_tick + half_ticks

        # Ticks <= now_k are history: the plant has already acted on them, so the
        # roll below only writes from now_k + 1 and prediction consumes what the
        # buffer says was (or will have been) applied.
        state = predict(measured, pkt.sample_tick, now_k + 1, self.buffer, theta, cfg.T,
                        fill_gaps=True, use_matrix=not cfg.use_integrator)

        arrival_k = now_k + half_ticks
        pre = min(cfg.pre_window, cfg.delay_margin - 1)
        start_k = max(0, arrival_k - pre)
        reuse = cfg.use_old_control and cfg.use_predictor
        commit_k = arrival_k + cfg.reuse_guard if reuse else now_k + 1

        step = _model_step if cfg.use_integrator else _model_step_matrix
        for j in range(now_k + 1, now_k + cfg.horizon + 1):
            if j < commit_k and self.buffer.has(j):
                u = self.buffer.get(j)  # committed: plant may already hold this value
            else:
                u = control_law(state, cfg.reference.state_at(j * cfg.T), self.gains)
                self.buffer.set(j, u)
            state = step(state, u, theta, cfg.T)

        out = ControlPacket(
            seq=self._next_seq,
            based_on_state_seq=pkt.seq,
            sequence=ControlSequence(start_k, self.buffer.window(start_k, cfg.delay_margin)),
            send_tick=now.k,
        )
        self._next_seq += 1
        self.send_log[out.seq] = now.k
        self.sent_windows[out.seq] = out.sequence

        floor = now_k - _RETAIN_HORIZONS * cfg.horizon
        self.buffer.prune(floor)
        if len(self.send_log) > 4 * _RETAIN_HORIZONS * cfg.horizon:
            for seq in [s for s, k in self.send_log.items() if k < floor]:
                del self.send_log[seq]
                self.sent_windows.pop(seq, None)
        return out
