"""Shared vocabulary: tick clock, plant state, packet records, wire codecs, seeded streams.

Everything here is deliberately dependency-free (stdlib only) so both simulator
and real-time processes import the same small core.
"""

from __future__ import annotations

import hashlib
import math
import random
import struct
from dataclasses import dataclass
from typing import NamedTuple

WIRE_VERSION = 0x01

# Divergence guard: a position beyond this is treated as a blown-up run.
POSITION_LIMIT = 1e6

# Estimator clamp box: theta1 in (0, 2) keeps the velocity recursion stable-ish,
# theta2 > 0 keeps actuation direction well defined.
THETA1_MIN = 1e-6
THETA1_MAX = 2.0 - 1e-6
THETA2_MIN = 1e-9

ControlValue = float


class ConfigurationError(ValueError):
    """A configuration value violates its documented range or relationship."""


class DecodeError(ValueError):
    """A datagram failed structural validation (version, length, or count)."""


@dataclass(frozen=True)
class Tick:
    """Sample index ``k`` on a fixed-period clock.

    Wall time is always recomputed as ``k * T`` rather than accumulated, so the
    clock never drifts no matter how many ticks elapse.
    """

    k: int
    T: float

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ConfigurationError(f"tick index must be >= 0, got {self.k}")
        if not (self.T > 0.0) or not math.isfinite(self.T):
            raise ConfigurationError(f"sample period must be positive, got {self.T}")

    @property
    def t(self) -> float:
        return self.k * self.T

    def plus(self, steps: int) -> "Tick":
        return Tick(self.k + steps, self.T)


def tick_floor(time_s: float, T: float) -> int:
    """Largest tick index whose time is <= time_s, tolerant of ulp noise at boundaries."""
    if time_s < 0.0:
        return 0
    return int(math.floor(time_s / T + 1e-9))


class PlantState(NamedTuple):
    x1: float  # position (m)
    x2: float  # velocity (m/s)

    def is_finite(self) -> bool:
        return math.isfinite(self.x1) and math.isfinite(self.x2)


class PlantParams(NamedTuple):
    """Velocity-channel coefficients: x2' = theta1*x2 + theta2*u + theta3."""

    theta1: float
    theta2: float
    theta3: float


def nominal_params(T: float) -> PlantParams:
    """Parameters of the undisturbed discretized double integrator."""
    return PlantParams(1.0, T, 0.0)


def clamp_params(p: PlantParams) -> PlantParams:
    """Project parameters into the admissible box (used after estimator updates)."""
    return PlantParams(
        min(max(p.theta1, THETA1_MIN), THETA1_MAX),
        max(p.theta2, THETA2_MIN),
        p.theta3,
    )


class StatePacket(NamedTuple):
    """Plant -> controller sample, with piggybacked RTT echo of the newest control packet."""

    seq: int            # starts at 1, increments every emission
    sample_tick: int    # plant tick at which (y1, y2) was measured
    y1: float
    y2: float
    echo_seq: int       # newest control packet seq seen by the plant; 0 = none yet
    echo_hold_time: float  # seconds that packet spent exhausted (held) at the plant


class ControlSequence(NamedTuple):
    """Contiguous window of control values; values[i] applies at tick start_tick + i."""

    start_tick: int
    values: tuple[float, ...]


class ControlPacket(NamedTuple):
    """Controller -> plant redundant control window."""

    seq: int
    based_on_state_seq: int
    sequence: ControlSequence
    send_tick: int  # controller-local tick at emission (echoed timing only, never compared cross-host)


# Wire layout, little-endian, frozen. One datagram per packet, no fragmentation.
#   state:   version u8 | seq u32 | sampleTick u64 | y1 f64 | y2 f64 | echoSeq u32 | echoHoldTime f64
#   control: version u8 | seq u32 | basedOnStateSeq u32 | startTick u64 | sendTick u64 |
#            count u16 | count * f64
_STATE_FMT = "<BIQddId"
_CONTROL_HEAD_FMT = "<BIIQQH"

STATE_PACKET_BYTES = struct.calcsize(_STATE_FMT)          # 41
CONTROL_HEADER_BYTES = struct.calcsize(_CONTROL_HEAD_FMT)  # 27


def control_packet_bytes(count: int) -> int:
    return CONTROL_HEADER_BYTES + 8 * count


def encode_state_packet(pkt: StatePacket) -> bytes:
    return struct.pack(
        _STATE_FMT,
        WIRE_VERSION,
        pkt.seq,
        pkt.sample_tick,
        pkt.y1,
        pkt.y2,
        pkt.echo_seq,
        pkt.echo_hold_time,
    )


def decode_state_packet(data: bytes) -> StatePacket:
    if len(data) != STATE_PACKET_BYTES:
        raise DecodeError(f"state packet must be {STATE_PACKET_BYTES} bytes, got {len(data)}")
    version, seq, sample_tick, y1, y2, echo_seq, echo_hold = struct.unpack(_STATE_FMT, data)
    if version != WIRE_VERSION:
        raise DecodeError(f"unsupported wire version {version:#04x}")
    return StatePacket(seq, sample_tick, y1, y2, echo_seq, echo_hold)


def encode_control_packet(pkt: ControlPacket) -> bytes:
    values = pkt.sequence.values
    head = struct.pack(
        _CONTROL_HEAD_FMT,
        WIRE_VERSION,
        pkt.seq,
        pkt.based_on_state_seq,
        pkt.sequence.start_tick,
        pkt.send_tick,
        len(values),
    )
    return head + struct.pack(f"<{len(values)}d", *values)


def decode_control_packet(data: bytes) -> ControlPacket:
    if len(data) < CONTROL_HEADER_BYTES:
        raise DecodeError(f"control packet shorter than header ({len(data)} bytes)")
    version, seq, based_on, start_tick, send_tick, count = struct.unpack_from(
        _CONTROL_HEAD_FMT, data
    )
    if version != WIRE_VERSION:
        raise DecodeError(f"unsupported wire version {version:#04x}")
    if len(data) != control_packet_bytes(count):
        raise DecodeError(
            f"control packet with count={count} must be {control_packet_bytes(count)} bytes,"
            f" got {len(data)}"
        )
    values = struct.unpack_from(f"<{count}d", data, CONTROL_HEADER_BYTES)
    return ControlPacket(seq, based_on, ControlSequence(start_tick, values), send_tick)


class SeededRng:
    """Deterministic draw stream named by (seed, label).

    Distinct labels under one seed give statistically independent streams; the
    same (seed, label) pair always replays the same sequence, on any platform.
    Gaussians come from the Marsaglia polar transform over the label's uniform
    stream (bit-stable across Python builds, unlike library normal variants).
    """

    def __init__(self, seed: int, label: str):
        if not label:
            raise ConfigurationError("stream label must be non-empty")
        self.seed = seed
        self.label = label
        self._rng = random.Random(derive_subseed(seed, label))
        self._spare: float | None = None

    def uniform(self) -> float:
        """One draw from U[0, 1)."""
        return self._rng.random()

    def normal(self) -> float:
        """One draw from N(0, 1)."""
        if self._spare is not None:
            value, self._spare = self._spare, None
            return value
        while True:
            a = 2.0 * self._rng.random() - 1.0
            b = 2.0 * self._rng.random() - 1.0
            s = a * a + b * b
            if 0.0 < s < 1.0:
                break
        scale = math.sqrt(-2.0 * math.log(s) / s)
        self._spare = b * scale
        return a * scale


def derive_subseed(seed: int, label: str) -> int:
    """Collision-resistant child seed for (seed, label); stable across runs and hosts."""
    digest = hashlib.sha256(f"{seed}|{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_stream(seed: int, label: str) -> SeededRng:
    return SeededRng(seed, label)
