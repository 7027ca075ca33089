"""Plant-side delay compensator.

Keeps exactly the newest control window (by sequence number, so reordered or
duplicated deliveries cannot roll the plant backwards) and answers every tick
with a value: the indexed entry inside the window, the first entry before it,
or the last entry held once the window is exhausted. Hold time is reported so
the controller can subtract it from echoed round-trip samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .domain import ControlPacket, Tick


@dataclass
class CompensatorStats:
    accepted: int = 0
    stale_discarded: int = 0
    hold_ticks: int = 0  # ticks answered past the end of the current window


@dataclass
class DelayCompensator:
    """Single-owner state machine; one mutator thread at a time."""

    current: ControlPacket | None = None
    last_applied: float = 0.0
    last_hold_time: float = 0.0
    hold_start_tick: int | None = None
    stats: CompensatorStats = field(default_factory=CompensatorStats)

    def on_control_packet(self, pkt: ControlPacket) -> bool:
        """Adopt pkt if it is newer than the current window; returns True if adopted."""
        if self.current is not None and pkt.seq <= self.current.seq:
            self.stats.stale_discarded += 1
            return False
        self.current = pkt
        self.last_hold_time = 0.0
        self.hold_start_tick = None
        self.stats.accepted += 1
        return True

    def select_control(self, now: Tick) -> tuple[float, float]:
        """(value to apply at `now`, seconds the window has been exhausted).

        Total: always returns, packet or not. Before the window starts the
        first value applies (hold 0); past the end the last value is held and
        the hold time counts from the first uncovered tick.
        """
        pkt = self.current
        if pkt is None:
            u, hold = 0.0, 0.0
        else:
            start = pkt.sequence.start_tick
            values = pkt.sequence.values
            last_covered = start + len(values) - 1
            if now.k < start:
                u, hold = values[0], 0.0
            elif now.k <= last_covered:
                u, hold = values[now.k - start], 0.0
                self.hold_start_tick = None
            else:
                u = values[-1]
                hold = (now.k - last_covered) * now.T
                if self.hold_start_tick is None:
                    self.hold_start_tick = last_covered + 1
                self.stats.hold_ticks += 1
        self.last_applied = u
        self.last_hold_time = hold
        return u, hold

    def echo(self) -> tuple[int, float]:
        """(seq of the current window, its hold time at the last select); (0, 0.0) before any packet."""
        if self.current is None:
            return 0, 0.0
        return self.current.seq, self.last_hold_time
