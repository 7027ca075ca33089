"""User-space UDP impairment relay.

Sits between the plant and the controller, applying the same seeded
delay/loss/capacity model the offline engine uses, so real-time runs are
impaired reproducibly without touching OS network emulation. One ingress
thread per direction stamps arrivals; a release thread sends each surviving
datagram at its due time (time-ordered, so release jitter stays at timer
resolution rather than queue depth).
"""

from __future__ import annotations

import heapq
import socket
import threading
import time
from dataclasses import dataclass, field

from .channel import ChannelConfig, DelayFnConfig, transmit
from .domain import derive_stream, derive_subseed

Endpoint = tuple[str, int]


@dataclass(frozen=True)
class RelayConfig:
    """Per-direction impairment; both directions get the same profile, distinct streams."""

    base_delay_s: float = 0.125
    deviation_s: float = 0.0
    base_freq: float = 0.4
    sub_freqs: int = 20
    loss: float = 0.0
    capacity_bps: float = 25e6  # 0 = unlimited
    seed: int = 0

    def channel(self, direction: str) -> ChannelConfig:
        ch = ChannelConfig(
            delay=DelayFnConfig(
                a0=self.base_delay_s,
                dev=self.deviation_s,
                f0=self.base_freq,
                n=self.sub_freqs,
                seed=derive_subseed(self.seed, f"delay-phases-{direction}"),
            ),
            loss_prob=self.loss,
            capacity_bps=self.capacity_bps,
            seed=derive_subseed(self.seed, f"loss-{direction}"),
        )
        ch.validate()
        return ch


@dataclass
class RelayStats:
    received: dict[str, int] = field(default_factory=lambda: {"forward": 0, "feedback": 0})
    dropped: dict[str, int] = field(default_factory=lambda: {"forward": 0, "feedback": 0})
    released: dict[str, int] = field(default_factory=lambda: {"forward": 0, "feedback": 0})


class ImpairmentRelay:
    """Two bound UDP sockets; peers either configured or learned from ingress traffic."""

    def __init__(self, cfg: RelayConfig, plant_listen: Endpoint, controller_listen: Endpoint,
                 plant_peer: Endpoint | None = None, controller_peer: Endpoint | None = None):
        self.cfg = cfg
        self.stats = RelayStats()
        self._peers: dict[str, Endpoint | None] = {
            "plant": plant_peer,
            "controller": controller_peer,
        }
        self._channels = {
            "forward": cfg.channel("forward"),    # controller -> plant
            "feedback": cfg.channel("feedback"),  # plant -> controller
        }
        self._loss_rngs = {
            direction: derive_stream(self._channels[direction].seed, "loss")
            for direction in ("forward", "feedback")
        }
        self._plant_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._plant_sock.bind(plant_listen)
        self._ctrl_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._ctrl_sock.bind(controller_listen)
        for sock in (self._plant_sock, self._ctrl_sock):
            sock.settimeout(0.2)
        self._t0 = time.monotonic()
        self._queue: list[tuple[float, int, str, bytes]] = []  # (due, serial, direction, data)
        self._serial = 0
        self._cond = threading.Condition()
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []

    @property
    def plant_address(self) -> Endpoint:
        return self._plant_sock.getsockname()

    @property
    def controller_address(self) -> Endpoint:
        return self._ctrl_sock.getsockname()

    def start(self) -> None:
        self._threads = [
            threading.Thread(target=self._ingress, daemon=True,
                             args=(self._plant_sock, "feedback", "plant")),
            threading.Thread(target=self._ingress, daemon=True,
                             args=(self._ctrl_sock, "forward", "controller")),
            threading.Thread(target=self._release_loop, daemon=True),
        ]
        for thread in self._threads:
            thread.start()

    def stop(self) -> None:
        self._stop.set()
        with self._cond:
            self._cond.notify_all()
        for thread in self._threads:
            thread.join(timeout=2.0)
        self._plant_sock.close()
        self._ctrl_sock.close()

    def __enter__(self) -> "ImpairmentRelay":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    def _ingress(self, sock: socket.socket, direction: str, source: str) -> None:
        while not self._stop.is_set():
            try:
                data, addr = sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                return
            self._peers[source] = addr  # learn/refresh the sender's address
            self.stats.received[direction] += 1
            now = time.monotonic() - self._t0
            arrival = transmit(self._channels[direction], data, now, self._loss_rngs[direction])
            if arrival is None:
                self.stats.dropped[direction] += 1
                continue
            with self._cond:
                heapq.heappush(self._queue, (self._t0 + arrival, self._serial, direction, data))
                self._serial += 1
                self._cond.notify()

    def _release_loop(self) -> None:
        while not self._stop.is_set():
            with self._cond:
                while not self._queue and not self._stop.is_set():
                    self._cond.wait(timeout=0.2)
                if self._stop.is_set():
                    return
                due = self._queue[0][0]
                wait = due - time.monotonic()
                if wait > 0:
                    self._cond.wait(timeout=min(wait, 0.2))
                    continue
                _, _, direction, data = heapq.heappop(self._queue)
            self._send(direction, data)

    def _send(self, direction: str, data: bytes) -> None:
        # destination resolved at release time, so late address learning still applies
        if direction == "forward":
            dest, sock = self._peers["plant"], self._plant_sock
        else:
            dest, sock = self._peers["controller"], self._ctrl_sock
        if dest is None:
            return
        try:
            sock.sendto(data, dest)
            self.stats.released[direction] += 1
        except OSError:
            pass

    def run(self, duration: float | None) -> None:
        """Serve until duration elapses (None = until interrupted)."""
        self.start()
        try:
            if duration is None:
                while True:
                    time.sleep(0.5)
            else:
                deadline = time.monotonic() + duration
                while time.monotonic() < deadline:
                    time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()
