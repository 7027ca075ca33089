"""Offline closed-loop experiment engine.

A discrete-event simulation couples the plant, both impaired channels, and the
control unit on one virtual clock. Plant ticks fire every T seconds; packet
arrivals fire at their channel-computed times; a same-instant tie always goes
to the plant tick first, then to arrivals in insertion (sequence) order. The
ideal baseline (same noise, same drift, direct loop, no network) runs inline
so every tick record carries its ideal twin.
"""

from __future__ import annotations

import heapq
import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from .channel import ChannelConfig, DelayFnConfig, transmit
from .compensator import DelayCompensator
from .control import (
    ControlUnit,
    ControlUnitConfig,
    LqrWeights,
    Reference,
    control_law,
    lqr_gain,
)
from .domain import (
    POSITION_LIMIT,
    ConfigurationError,
    PlantState,
    StatePacket,
    Tick,
    decode_control_packet,
    decode_state_packet,
    derive_stream,
    derive_subseed,
    encode_control_packet,
    encode_state_packet,
    tick_floor,
)
from .plant import PlantConfig, measure, plant_step, true_params

_PRIO_TICK = 0
_PRIO_ARRIVAL = 1


class TickRecord(NamedTuple):
    k: int
    t: float
    x1: float
    x2: float
    u: float
    x1_ideal: float
    x2_ideal: float
    hold: float
    rtt: float | None  # raw sample logged at the tick it measured, None elsewhere


class PacketRecord(NamedTuple):
    direction: str        # "forward" (controller->plant) or "feedback" (plant->controller)
    seq: int
    send_time: float
    arrival: float | None  # None = dropped by the channel
    size_bytes: int


class EstimateRecord(NamedTuple):
    k: int
    theta1: float
    theta2: float
    theta3: float


@dataclass
class TrajectoryLog:
    T: float
    duration: float
    warmup_skip: float
    ticks: list[TickRecord] = field(default_factory=list)
    packets: list[PacketRecord] = field(default_factory=list)
    estimates: list[EstimateRecord] = field(default_factory=list)
    unstable: bool = False
    meta: dict = field(default_factory=dict)


def _default_channel() -> ChannelConfig:
    # 125 ms base per direction with 100 ms worst-case wander: mean RTT 250 ms.
    return ChannelConfig(delay=DelayFnConfig(a0=0.125, dev=0.1))


@dataclass(frozen=True)
class ExperimentConfig:
    duration: float = 60.0
    warmup_skip: float = 5.0        # seconds excluded from scoring at the front
    master_seed: int = 42
    plant: PlantConfig = PlantConfig()
    weights: LqrWeights = LqrWeights()
    reference: Reference = Reference()
    forward: ChannelConfig = field(default_factory=_default_channel)
    feedback: ChannelConfig = field(default_factory=_default_channel)
    horizon: int = 100
    delay_margin: int = 16
    pre_window: int = 4
    reuse_guard: int = 2
    use_old_control: bool = True
    use_estimator: bool = True
    use_predictor: bool = True
    use_integrator: bool = True
    nominal_rtt: float = 0.25
    initial_x1: float = 0.0
    initial_x2: float = 0.0

    def validate(self) -> None:
        if not (self.duration > 0.0) or not math.isfinite(self.duration):
            raise ConfigurationError(f"duration must be positive, got {self.duration}")
        if not (0.0 <= self.warmup_skip < self.duration):
            raise ConfigurationError(
                f"warmup skip must lie inside the run, got {self.warmup_skip}"
            )
        self.plant.validate()
        self.forward.validate()
        self.feedback.validate()
        self.control_unit_config().validate()
        n_ticks = int(round(self.duration / self.plant.T))
        if n_ticks > 10**8:
            raise ConfigurationError(f"run of {n_ticks} ticks exceeds supported length")

    def control_unit_config(self) -> ControlUnitConfig:
        return ControlUnitConfig(
            T=self.plant.T,
            weights=self.weights,
            reference=self.reference,
            horizon=self.horizon,
            delay_margin=self.delay_margin,
            pre_window=self.pre_window,
            reuse_guard=self.reuse_guard,
            use_old_control=self.use_old_control,
            use_estimator=self.use_estimator,
            use_predictor=self.use_predictor,
            use_integrator=self.use_integrator,
            nominal_rtt=self.nominal_rtt,
        )

    def n_ticks(self) -> int:
        return int(round(self.duration / self.plant.T))


def resolve_channel(cfg: ChannelConfig, master_seed: int, direction: str) -> ChannelConfig:
    """Fill unset per-direction seeds from the master seed, deterministically."""
    delay = cfg.delay
    if delay.seed is None:
        delay = replace(delay, seed=derive_subseed(master_seed, f"delay-phases-{direction}"))
    seed = cfg.seed
    if seed is None:
        seed = derive_subseed(master_seed, f"loss-{direction}")
    return replace(cfg, delay=delay, seed=seed)


def _simulate_ideal(cfg: ExperimentConfig) -> list[tuple[float, float, float]]:
    """Direct-loop baseline: same noise stream, same drifting plant, no network.

    Returns one (x1, x2, u) triple per tick; the measurement consumed at tick k
    is draw-for-draw aligned with the networked run's measurement at tick k.
    """
    rng = derive_stream(cfg.master_seed, "noise")
    gains = lqr_gain(cfg.weights)
    T = cfg.plant.T
    x = PlantState(cfg.initial_x1, cfg.initial_x2)
    rows: list[tuple[float, float, float]] = []
    for k in range(cfg.n_ticks()):
        t = k * T
        y1, y2 = measure(x, rng, cfg.plant)
        u = control_law(PlantState(y1, y2), cfg.reference.state_at(t), gains)
        rows.append((x.x1, x.x2, u))
        x = plant_step(x, u, true_params(t, cfg.plant), T)
        if not (x.is_finite() and abs(x.x1) < POSITION_LIMIT):
            raise ArithmeticError(f"ideal baseline diverged at tick {k}; config is unusable")
    return rows


def run_ideal(cfg: ExperimentConfig) -> TrajectoryLog:
    """The baseline as a standalone log; ideal columns duplicate the actual ones."""
    cfg.validate()
    T = cfg.plant.T
    log = TrajectoryLog(T=T, duration=cfg.duration, warmup_skip=cfg.warmup_skip)
    for k, (x1, x2, u) in enumerate(_simulate_ideal(cfg)):
        log.ticks.append(TickRecord(k, k * T, x1, x2, u, x1, x2, 0.0, None))
    return log


def run_offline(cfg: ExperimentConfig) -> TrajectoryLog:
    """Run the full networked loop for cfg.duration of virtual time."""
    cfg.validate()
    T = cfg.plant.T
    n_ticks = cfg.n_ticks()
    end_time = (n_ticks - 1) * T + 0.25 * T  # nothing after the last tick can matter

    forward = resolve_channel(cfg.forward, cfg.master_seed, "forward")
    feedback = resolve_channel(cfg.feedback, cfg.master_seed, "feedback")
    loss_fwd = derive_stream(forward.seed, "loss")
    loss_fb = derive_stream(feedback.seed, "loss")
    noise = derive_stream(cfg.master_seed, "noise")

    ideal = _simulate_ideal(cfg)
    unit = ControlUnit(cfg.control_unit_config())
    comp = DelayCompensator()
    log = TrajectoryLog(T=T, duration=cfg.duration, warmup_skip=cfg.warmup_skip)
    rtt_samples: dict[int, float] = {}

    x = PlantState(cfg.initial_x1, cfg.initial_x2)
    state_seq = 1
    serial = 0  # insertion order; breaks same-time, same-priority ties deterministically
    heap: list[tuple[float, int, int, str, object]] = []
    heapq.heappush(heap, (0.0, _PRIO_TICK, serial, "tick", 0))
    serial += 1

    while heap:
        time_s, _prio, _serial, kind, payload = heapq.heappop(heap)
        if time_s > end_time:
            break

        if kind == "tick":
            k = payload
            now = Tick(k, T)
            u, hold = comp.select_control(now)
            echo_seq, echo_hold = comp.echo()
            y1, y2 = measure(x, noise, cfg.plant)
            wire = encode_state_packet(StatePacket(state_seq, k, y1, y2, echo_seq, echo_hold))
            arrival = transmit(feedback, wire, time_s, loss_fb)
            log.packets.append(PacketRecord("feedback", state_seq, time_s, arrival, len(wire)))
            if arrival is not None:
                heapq.heappush(heap, (arrival, _PRIO_ARRIVAL, serial, "at-controller", wire))
                serial += 1
            state_seq += 1

            ideal_x1, ideal_x2, _ = ideal[k]
            log.ticks.append(TickRecord(k, k * T, x.x1, x.x2, u, ideal_x1, ideal_x2, hold, None))

            x = plant_step(x, u, true_params(k * T, cfg.plant), T)
            if not (x.is_finite() and abs(x.x1) < POSITION_LIMIT):
                log.unstable = True
                break
            if k + 1 < n_ticks:
                heapq.heappush(heap, ((k + 1) * T, _PRIO_TICK, serial, "tick", k + 1))
                serial += 1

        elif kind == "at-controller":
            pkt = decode_state_packet(payload)
            now = Tick(tick_floor(time_s, T), T)
            out = unit.on_state_packet(pkt, now)
            if unit.last_rtt_sample is not None:
                rtt_samples[pkt.sample_tick] = unit.last_rtt_sample
            if out is not None:
                log.estimates.append(EstimateRecord(pkt.sample_tick, *unit.theta))
                wire = encode_control_packet(out)
                arrival = transmit(forward, wire, time_s, loss_fwd)
                log.packets.append(PacketRecord("forward", out.seq, time_s, arrival, len(wire)))
                if arrival is not None:
                    heapq.heappush(heap, (arrival, _PRIO_ARRIVAL, serial, "at-plant", wire))
                    serial += 1

        else:  # at-plant
            comp.on_control_packet(decode_control_packet(payload))

    if rtt_samples:
        log.ticks = [
            rec if rec.k not in rtt_samples else rec._replace(rtt=rtt_samples[rec.k])
            for rec in log.ticks
        ]
    log.meta["srtt_final"] = unit.rtt.srtt
    log.meta["stale_discarded"] = unit.stale_discarded + comp.stats.stale_discarded
    return log


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(value)


def write_trajectory_csv(log: TrajectoryLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("k,t,x1,x2,u,x1_ideal,x2_ideal,hold,rtt\n")
        for r in log.ticks:
            fh.write(
                f"{r.k},{r.t!r},{r.x1!r},{r.x2!r},{r.u!r},"
                f"{r.x1_ideal!r},{r.x2_ideal!r},{r.hold!r},{_fmt(r.rtt)}\n"
            )


def write_packets_csv(log: TrajectoryLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("direction,seq,send_time,arrival,size_bytes\n")
        for p in log.packets:
            fh.write(f"{p.direction},{p.seq},{p.send_time!r},{_fmt(p.arrival)},{p.size_bytes}\n")


def write_estimates_csv(log: TrajectoryLog, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("k,theta1,theta2,theta3\n")
        for e in log.estimates:
            fh.write(f"{e.k},{e.theta1!r},{e.theta2!r},{e.theta3!r}\n")


def write_summary_json(summary: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_trajectory_csv(path: str) -> list[TickRecord]:
    rows: list[TickRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "k,t,x1,x2,u,x1_ideal,x2_ideal,hold,rtt":
            raise ConfigurationError(f"{path}: unexpected trajectory header {header!r}")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append(TickRecord(
                int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]),
                float(parts[4]), float(parts[5]), float(parts[6]), float(parts[7]),
                float(parts[8]) if parts[8] else None,
            ))
    return rows


def read_packets_csv(path: str) -> list[PacketRecord]:
    rows: list[PacketRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "direction,seq,send_time,arrival,size_bytes":
            raise ConfigurationError(f"{path}: unexpected packet header {header!r}")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append(PacketRecord(
                parts[0], int(parts[1]), float(parts[2]),
                float(parts[3]) if parts[3] else None, int(parts[4]),
            ))
    return rows


def write_run_outputs(log: TrajectoryLog, summary: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_trajectory_csv(log, os.path.join(out_dir, "trajectory.csv"))
    write_packets_csv(log, os.path.join(out_dir, "packets.csv"))
    write_estimates_csv(log, os.path.join(out_dir, "estimates.csv"))
    write_summary_json(summary, os.path.join(out_dir, "summary.json"))
