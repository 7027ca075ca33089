"""Wall-clock mode: the same loop split into real processes over UDP.

The plant process runs a timer-driven tick loop at the configured sample
period; the controller process reacts to state datagrams; the impairment relay
sits between them. Plant-side and controller-side clocks are never compared:
all cross-site timing flows through the RTT echo, exactly as offline. The
plant-side log is authoritative; the controller's RTT samples and estimates
are merged in afterwards by sample tick.
"""

from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
import time

from .compensator import DelayCompensator
from .config import RealtimeProfile, write_config
from .control import ControlUnit
from .domain import (
    POSITION_LIMIT,
    DecodeError,
    PlantState,
    StatePacket,
    Tick,
    decode_control_packet,
    decode_state_packet,
    derive_stream,
    encode_control_packet,
    encode_state_packet,
    tick_floor,
)
from .engine import (
    EstimateRecord,
    ExperimentConfig,
    PacketRecord,
    TickRecord,
    TrajectoryLog,
    _simulate_ideal,
    read_packets_csv,
    read_trajectory_csv,
    write_estimates_csv,
    write_packets_csv,
    write_summary_json,
    write_trajectory_csv,
)
from .metrics import bandwidth_bps, rss
from .plant import measure, plant_step, true_params

Endpoint = tuple[str, int]

HELLO = b"\x00"  # primes relay address learning before the first real packet

# A tick is "missed" when it starts more than one full period late.
_CONTROLLER_GRACE = 15.0
_CONTROLLER_IDLE_EXIT = 2.0


def run_plant(cfg: ExperimentConfig, listen: Endpoint, peer: Endpoint,
              out_dir: str) -> TrajectoryLog:
    """The plant role: tick loop, compensator, state emission. Writes plant outputs."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    T = cfg.plant.T
    n_ticks = cfg.n_ticks()
    noise = derive_stream(cfg.master_seed, "noise")
    ideal = _simulate_ideal(cfg)
    comp = DelayCompensator()
    log = TrajectoryLog(T=T, duration=cfg.duration, warmup_skip=cfg.warmup_skip)

    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(listen)
    sock.setblocking(False)

    x = PlantState(cfg.initial_x1, cfg.initial_x2)
    missed = 0
    max_late = 0.0
    state_seq = 1
    t0 = time.monotonic()
    try:
        for k in range(n_ticks):
            target = t0 + k * T
            while True:
                remaining = target - time.monotonic()
                if remaining <= 0.0:
                    break
                time.sleep(remaining)
            late = time.monotonic() - target
            if late > max_late:
                max_late = late
            if late > T:
                missed += 1

            for _ in range(64):  # drain; at 125 packets/s this is ~1 datagram
                try:
                    data, _addr = sock.recvfrom(65535)
                except (BlockingIOError, InterruptedError):
                    break
                except OSError:
                    break
                try:
                    comp.on_control_packet(decode_control_packet(data))
                except DecodeError:
                    continue  # hellos and strays are dropped silently

            now = Tick(k, T)
            u, hold = comp.select_control(now)
            echo_seq, echo_hold = comp.echo()
            y1, y2 = measure(x, noise, cfg.plant)
            wire = encode_state_packet(StatePacket(state_seq, k, y1, y2, echo_seq, echo_hold))
            try:
                sock.sendto(wire, peer)
            except OSError:
                pass
            log.packets.append(PacketRecord("feedback", state_seq, k * T, None, len(wire)))
            state_seq += 1

            ideal_x1, ideal_x2, _ = ideal[k]
            log.ticks.append(TickRecord(k, k * T, x.x1, x.x2, u, ideal_x1, ideal_x2, hold, None))

            x = plant_step(x, u, true_params(k * T, cfg.plant), T)
            if not (x.is_finite() and abs(x.x1) < POSITION_LIMIT):
                log.unstable = True
                break
    finally:
        sock.close()

    log.meta.update(
        missed_deadlines=missed,
        max_lateness=max_late,
        ticks_completed=len(log.ticks),
        state_packets_sent=state_seq - 1,
        control_packets_accepted=comp.stats.accepted,
        control_packets_stale=comp.stats.stale_discarded,
    )
    write_trajectory_csv(log, os.path.join(out_dir, "trajectory.csv"))
    write_packets_csv(log, os.path.join(out_dir, "packets.csv"))
    with open(os.path.join(out_dir, "plant.json"), "w", encoding="utf-8") as fh:
        json.dump({"unstable": log.unstable, **log.meta}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return log


def run_controller(cfg: ExperimentConfig, listen: Endpoint, peer: Endpoint,
                   out_dir: str) -> dict:
    """The controller role: reacts to state datagrams. Writes controller outputs."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    T = cfg.plant.T
    unit = ControlUnit(cfg.control_unit_config())
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(listen)
    sock.settimeout(0.2)

    rtt_rows: list[tuple[int, float, float]] = []
    estimates: list[EstimateRecord] = []
    packets: list[PacketRecord] = []
    processed = 0
    sent = 0
    t0 = time.monotonic()
    deadline = t0 + cfg.duration + _CONTROLLER_GRACE
    last_rx: float | None = None
    last_hello = 0.0
    try:
        while True:
            now_s = time.monotonic()
            if now_s > deadline:
                break
            if last_rx is None and now_s - last_hello > 0.3:
                try:
                    sock.sendto(HELLO, peer)
                except OSError:
                    pass
                last_hello = now_s
            if last_rx is not None and now_s - last_rx > _CONTROLLER_IDLE_EXIT:
                break
            try:
                data, _addr = sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                pkt = decode_state_packet(data)
            except DecodeError:
                continue
            last_rx = time.monotonic()
            now = Tick(tick_floor(last_rx - t0, T), T)
            out = unit.on_state_packet(pkt, now)
            processed += 1
            if unit.last_rtt_sample is not None and unit.rtt.srtt is not None:
                rtt_rows.append((pkt.sample_tick, unit.last_rtt_sample, unit.rtt.srtt))
            if out is not None:
                estimates.append(EstimateRecord(pkt.sample_tick, *unit.theta))
                wire = encode_control_packet(out)
                try:
                    sock.sendto(wire, peer)
                except OSError:
                    pass
                packets.append(PacketRecord("forward", out.seq, now.t, None, len(wire)))
                sent += 1
    finally:
        sock.close()

    meta = {
        "srtt_final": unit.rtt.srtt,
        "state_packets_processed": processed,
        "state_packets_stale": unit.stale_discarded,
        "control_packets_sent": sent,
    }
    with open(os.path.join(out_dir, "rtt.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("k,sample,srtt\n")
        for k, sample, srtt in rtt_rows:
            fh.write(f"{k},{sample!r},{srtt!r}\n")
    shell = TrajectoryLog(T=T, duration=cfg.duration, warmup_skip=cfg.warmup_skip,
                          packets=packets, estimates=estimates)
    write_packets_csv(shell, os.path.join(out_dir, "packets.csv"))
    write_estimates_csv(shell, os.path.join(out_dir, "estimates.csv"))
    with open(os.path.join(out_dir, "controller.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return meta


def merge_realtime_outputs(cfg: ExperimentConfig, out_dir: str) -> tuple[TrajectoryLog, dict]:
    """Combine plant-side (authoritative) and controller-side logs into one run record."""
    plant_dir = os.path.join(out_dir, "plant")
    ctrl_dir = os.path.join(out_dir, "controller")
    with open(os.path.join(plant_dir, "plant.json"), "r", encoding="utf-8") as fh:
        plant_meta = json.load(fh)
    with open(os.path.join(ctrl_dir, "controller.json"), "r", encoding="utf-8") as fh:
        ctrl_meta = json.load(fh)

    samples: dict[int, float] = {}
    rtt_path = os.path.join(ctrl_dir, "rtt.csv")
    with open(rtt_path, "r", encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split(",")
            samples[int(parts[0])] = float(parts[1])

    ticks = [
        rec if rec.k not in samples else rec._replace(rtt=samples[rec.k])
        for rec in read_trajectory_csv(os.path.join(plant_dir, "trajectory.csv"))
    ]
    packets = (read_packets_csv(os.path.join(plant_dir, "packets.csv"))
               + read_packets_csv(os.path.join(ctrl_dir, "packets.csv")))
    log = TrajectoryLog(
        T=cfg.plant.T, duration=cfg.duration, warmup_skip=cfg.warmup_skip,
        ticks=ticks, packets=packets, unstable=plant_meta["unstable"],
        meta={"srtt_final": ctrl_meta["srtt_final"], **plant_meta},
    )

    sent = plant_meta["state_packets_sent"] + ctrl_meta["control_packets_sent"]
    delivered = (ctrl_meta["state_packets_processed"] + ctrl_meta["state_packets_stale"]
                 + plant_meta["control_packets_accepted"] + plant_meta["control_packets_stale"])
    try:
        rss_value: float | None = rss(log).value
    except Exception:
        rss_value = None
    ticks_total = max(plant_meta["ticks_completed"], 1)
    summary = {
        "rss": rss_value,
        "bandwidthBps": bandwidth_bps(log, "forward"),
        "feedbackBandwidthBps": bandwidth_bps(log, "feedback"),
        "lossObserved": 1.0 - delivered / sent if sent else None,
        "unstable": log.unstable,
        "srttFinal": ctrl_meta["srtt_final"],
        "missedDeadlines": plant_meta["missed_deadlines"],
        "deadlineMissRate": plant_meta["missed_deadlines"] / ticks_total,
    }
    write_trajectory_csv(log, os.path.join(out_dir, "trajectory.csv"))
    write_summary_json(summary, os.path.join(out_dir, "summary.json"))
    return log, summary


def _free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _tail(path: str, lines: int = 20) -> str:
    try:
        with open(path, "r", encoding="utf-8", errors="replace") as fh:
            return "".join(fh.readlines()[-lines:])
    except OSError:
        return "<no output captured>"


def run_realtime_local(cfg: ExperimentConfig, profile: RealtimeProfile, out_dir: str,
                       python: str = sys.executable) -> tuple[TrajectoryLog, dict]:
    """Spawn relay, controller, and plant as separate processes on loopback; merge results.

    Start order matters: the relay and controller come up first (the controller
    primes the relay with hello datagrams), the plant starts last so its first
    state packet already has a full path to travel.
    """
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    cfg_path = os.path.join(out_dir, "config.ini")
    write_config(cfg, profile, cfg_path)

    plant_port, ctrl_port = _free_port(), _free_port()
    relay_plant_port, relay_ctrl_port = _free_port(), _free_port()
    relay_runtime = cfg.duration + _CONTROLLER_GRACE + 10.0

    def spawn(name: str, args: list[str]) -> tuple[subprocess.Popen, str]:
        log_path = os.path.join(out_dir, f"{name}.log")
        with open(log_path, "w", encoding="utf-8") as fh:
            proc = subprocess.Popen(
                [python, "-m", "npcsim", *args],
                stdout=fh, stderr=subprocess.STDOUT,
            )
        return proc, log_path

    relay, relay_log = spawn("relay", [
        "relay", "--config", cfg_path,
        "--listen", f"127.0.0.1:{relay_plant_port}",
        "--listen-controller", f"127.0.0.1:{relay_ctrl_port}",
        "--peer", f"127.0.0.1:{plant_port}",
        "--peer-controller", f"127.0.0.1:{ctrl_port}",
        "--duration", str(relay_runtime),
    ])
    controller, ctrl_log = spawn("controller", [
        "controller", "--config", cfg_path,
        "--listen", f"127.0.0.1:{ctrl_port}",
        "--peer", f"127.0.0.1:{relay_ctrl_port}",
        "--out", os.path.join(out_dir, "controller"),
    ])
    time.sleep(0.8)  # let relay and controller come up before ticks start
    plant, plant_log = spawn("plant", [
        "plant", "--config", cfg_path,
        "--listen", f"127.0.0.1:{plant_port}",
        "--peer", f"127.0.0.1:{relay_plant_port}",
        "--out", os.path.join(out_dir, "plant"),
    ])

    procs = {"plant": (plant, plant_log), "controller": (controller, ctrl_log),
             "relay": (relay, relay_log)}
    try:
        plant.wait(timeout=cfg.duration + 90.0)
        controller.wait(timeout=_CONTROLLER_GRACE + 30.0)
    except subprocess.TimeoutExpired as exc:
        for proc, _ in procs.values():
            proc.kill()
        raise RuntimeError(f"real-time run hung: {exc}") from exc
    finally:
        relay.terminate()
        try:
            relay.wait(timeout=10.0)
        except subprocess.TimeoutExpired:
            relay.kill()

    for name in ("plant", "controller"):
        proc, log_path = procs[name]
        if proc.returncode != 0:
            raise RuntimeError(
                f"real-time {name} exited with {proc.returncode}; last output:\n"
                + _tail(log_path)
            )
    return merge_realtime_outputs(cfg, out_dir)
