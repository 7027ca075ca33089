"""UDP impairment relay and the three-process loopback run."""

import math
import socket
import time
from dataclasses import replace

import pytest

from npcsim.config import RealtimeProfile
from npcsim.engine import ExperimentConfig
from npcsim.realtime import merge_realtime_outputs, run_realtime_local
from npcsim.relay import ImpairmentRelay, RelayConfig


def udp_socket() -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(("127.0.0.1", 0))
    sock.settimeout(5.0)
    return sock


class TestRelayConfig:
    def test_directions_get_distinct_streams_from_one_seed(self):
        cfg = RelayConfig(seed=9, deviation_s=0.01, base_delay_s=0.05)
        fwd = cfg.channel("forward")
        fb = cfg.channel("feedback")
        assert fwd.seed != fb.seed
        assert fwd.delay.seed != fb.delay.seed
        assert fwd.delay.a0 == fb.delay.a0 == 0.05


class TestImpairmentRelay:
    def test_forwards_both_directions_with_the_configured_delay(self):
        plant, ctrl = udp_socket(), udp_socket()
        cfg = RelayConfig(base_delay_s=0.05, deviation_s=0.0, loss=0.0, capacity_bps=0.0)
        with ImpairmentRelay(
            cfg, ("127.0.0.1", 0), ("127.0.0.1", 0),
            plant_peer=plant.getsockname(), controller_peer=ctrl.getsockname(),
        ) as relay:
            t0 = time.monotonic()
            plant.sendto(b"state-sample", relay.plant_address)
            data, _ = ctrl.recvfrom(65535)
            elapsed = time.monotonic() - t0
            assert data == b"state-sample"
            assert 0.05 <= elapsed < 2.0

            ctrl.sendto(b"control-window", relay.controller_address)
            data, _ = plant.recvfrom(65535)
            assert data == b"control-window"
            # the relay thread increments its counters just after sendto, so
            # they can lag the datagram itself by a beat
            deadline = time.monotonic() + 2.0
            want = {"forward": 1, "feedback": 1}
            while relay.stats.released != want and time.monotonic() < deadline:
                time.sleep(0.005)
            assert relay.stats.received == want
            assert relay.stats.released == want
        plant.close()
        ctrl.close()

    def test_certain_loss_drops_and_counts(self):
        plant, ctrl = udp_socket(), udp_socket()
        ctrl.settimeout(0.5)
        cfg = RelayConfig(base_delay_s=0.01, loss=1.0, capacity_bps=0.0)
        with ImpairmentRelay(
            cfg, ("127.0.0.1", 0), ("127.0.0.1", 0),
            plant_peer=plant.getsockname(), controller_peer=ctrl.getsockname(),
        ) as relay:
            for _ in range(5):
                plant.sendto(b"x", relay.plant_address)
            with pytest.raises(socket.timeout):
                ctrl.recvfrom(65535)
            deadline = time.monotonic() + 2.0
            while relay.stats.dropped["feedback"] < 5 and time.monotonic() < deadline:
                time.sleep(0.01)
            assert relay.stats.dropped["feedback"] == 5
            assert relay.stats.released["feedback"] == 0
        plant.close()
        ctrl.close()

    def test_peers_are_learned_from_ingress_traffic(self):
        plant, ctrl = udp_socket(), udp_socket()
        cfg = RelayConfig(base_delay_s=0.01, deviation_s=0.0, loss=0.0, capacity_bps=0.0)
        with ImpairmentRelay(cfg, ("127.0.0.1", 0), ("127.0.0.1", 0)) as relay:
            # plant speaks first so its address is known by the time the
            # controller's packet is released
            plant.sendto(b"hello", relay.plant_address)
            time.sleep(0.1)
            ctrl.sendto(b"towards-plant", relay.controller_address)
            data, _ = plant.recvfrom(65535)
            assert data == b"towards-plant"
            plant.sendto(b"towards-controller", relay.plant_address)
            data, _ = ctrl.recvfrom(65535)
            assert data == b"towards-controller"
        plant.close()
        ctrl.close()


@pytest.fixture(scope="module")
def short_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("rt")
    cfg = replace(ExperimentConfig(), duration=6.0, warmup_skip=2.0,
                  nominal_rtt=0.04)
    profile = RealtimeProfile(base_delay_ms=20.0, deviation_ms=0.0,
                              loss=0.0, capacity_mbps=25.0)
    log, summary = run_realtime_local(cfg, profile, str(out))
    return cfg, out, log, summary


class TestRealtimeLocal:
    def test_run_completes_and_scores(self, short_run):
        cfg, _out, log, summary = short_run
        assert not log.unstable
        assert summary["rss"] is not None and math.isfinite(summary["rss"])
        assert summary["rss"] > 0.0
        assert len(log.ticks) == cfg.n_ticks()

    def test_wall_clock_pacing_holds_deadlines(self, short_run):
        _cfg, _out, _log, summary = short_run
        assert summary["deadlineMissRate"] < 0.05

    def test_rtt_samples_reach_the_merged_log(self, short_run):
        _cfg, _out, log, summary = short_run
        assert any(rec.rtt is not None for rec in log.ticks)
        assert summary["srttFinal"] == pytest.approx(0.04, abs=0.03)

    def test_output_bundle_layout(self, short_run):
        _cfg, out, _log, _summary = short_run
        for name in ("config.ini", "trajectory.csv", "summary.json",
                     "plant/trajectory.csv", "plant/packets.csv", "plant/plant.json",
                     "controller/packets.csv", "controller/controller.json",
                     "controller/rtt.csv"):
            assert (out / name).exists(), name

    def test_merge_is_reproducible_from_disk(self, short_run):
        cfg, out, log, summary = short_run
        log2, summary2 = merge_realtime_outputs(cfg, str(out))
        assert summary2 == summary
        assert log2.ticks == log.ticks
