"""Scoring, bandwidth accounting, and parameter sweeps."""

import math
from dataclasses import replace

import pytest

from npcsim.domain import ConfigurationError
from npcsim.engine import ExperimentConfig, PacketRecord, TickRecord, TrajectoryLog
from npcsim.metrics import (
    SweepCell,
    apply_sweep_value,
    bandwidth_bps,
    observed_loss,
    rss,
    rss_or_inf,
    run_sweep,
    summarize,
    sweep_medians,
    write_sweep_csv,
)

T = 0.008


def synthetic_log(offsets: list[float], warmup_skip: float = 0.0) -> TrajectoryLog:
    """A log whose per-tick position gap (ideal minus actual) is given directly."""
    log = TrajectoryLog(T=T, duration=len(offsets) * T, warmup_skip=warmup_skip)
    for k, off in enumerate(offsets):
        x1 = 1.0 + 0.1 * k
        log.ticks.append(TickRecord(k, k * T, x1, 0.0, 0.0, x1 + off, 0.0, 0.0, None))
    return log


class TestRss:
    def test_identical_trajectories_score_zero(self):
        assert rss(synthetic_log([0.0] * 100)).value == 0.0

    def test_constant_offset_is_its_square(self):
        score = rss(synthetic_log([0.1] * 250))
        assert score.value == pytest.approx(0.01, rel=1e-12)
        assert score.samples_used == 250

    def test_offset_on_half_the_samples_halves_the_score(self):
        score = rss(synthetic_log([0.1] * 100 + [0.0] * 100))
        assert score.value == pytest.approx(0.005, rel=1e-12)

    def test_warmup_ticks_are_excluded(self):
        # big gaps early, zero after: skipping the warmup removes them all
        log = synthetic_log([5.0] * 125 + [0.0] * 125, warmup_skip=1.0)
        score = rss(log)
        assert score.value == 0.0
        assert score.samples_used == 125

    def test_boundary_tick_at_exactly_the_skip_is_scored(self):
        log = synthetic_log([1.0] * 250, warmup_skip=125 * T)
        assert rss(log).samples_used == 125

    def test_explicit_skip_overrides_the_logged_one(self):
        log = synthetic_log([0.1] * 200, warmup_skip=1.0)
        assert rss(log, warmup_skip=0.0).samples_used == 200

    def test_empty_scoring_window_is_an_error(self):
        log = synthetic_log([0.1] * 10, warmup_skip=1.0)
        with pytest.raises(ConfigurationError):
            rss(log)
        assert rss_or_inf(log) == math.inf

    def test_shifting_both_trajectories_changes_nothing(self):
        base = synthetic_log([0.1] * 50)
        shifted = TrajectoryLog(T=T, duration=base.duration, warmup_skip=0.0)
        for r in base.ticks:
            shifted.ticks.append(
                TickRecord(r.k, r.t, r.x1 + 3.7, r.x2, r.u, r.x1_ideal + 3.7,
                           r.x2_ideal, r.hold, r.rtt)
            )
        assert rss(shifted).value == pytest.approx(rss(base).value, rel=1e-12)

    def test_per_time_variant_divides_by_elapsed_time(self):
        log = synthetic_log([0.1] * 100)
        per_sample = rss(log).value
        per_time = rss(log, per_time=True).value
        assert per_time == pytest.approx(per_sample / T, rel=1e-12)


class TestBandwidth:
    def test_a_steady_packet_rate_times_size(self):
        # 125 packets of 200 bytes over one second of ticks
        log = TrajectoryLog(T=T, duration=1.0, warmup_skip=0.0)
        for k in range(125):
            log.ticks.append(TickRecord(k, k * T, 0, 0, 0, 0, 0, 0.0, None))
            log.packets.append(PacketRecord("forward", k + 1, k * T, k * T + 0.1, 200))
        assert bandwidth_bps(log, "forward") == pytest.approx(200_000.0, rel=1e-12)

    def test_directions_are_accounted_separately(self):
        log = TrajectoryLog(T=T, duration=1.0, warmup_skip=0.0)
        for k in range(125):
            log.ticks.append(TickRecord(k, k * T, 0, 0, 0, 0, 0, 0.0, None))
        log.packets.append(PacketRecord("forward", 1, 0.0, 0.1, 100))
        log.packets.append(PacketRecord("feedback", 1, 0.0, 0.1, 41))
        assert bandwidth_bps(log, "forward") == pytest.approx(800.0)
        assert bandwidth_bps(log, "feedback") == pytest.approx(328.0)

    def test_lost_packets_still_count_as_offered_load(self):
        log = TrajectoryLog(T=T, duration=1.0, warmup_skip=0.0)
        for k in range(125):
            log.ticks.append(TickRecord(k, k * T, 0, 0, 0, 0, 0, 0.0, None))
        log.packets.append(PacketRecord("forward", 1, 0.0, None, 100))
        assert bandwidth_bps(log, "forward") == pytest.approx(800.0)

    def test_unknown_direction_rejected(self):
        with pytest.raises(ConfigurationError):
            bandwidth_bps(synthetic_log([0.0]), "sideways")


class TestObservedLoss:
    def test_no_packets_means_no_rate(self):
        assert observed_loss(synthetic_log([0.0])) is None

    def test_fraction_of_drops(self):
        log = synthetic_log([0.0])
        for seq in range(8):
            arrival = None if seq < 2 else 0.5
            log.packets.append(PacketRecord("forward", seq + 1, 0.0, arrival, 50))
        assert observed_loss(log) == pytest.approx(0.25)


class TestSummarize:
    def test_summary_of_a_synthetic_log(self):
        log = synthetic_log([0.1] * 125)
        log.packets.append(PacketRecord("forward", 1, 0.0, 0.1, 100))
        log.packets.append(PacketRecord("feedback", 1, 0.0, None, 41))
        log.meta["srtt_final"] = 0.25
        out = summarize(log)
        assert out["rss"] == pytest.approx(0.01, rel=1e-12)
        assert out["samplesUsed"] == 125
        assert out["bandwidthBps"] == pytest.approx(800.0)
        assert out["feedbackBandwidthBps"] == pytest.approx(328.0)
        assert out["lossObserved"] == pytest.approx(0.5)
        assert out["unstable"] is False
        assert out["srttFinal"] == 0.25

    def test_unscorable_log_reports_null_rss(self):
        log = synthetic_log([0.1] * 10, warmup_skip=1.0)
        log.packets.append(PacketRecord("forward", 1, 0.0, 0.1, 100))
        out = summarize(log)
        assert out["rss"] is None
        assert out["samplesUsed"] == 0


class TestApplySweepValue:
    def test_base_delay_sets_both_legs_and_the_rtt_prior(self):
        cfg = apply_sweep_value(ExperimentConfig(), "baseDelay", 50.0)
        for ch in (cfg.forward, cfg.feedback):
            assert ch.delay.a0 == pytest.approx(0.050)
            assert ch.delay.dev == pytest.approx(0.040)
        assert cfg.nominal_rtt == pytest.approx(0.100)

    def test_base_delay_125_reproduces_the_defaults(self):
        base = ExperimentConfig()
        cfg = apply_sweep_value(base, "baseDelay", 125.0)
        assert cfg.forward.delay.a0 == base.forward.delay.a0 == 0.125
        assert cfg.forward.delay.dev == base.forward.delay.dev == 0.100
        assert cfg.nominal_rtt == base.nominal_rtt == 0.25

    def test_delay_margin_must_be_integral(self):
        assert apply_sweep_value(ExperimentConfig(), "delayMargin", 8).delay_margin == 8
        with pytest.raises(ConfigurationError):
            apply_sweep_value(ExperimentConfig(), "delayMargin", 2.5)

    def test_loss_prob_applies_to_both_directions(self):
        cfg = apply_sweep_value(ExperimentConfig(), "lossProb", 0.25)
        assert cfg.forward.loss_prob == 0.25
        assert cfg.feedback.loss_prob == 0.25

    def test_unknown_parameter_rejected(self):
        with pytest.raises(ConfigurationError):
            apply_sweep_value(ExperimentConfig(), "horizon", 50)


class TestRunSweep:
    def small_cfg(self) -> ExperimentConfig:
        return replace(ExperimentConfig(), duration=2.0, warmup_skip=1.0)

    def test_grid_shape_and_order(self):
        cells = run_sweep(self.small_cfg(), "delayMargin", [8, 16], repetitions=2)
        assert [(c.value, c.rep) for c in cells] == [(8, 0), (8, 1), (16, 0), (16, 1)]
        assert all(math.isfinite(c.rss) for c in cells)

    def test_sweep_is_reproducible(self):
        a = run_sweep(self.small_cfg(), "lossProb", [0.0, 0.2], repetitions=2)
        b = run_sweep(self.small_cfg(), "lossProb", [0.0, 0.2], repetitions=2)
        assert a == b

    def test_repetitions_differ_but_share_seeds_across_values(self):
        cells = run_sweep(self.small_cfg(), "delayMargin", [16], repetitions=3)
        scores = [c.rss for c in cells]
        assert len(set(scores)) == 3

    def test_zero_repetitions_rejected(self):
        with pytest.raises(ConfigurationError):
            run_sweep(self.small_cfg(), "delayMargin", [8], repetitions=0)


class TestSweepAggregation:
    def cells(self) -> list[SweepCell]:
        return [
            SweepCell(50.0, 0, 0.010, 1000.0, False),
            SweepCell(50.0, 1, 0.030, 1200.0, False),
            SweepCell(50.0, 2, 0.020, 1100.0, True),
            SweepCell(75.0, 0, 0.200, 2000.0, False),
            SweepCell(75.0, 1, 0.100, 2200.0, False),
            SweepCell(75.0, 2, 0.300, 2100.0, False),
        ]

    def test_medians_per_value_in_first_seen_order(self):
        rows = sweep_medians(self.cells())
        assert rows == [
            (50.0, 0.020, 1100.0, 1),
            (75.0, 0.200, 2100.0, 0),
        ]

    def test_csv_header_and_rows(self, tmp_path):
        path = tmp_path / "sweep_baseDelay.csv"
        write_sweep_csv(self.cells(), str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "value,rep,rss,bandwidth_bps,unstable"
        assert len(lines) == 1 + 6
        assert lines[3] == "50.0,2,0.02,1100.0,1"
