"""Scoring and parameter sweeps over the offline engine.

The headline score is the mean squared gap between the networked run's
position and its ideal twin's, taken after the warmup window. Sweeps rerun the
experiment across one parameter axis with repetition sub-seeds derived from
the master seed; the same sub-seed is reused across values of one sweep so
value-to-value comparisons are paired rather than confounded by fresh noise.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple

from .domain import ConfigurationError, derive_subseed
from .engine import ExperimentConfig, TrajectoryLog, run_offline

SWEEP_PARAMS = ("baseDelay", "delayMargin", "lossProb")


@dataclass(frozen=True)
class RssScore:
    value: float
    samples_used: int


def rss(log: TrajectoryLog, warmup_skip: float | None = None, *,
        per_time: bool = False) -> RssScore:
    """Mean over post-warmup ticks of (x1_ideal - x1)^2, in m^2.

    per_time divides the same sum by elapsed scored time instead of the sample
    count (units m^2/s), which makes runs of different durations comparable.
    """
    skip = log.warmup_skip if warmup_skip is None else warmup_skip
    threshold = skip - 0.25 * log.T  # tolerate ulp noise at the boundary tick
    total = 0.0
    used = 0
    for rec in log.ticks:
        if rec.t < threshold:
            continue
        gap = rec.x1_ideal - rec.x1
        total += gap * gap
        used += 1
    if used == 0:
        raise ConfigurationError("no ticks remain after the warmup skip")
    denom = used * log.T if per_time else used
    return RssScore(total / denom, used)


def rss_or_inf(log: TrajectoryLog) -> float:
    """Score usable in comparisons even for runs that blew up before scoring began."""
    try:
        return rss(log).value
    except ConfigurationError:
        return math.inf


def bandwidth_bps(log: TrajectoryLog, direction: str) -> float:
    """Bits offered to the channel in one direction, per second of run."""
    if direction not in ("forward", "feedback"):
        raise ConfigurationError(f"unknown direction {direction!r}")
    bits = sum(p.size_bytes * 8 for p in log.packets if p.direction == direction)
    elapsed = len(log.ticks) * log.T if log.ticks else log.duration
    if elapsed <= 0.0:
        raise ConfigurationError("log covers no time")
    return bits / elapsed


def observed_loss(log: TrajectoryLog) -> float | None:
    """Fraction of sent packets (both directions) the channels dropped; None if nothing sent."""
    sent = len(log.packets)
    if sent == 0:
        return None
    lost = sum(1 for p in log.packets if p.arrival is None)
    return lost / sent


def summarize(log: TrajectoryLog) -> dict:
    """JSON-ready run summary."""
    try:
        score = rss(log)
        rss_value: float | None = score.value
        used = score.samples_used
    except ConfigurationError:
        rss_value, used = None, 0
    return {
        "rss": rss_value,
        "samplesUsed": used,
        "bandwidthBps": bandwidth_bps(log, "forward"),
        "feedbackBandwidthBps": bandwidth_bps(log, "feedback"),
        "lossObserved": observed_loss(log),
        "unstable": log.unstable,
        "srttFinal": log.meta.get("srtt_final"),
    }


def apply_sweep_value(cfg: ExperimentConfig, param: str, value: float) -> ExperimentConfig:
    """One point on a sweep axis, expressed as a full experiment config.

    baseDelay is the per-direction base in milliseconds (average RTT is twice
    it); deviation scales proportionally at 80% of the base, the default
    125 ms / 100 ms ratio, so the wander never pushes the delay negative at
    the low end of a sweep. The controller's RTT prior follows the base.
    """
    if param == "baseDelay":
        a0 = value * 1e-3
        dev = value * 0.8e-3
        def retune(ch):
            return replace(ch, delay=replace(ch.delay, a0=a0, dev=dev))
        return replace(cfg, forward=retune(cfg.forward), feedback=retune(cfg.feedback),
                       nominal_rtt=2.0 * value * 1e-3)
    if param == "delayMargin":
        margin = int(value)
        if margin != value:
            raise ConfigurationError(f"delay margin must be an integer, got {value}")
        return replace(cfg, delay_margin=margin)
    if param == "lossProb":
        return replace(cfg, forward=replace(cfg.forward, loss_prob=value),
                       feedback=replace(cfg.feedback, loss_prob=value))
    raise ConfigurationError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")


class SweepCell(NamedTuple):
    value: float
    rep: int
    rss: float
    bandwidth_bps: float
    unstable: bool


def _run_cell(args: tuple[float, int, ExperimentConfig]) -> SweepCell:
    value, rep, cfg = args
    log = run_offline(cfg)
    return SweepCell(value, rep, rss_or_inf(log), bandwidth_bps(log, "forward"), log.unstable)


def run_sweep(cfg: ExperimentConfig, param: str, values: Iterable[float],
              repetitions: int = 5, jobs: int = 1) -> list[SweepCell]:
    """Offline runs across one parameter axis; rows come back value-major, rep-minor."""
    if repetitions < 1:
        raise ConfigurationError(f"need at least one repetition, got {repetitions}")
    rep_seeds = [derive_subseed(cfg.master_seed, f"sweep-rep-{rep}")
                 for rep in range(repetitions)]
    tasks = []
    for value in values:
        tuned = apply_sweep_value(cfg, param, value)
        for rep, seed in enumerate(rep_seeds):
            tasks.append((value, rep, replace(tuned, master_seed=seed)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, tasks))
    return [_run_cell(task) for task in tasks]


def sweep_medians(cells: list[SweepCell]) -> list[tuple[float, float, float, int]]:
    """Per value: (value, median rss, median bandwidth, unstable count), in first-seen order."""
    order: list[float] = []
    groups: dict[float, list[SweepCell]] = {}
    for cell in cells:
        if cell.value not in groups:
            order.append(cell.value)
            groups[cell.value] = []
        groups[cell.value].append(cell)
    out = []
    for value in order:
        group = groups[value]
        out.append((
            value,
            statistics.median(c.rss for c in group),
            statistics.median(c.bandwidth_bps for c in group),
            sum(1 for c in group if c.unstable),
        ))
    return out


def write_sweep_csv(cells: list[SweepCell], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("value,rep,rss,bandwidth_bps,unstable\n")
        for c in cells:
            fh.write(f"{c.value!r},{c.rep},{c.rss!r},{c.bandwidth_bps!r},{int(c.unstable)}\n")
