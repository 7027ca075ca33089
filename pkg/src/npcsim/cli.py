"""Command-line interface.

Subcommands: `offline` and `sweep` run simulated experiments and write CSV/JSON
outputs; `plant`, `controller`, and `relay` are the three real-time roles;
`realtime-local` orchestrates all three on loopback and merges their logs.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import RealtimeProfile, load_config, write_config
from .domain import ConfigurationError, derive_subseed
from .engine import ExperimentConfig, run_offline, write_run_outputs
from .metrics import (
    SWEEP_PARAMS,
    run_sweep,
    summarize,
    sweep_medians,
    write_sweep_csv,
)
from .realtime import run_controller, run_plant, run_realtime_local
from .relay import ImpairmentRelay, RelayConfig

Endpoint = tuple[str, int]


def parse_endpoint(text: str) -> Endpoint:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigurationError(f"endpoint must look like host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigurationError(f"invalid port in endpoint {text!r}") from None


def _load(config_path: str | None) -> tuple[ExperimentConfig, RealtimeProfile]:
    if config_path is None:
        return ExperimentConfig(), RealtimeProfile()
    return load_config(config_path)


def _print_summary(summary: dict) -> None:
    for key in sorted(summary):
        print(f"{key}: {summary[key]}")


def _cmd_offline(args: argparse.Namespace) -> int:
    cfg, _ = _load(args.config)
    if args.seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, master_seed=args.seed)
    if args.duration is not None:
        from dataclasses import replace
        cfg = replace(cfg, duration=args.duration)
    log = run_offline(cfg)
    summary = summarize(log)
    write_run_outputs(log, summary, args.out)
    _print_summary(summary)
    print(f"outputs: {args.out}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg, _ = _load(args.config)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"--values must be comma-separated numbers, got {args.values!r}")
    if not values:
        raise ConfigurationError("--values is empty")
    cells = run_sweep(cfg, args.param, values, repetitions=args.reps, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"sweep_{args.param}.csv")
    write_sweep_csv(cells, out_path)
    print(f"value median_rss median_bandwidth_bps unstable_runs")
    for value, med_rss, med_bw, unstable in sweep_medians(cells):
        print(f"{value:g} {med_rss:.6g} {med_bw:.6g} {unstable}")
    print(f"rows: {out_path}")
    return 0


def _cmd_plant(args: argparse.Namespace) -> int:
    cfg, _ = _load(args.config)
    log = run_plant(cfg, parse_endpoint(args.listen), parse_endpoint(args.peer), args.out)
    miss = log.meta["missed_deadlines"]
    print(f"plant done: {log.meta['ticks_completed']} ticks, {miss} missed deadlines,"
          f" unstable={log.unstable}")
    return 0


def _cmd_controller(args: argparse.Namespace) -> int:
    cfg, _ = _load(args.config)
    meta = run_controller(cfg, parse_endpoint(args.listen), parse_endpoint(args.peer), args.out)
    print(f"controller done: {meta['state_packets_processed']} packets,"
          f" srtt={meta['srtt_final']}")
    return 0


def _cmd_relay(args: argparse.Namespace) -> int:
    cfg, profile = _load(args.config)
    seed = args.seed
    if seed is None:
        seed = profile.seed
    if seed is None:
        seed = derive_subseed(cfg.master_seed, "realtime-relay")
    relay_cfg = RelayConfig(
        base_delay_s=(profile.base_delay_ms if args.base_delay_ms is None
                      else args.base_delay_ms) * 1e-3,
        deviation_s=(profile.deviation_ms if args.deviation_ms is None
                     else args.deviation_ms) * 1e-3,
        loss=profile.loss if args.loss is None else args.loss,
        capacity_bps=(profile.capacity_mbps if args.capacity_mbps is None
                      else args.capacity_mbps) * 1e6,
        seed=seed,
    )
    relay = ImpairmentRelay(
        relay_cfg,
        plant_listen=parse_endpoint(args.listen),
        controller_listen=parse_endpoint(args.listen_controller),
        plant_peer=parse_endpoint(args.peer) if args.peer else None,
        controller_peer=parse_endpoint(args.peer_controller) if args.peer_controller else None,
    )
    print(f"relay: plant side {relay.plant_address}, controller side {relay.controller_address}")
    relay.run(args.duration)
    stats = relay.stats
    for direction in ("forward", "feedback"):
        print(f"{direction}: received={stats.received[direction]}"
              f" dropped={stats.dropped[direction]} released={stats.released[direction]}")
    return 0


def _cmd_realtime_local(args: argparse.Namespace) -> int:
    cfg, profile = _load(args.config)
    if args.duration is not None:
        from dataclasses import replace
        cfg = replace(cfg, duration=args.duration)
    _log, summary = run_realtime_local(cfg, profile, args.out)
    _print_summary(summary)
    print(f"outputs: {args.out}")
    return 0


def _cmd_init_config(args: argparse.Namespace) -> int:
    write_config(ExperimentConfig(), RealtimeProfile(), args.out)
    print(f"wrote defaults to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="npcsim",
        description="Networked predictive control simulator: LQR loop over an impaired channel",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("offline", help="run one simulated experiment and write outputs")
    p.add_argument("--config", help="experiment INI file (defaults used when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override master_seed")
    p.add_argument("--duration", type=float, help="override duration (s)")
    p.set_defaults(func=_cmd_offline)

    p = sub.add_parser("sweep", help="run an offline sweep over one parameter")
    p.add_argument("--config", help="experiment INI file")
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--reps", type=int, default=5, help="repetitions per value")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plant", help="real-time plant role")
    p.add_argument("--config", help="experiment INI file")
    p.add_argument("--listen", required=True, help="local addr:port for control packets")
    p.add_argument("--peer", required=True, help="relay plant-side addr:port")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_plant)

    p = sub.add_parser("controller", help="real-time controller role")
    p.add_argument("--config", help="experiment INI file")
    p.add_argument("--listen", required=True, help="local addr:port for state packets")
    p.add_argument("--peer", required=True, help="relay controller-side addr:port")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_controller)

    p = sub.add_parser("relay", help="UDP impairment relay between plant and controller")
    p.add_argument("--config", help="experiment INI file (provides [realtime] defaults)")
    p.add_argument("--listen", required=True, help="plant-side addr:port")
    p.add_argument("--listen-controller", required=True, help="controller-side addr:port")
    p.add_argument("--peer", help="plant addr:port (learned from traffic when omitted)")
    p.add_argument("--peer-controller", help="controller addr:port (learned when omitted)")
    p.add_argument("--base-delay-ms", type=float, help="per-direction base delay")
    p.add_argument("--deviation-ms", type=float, help="per-direction worst-case wander")
    p.add_argument("--loss", type=float, help="per-direction loss probability")
    p.add_argument("--capacity-mbps", type=float, help="per-direction capacity")
    p.add_argument("--seed", type=int, help="impairment seed")
    p.add_argument("--duration", type=float, help="serve this long then exit (default: forever)")
    p.set_defaults(func=_cmd_relay)

    p = sub.add_parser("realtime-local",
                       help="run plant, controller and relay as local processes and merge logs")
    p.add_argument("--config", help="experiment INI file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--duration", type=float, help="override duration (s)")
    p.set_defaults(func=_cmd_realtime_local)

    p = sub.add_parser("init-config", help="write a config file populated with the defaults")
    p.add_argument("--out", required=True, help="path for the new INI file")
    p.set_defaults(func=_cmd_init_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
