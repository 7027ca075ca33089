"""INI-backed experiment configuration.

One key per config field, grouped into sections. Every key is optional and
falls back to the library default, so an empty file is a valid experiment.
Unknown sections or keys are rejected loudly: silently ignored typos in an
experiment file are how wrong results get published.

Sections and keys:

  [experiment] duration, warmup_skip, master_seed, horizon, delay_margin,
               pre_window, reuse_guard, use_old_control, use_estimator,
               use_predictor, use_integrator, nominal_rtt, initial_x1, initial_x2
  [plant]      sample_period, noise_sigma_pos, noise_sigma_vel,
               drift_amplitude, drift_freq
  [weights]    q1, q2, r
  [reference]  amplitude, frequency
  [forward]    base_delay, deviation, base_freq, sub_freqs, loss_prob,
               capacity_bps, seed           (controller -> plant channel)
  [feedback]   same keys                    (plant -> controller channel)
  [realtime]   base_delay_ms, deviation_ms, loss, capacity_mbps, seed
               (relay impairment profile; per direction, applied to both)

Blank seed keys mean "derive from master_seed".
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, replace

from .channel import ChannelConfig, DelayFnConfig
from .control import LqrWeights, Reference
from .domain import ConfigurationError
from .engine import ExperimentConfig
from .plant import PlantConfig


@dataclass(frozen=True)
class RealtimeProfile:
    """Impairment applied by the relay to each direction in real-time mode."""

    base_delay_ms: float = 125.0
    deviation_ms: float = 0.0
    loss: float = 0.0
    capacity_mbps: float = 25.0
    seed: int | None = None


_SCHEMA: dict[str, dict[str, str]] = {
    "experiment": {
        "duration": "float", "warmup_skip": "float", "master_seed": "int",
        "horizon": "int", "delay_margin": "int", "pre_window": "int",
        "reuse_guard": "int", "use_old_control": "bool", "use_estimator": "bool",
        "use_predictor": "bool", "use_integrator": "bool", "nominal_rtt": "float",
        "initial_x1": "float", "initial_x2": "float",
    },
    "plant": {
        "sample_period": "float", "noise_sigma_pos": "float",
        "noise_sigma_vel": "float", "drift_amplitude": "float", "drift_freq": "float",
    },
    "weights": {"q1": "float", "q2": "float", "r": "float"},
    "reference": {"amplitude": "float", "frequency": "float"},
    "forward": {
        "base_delay": "float", "deviation": "float", "base_freq": "float",
        "sub_freqs": "int", "loss_prob": "float", "capacity_bps": "float",
        "seed": "seed",
    },
    "feedback": {
        "base_delay": "float", "deviation": "float", "base_freq": "float",
        "sub_freqs": "int", "loss_prob": "float", "capacity_bps": "float",
        "seed": "seed",
    },
    "realtime": {
        "base_delay_ms": "float", "deviation_ms": "float", "loss": "float",
        "capacity_mbps": "float", "seed": "seed",
    },
}


def _check_known(cp: configparser.ConfigParser, path: str) -> None:
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigurationError(f"{path}: unknown section [{section}]")
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                raise ConfigurationError(f"{path}: unknown key '{key}' in [{section}]")


class _Section:
    """Typed reads with defaults over one (possibly absent) INI section."""

    def __init__(self, cp: configparser.ConfigParser, name: str, path: str):
        self._cp = cp
        self._name = name
        self._path = path

    def _raw(self, key: str) -> str | None:
        if not self._cp.has_option(self._name, key):
            return None
        return self._cp.get(self._name, key).strip()

    def _parse(self, key: str, raw: str, kind: str):
        try:
            if kind == "float":
                return float(raw)
            if kind in ("int", "seed"):
                return int(raw)
            if kind == "bool":
                lowered = raw.lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
        except ValueError:
            pass
        raise ConfigurationError(
            f"{self._path}: [{self._name}] {key} = {raw!r} is not a valid {kind}"
        )

    def get(self, key: str, default):
        kind = _SCHEMA[self._name][key]
        raw = self._raw(key)
        if raw is None or (raw == "" and kind == "seed"):
            return default
        return self._parse(key, raw, kind)


def _channel_from(section: _Section, default: ChannelConfig) -> ChannelConfig:
    delay = DelayFnConfig(
        a0=section.get("base_delay", default.delay.a0),
        dev=section.get("deviation", default.delay.dev),
        f0=section.get("base_freq", default.delay.f0),
        n=section.get("sub_freqs", default.delay.n),
        seed=section.get("seed", default.delay.seed),
    )
    return ChannelConfig(
        delay=delay,
        loss_prob=section.get("loss_prob", default.loss_prob),
        capacity_bps=section.get("capacity_bps", default.capacity_bps),
        seed=delay.seed,
    )


def load_config(path: str) -> tuple[ExperimentConfig, RealtimeProfile]:
    """Parse an experiment file; missing keys take library defaults."""
    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    _check_known(cp, path)

    base = ExperimentConfig()
    exp = _Section(cp, "experiment", path)
    plant_s = _Section(cp, "plant", path)
    weights_s = _Section(cp, "weights", path)
    ref_s = _Section(cp, "reference", path)
    rt = _Section(cp, "realtime", path)

    plant = PlantConfig(
        T=plant_s.get("sample_period", base.plant.T),
        noise_sigma_pos=plant_s.get("noise_sigma_pos", base.plant.noise_sigma_pos),
        noise_sigma_vel=plant_s.get("noise_sigma_vel", base.plant.noise_sigma_vel),
        drift_amplitude=plant_s.get("drift_amplitude", base.plant.drift_amplitude),
        drift_freq=plant_s.get("drift_freq", base.plant.drift_freq),
    )
    cfg = replace(
        base,
        duration=exp.get("duration", base.duration),
        warmup_skip=exp.get("warmup_skip", base.warmup_skip),
        master_seed=exp.get("master_seed", base.master_seed),
        horizon=exp.get("horizon", base.horizon),
        delay_margin=exp.get("delay_margin", base.delay_margin),
        pre_window=exp.get("pre_window", base.pre_window),
        reuse_guard=exp.get("reuse_guard", base.reuse_guard),
        use_old_control=exp.get("use_old_control", base.use_old_control),
        use_estimator=exp.get("use_estimator", base.use_estimator),
        use_predictor=exp.get("use_predictor", base.use_predictor),
        use_integrator=exp.get("use_integrator", base.use_integrator),
        nominal_rtt=exp.get("nominal_rtt", base.nominal_rtt),
        initial_x1=exp.get("initial_x1", base.initial_x1),
        initial_x2=exp.get("initial_x2", base.initial_x2),
        plant=plant,
        weights=LqrWeights(
            q1=weights_s.get("q1", base.weights.q1),
            q2=weights_s.get("q2", base.weights.q2),
            r=weights_s.get("r", base.weights.r),
        ),
        reference=Reference(
            amplitude=ref_s.get("amplitude", base.reference.amplitude),
            frequency=ref_s.get("frequency", base.reference.frequency),
        ),
        forward=_channel_from(_Section(cp, "forward", path), base.forward),
        feedback=_channel_from(_Section(cp, "feedback", path), base.feedback),
    )
    cfg.validate()

    profile_base = RealtimeProfile()
    profile = RealtimeProfile(
        base_delay_ms=rt.get("base_delay_ms", profile_base.base_delay_ms),
        deviation_ms=rt.get("deviation_ms", profile_base.deviation_ms),
        loss=rt.get("loss", profile_base.loss),
        capacity_mbps=rt.get("capacity_mbps", profile_base.capacity_mbps),
        seed=rt.get("seed", profile_base.seed),
    )
    return cfg, profile


def write_config(cfg: ExperimentConfig, profile: RealtimeProfile, path: str) -> None:
    """Serialize every field explicitly; load_config round-trips the result."""
    def seed_str(seed: int | None) -> str:
        return "" if seed is None else str(seed)

    def channel_lines(name: str, ch: ChannelConfig) -> str:
        return (
            f"[{name}]\n"
            f"base_delay = {ch.delay.a0!r}\n"
            f"deviation = {ch.delay.dev!r}\n"
            f"base_freq = {ch.delay.f0!r}\n"
            f"sub_freqs = {ch.delay.n}\n"
            f"loss_prob = {ch.loss_prob!r}\n"
            f"capacity_bps = {ch.capacity_bps!r}\n"
            f"seed = {seed_str(ch.seed)}\n"
        )

    text = (
        "[experiment]\n"
        f"duration = {cfg.duration!r}\n"
        f"warmup_skip = {cfg.warmup_skip!r}\n"
        f"master_seed = {cfg.master_seed}\n"
        f"horizon = {cfg.horizon}\n"
        f"delay_margin = {cfg.delay_margin}\n"
        f"pre_window = {cfg.pre_window}\n"
        f"reuse_guard = {cfg.reuse_guard}\n"
        f"use_old_control = {str(cfg.use_old_control).lower()}\n"
        f"use_estimator = {str(cfg.use_estimator).lower()}\n"
        f"use_predictor = {str(cfg.use_predictor).lower()}\n"
        f"use_integrator = {str(cfg.use_integrator).lower()}\n"
        f"nominal_rtt = {cfg.nominal_rtt!r}\n"
        f"initial_x1 = {cfg.initial_x1!r}\n"
        f"initial_x2 = {cfg.initial_x2!r}\n"
        "\n[plant]\n"
        f"sample_period = {cfg.plant.T!r}\n"
        f"noise_sigma_pos = {cfg.plant.noise_sigma_pos!r}\n"
        f"noise_sigma_vel = {cfg.plant.noise_sigma_vel!r}\n"
        f"drift_amplitude = {cfg.plant.drift_amplitude!r}\n"
        f"drift_freq = {cfg.plant.drift_freq!r}\n"
        "\n[weights]\n"
        f"q1 = {cfg.weights.q1!r}\n"
        f"q2 = {cfg.weights.q2!r}\n"
        f"r = {cfg.weights.r!r}\n"
        "\n[reference]\n"
        f"amplitude = {cfg.reference.amplitude!r}\n"
        f"frequency = {cfg.reference.frequency!r}\n"
        "\n" + channel_lines("forward", cfg.forward)
        + "\n" + channel_lines("feedback", cfg.feedback)
        + "\n[realtime]\n"
        f"base_delay_ms = {profile.base_delay_ms!r}\n"
        f"deviation_ms = {profile.deviation_ms!r}\n"
        f"loss = {profile.loss!r}\n"
        f"capacity_mbps = {profile.capacity_mbps!r}\n"
        f"seed = {seed_str(profile.seed)}\n"
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
