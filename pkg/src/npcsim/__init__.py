"""Networked predictive control simulator.

An LQR loop closed over an impaired network (variable delay, packet loss) with
active compensation: state prediction across the measured round trip, online
recursive least-squares parameter estimation, and redundant control windows
consumed by a plant-side compensator. Runs fully simulated (deterministic,
seeded) or in real time as three UDP processes around an impairment relay.
"""

from .channel import (
    ChannelConfig,
    DelayFnConfig,
    bidirectional_loss_rate,
    delay_at,
    normalize_c,
    transmit,
)
from .compensator import DelayCompensator
from .control import (
    BufferGapError,
    ControlBuffer,
    ControlUnit,
    ControlUnitConfig,
    EstimatorState,
    GainVector,
    LqrWeights,
    Reference,
    RttEstimate,
    control_law,
    estimator_update,
    initial_estimator,
    lqr_gain,
    predict,
    rtt_update,
)
from .domain import (
    ConfigurationError,
    ControlPacket,
    ControlSequence,
    DecodeError,
    PlantParams,
    PlantState,
    SeededRng,
    StatePacket,
    Tick,
    decode_control_packet,
    decode_state_packet,
    derive_stream,
    derive_subseed,
    encode_control_packet,
    encode_state_packet,
)
from .engine import ExperimentConfig, TrajectoryLog, run_ideal, run_offline
from .metrics import RssScore, bandwidth_bps, rss, run_sweep, summarize
from .plant import PlantConfig, measure, plant_step, true_params
from .realtime import run_controller, run_plant, run_realtime_local
from .relay import ImpairmentRelay, RelayConfig

__version__ = "0.1.0"
