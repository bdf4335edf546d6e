"""Event-camera ball interception: encoding, prediction, estimation, actuation and simulation."""

__version__ = "0.1.0"

from .actuation import RailSpec, build_table, catch_outcome, plan_move, select_command
from .estimator import ImpactEstimate, WlsState, accumulate, fit, push_observation
from .events import (
    Behi,
    Event,
    EventStream,
    EventVolume,
    SensorGeometry,
    behi_deserialize,
    behi_from_events,
    behi_resize,
    behi_serialize,
    behi_update,
    event_volume_from_events,
    representation_size_bits,
)
from .pipeline import PipelineConfig, run_campaign, run_episode, trigger_decision
from .predictor import FramePrediction, PredictorConfig, calibrate_noise_profile, predict
from .scene import (
    CameraModel,
    LaunchSpec,
    NoiseSpec,
    SceneConfig,
    ground_truth_labels,
    sample_launch,
    synthesize_events,
    trajectory_from_launch,
)
